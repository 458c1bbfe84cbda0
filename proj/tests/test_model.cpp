#include <catch_amalgamated.hpp>

#include <filesystem>

#include "sepnet/trainer.hpp"
#include "sepnet/weights.hpp"

using namespace sepnet;

namespace {

ArchConfig toy_config() {
  ArchConfig cfg;
  cfg.in_channels = 1;
  cfg.in_height = cfg.in_width = 32;
  cfg.stem_channels = 4;
  cfg.blocks = {{8, 2}, {16, 2}};
  cfg.head_units = 32;
  cfg.dropout_rate = 0.5;
  return cfg;
}

Tensor<float> random_batch(int64_t n, const Shape& chw, uint64_t seed) {
  Tensor<float> t({n, chw[0], chw[1], chw[2]});
  Rng rng(seed);
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("default model maps 224x224 input to 4 logits") {
  ArchConfig cfg;
  auto g = build_model<float>(cfg);
  const Shape out = g.shape_check(1);
  CHECK(out == Shape{1, 4});
  CHECK(g.param("head.fc1.weight").value.shape == Shape{2500, 64});
}

TEST_CASE("toy config shape arithmetic") {
  // 32 -> stem/2 -> 16 -> block1/2 -> 8 -> block2/2 -> 4, GAP over 16 channels
  auto g = build_model<float>(toy_config());
  CHECK(g.shape_check(1) == Shape{1, 4});
  CHECK(g.shape_check(16) == Shape{16, 4});
  CHECK(g.param("head.fc1.weight").value.shape == Shape{32, 16});
}

TEST_CASE("invalid stride plans are config errors") {
  ArchConfig cfg = toy_config();
  cfg.blocks = {{8, 3}};
  CHECK_THROWS_AS(build_model<float>(cfg), ConfigError);
  cfg = toy_config();
  cfg.dropout_rate = 1.0;
  CHECK_THROWS_AS(build_model<float>(cfg), ConfigError);
  cfg = toy_config();
  cfg.head_units = 0;
  CHECK_THROWS_AS(build_model<float>(cfg), ConfigError);
}

TEST_CASE("forward_infer rows sum to one, batch independent, deterministic") {
  auto g = build_model<float>(toy_config());
  g.init_params(3);
  auto x1 = random_batch(1, g.input_shape, 17);
  // populate BN running stats with one training pass
  std::vector<int> lbl = {0};
  g.forward(x1, &lbl, Mode::Train, 99);

  Tensor<float> dup({2, 1, 32, 32});
  std::copy(x1.data.begin(), x1.data.end(), dup.data.begin());
  std::copy(x1.data.begin(), x1.data.end(), dup.data.begin() + x1.numel());
  auto r = g.forward_infer(dup);
  double sum0 = 0;
  for (int64_t k = 0; k < 4; ++k) {
    sum0 += r.probabilities.at(0, k);
    CHECK(r.probabilities.at(0, k) == r.probabilities.at(1, k));
  }
  CHECK(std::abs(sum0 - 1.0) < 1e-6);

  auto r2 = g.forward_infer(dup);
  CHECK(r2.probabilities.data == r.probabilities.data);

  Tensor<float> bad({1, 1, 16, 16});
  CHECK_THROWS_AS(g.forward_infer(bad), ConfigError);
}

TEST_CASE("separable parameter formula") {
  auto s = separable_param_counts(32, 64, 3);
  CHECK(s.separable == 2336);
  CHECK(s.full == 18432);
  CHECK(s.ratio == Catch::Approx(1.0 / 64 + 1.0 / 9).epsilon(1e-12));

  // K=1 boundary: no reduction for pointwise-only kernels
  auto s1 = separable_param_counts(16, 24, 1);
  CHECK(s1.separable == 16 + 16 * 24);
  CHECK(s1.full == 16 * 24);
  CHECK(s1.separable >= s1.full);
}

TEST_CASE("parameter_count matches formula per block") {
  auto g = build_model<float>(toy_config());
  auto [per_layer, total] = parameter_count(g);
  // block1: depthwise over 4 channels into 8
  const auto s = separable_param_counts(4, 8, 3);
  int64_t dw_w = 0, pw_w = 0;
  for (const auto& c : per_layer) {
    if (c.layer == "block1.dw") dw_w = c.weights;
    if (c.layer == "block1.pw") pw_w = c.weights;
  }
  CHECK(dw_w + pw_w == s.separable);
  // head fc weights: 32 units over 16 channels
  CHECK(g.param("head.fc1.weight").value.numel() == 32 * 16);
  CHECK(total > 0);
}

TEST_CASE("freeze policies") {
  auto g = build_model<float>(toy_config());
  g.init_params(1);
  CHECK(apply_freeze_policy(g, FreezePolicy::none()) == 0);

  const int64_t frozen = apply_freeze_policy(g, FreezePolicy::feature_extractor());
  CHECK(frozen > 0);
  int64_t head = 0, backbone_trainable = 0;
  for (const auto& [name, p] : g.params()) {
    if (name.starts_with("head.")) {
      CHECK_FALSE(p.frozen);
      ++head;
    } else if (!p.frozen) {
      ++backbone_trainable;
    }
  }
  CHECK(head > 0);
  CHECK(backbone_trainable == 0);
  CHECK(frozen + head == static_cast<int64_t>(g.params().size()));

  bool matched = false;
  apply_freeze_policy(g, FreezePolicy::prefix_list({"does.not.exist"}), &matched);
  CHECK_FALSE(matched);
}

TEST_CASE("frozen parameters survive training steps bit-identically") {
  auto g = build_model<float>(toy_config());
  g.init_params(5);
  apply_freeze_policy(g, FreezePolicy::feature_extractor());
  std::map<std::string, std::vector<float>> before;
  for (const auto& [n, p] : g.params())
    if (p.frozen) before[n] = p.value.data;

  TrainConfig tc;
  tc.seed = 5;
  AdamState<float> adam;
  auto x = random_batch(4, g.input_shape, 7);
  std::vector<int> labels = {0, 1, 2, 3};
  for (int step = 0; step < 10; ++step) {
    g.forward(x, &labels, Mode::Train, static_cast<uint64_t>(step));
    g.backward();
    adam_step(g, adam, tc);
  }
  for (const auto& [n, vals] : before) CHECK(g.param(n).value.data == vals);
}

TEST_CASE("weight file round trip is bit-exact") {
  auto g = build_model<float>(toy_config());
  g.init_params(9);
  const std::string path = tmp_path("sepnet_roundtrip.scw");
  save_weights(g, path);

  auto g2 = build_model<float>(toy_config());
  g2.init_params(1234);
  auto report = load_weights(g2, path, false);
  CHECK(report.missing.empty());
  CHECK(report.extra.empty());
  for (const auto& [n, p] : g.params()) CHECK(g2.param(n).value.data == p.value.data);
  for (const auto& [n, t] : g.state()) CHECK(g2.state().at(n).data == t.data);
  std::filesystem::remove(path);
}

TEST_CASE("truncated weight file is rejected without touching the model") {
  auto g = build_model<float>(toy_config());
  g.init_params(9);
  const std::string path = tmp_path("sepnet_trunc.scw");
  save_weights(g, path);
  std::string bytes = read_file(path);
  bytes.resize(bytes.size() / 2);
  write_file_atomic(path, bytes);

  auto g2 = build_model<float>(toy_config());
  g2.init_params(777);
  std::map<std::string, std::vector<float>> before;
  for (const auto& [n, p] : g2.params()) before[n] = p.value.data;
  CHECK_THROWS_AS(load_weights(g2, path, false), CorruptFileError);
  for (const auto& [n, vals] : before) CHECK(g2.param(n).value.data == vals);
  std::filesystem::remove(path);
}

TEST_CASE("corrupted payload fails the CRC") {
  auto g = build_model<float>(toy_config());
  g.init_params(9);
  const std::string path = tmp_path("sepnet_crc.scw");
  save_weights(g, path);
  std::string bytes = read_file(path);
  bytes[bytes.size() / 2] ^= 0x40;
  write_file_atomic(path, bytes);
  auto g2 = build_model<float>(toy_config());
  g2.init_params(1);
  CHECK_THROWS_AS(load_weights(g2, path, false), CorruptFileError);
  std::filesystem::remove(path);
}

TEST_CASE("partial load of a backbone-only file reports exactly the head names") {
  auto donor = build_model<float>(toy_config());
  donor.init_params(4);
  auto tensors = collect_tensors(donor);
  for (auto it = tensors.begin(); it != tensors.end();)
    it = it->first.starts_with("head.") ? tensors.erase(it) : std::next(it);
  const std::string path = tmp_path("sepnet_partial.scw");
  save_named_tensors(tensors, path);

  auto g2 = build_model<float>(toy_config());
  g2.init_params(2);
  auto report = load_weights(g2, path, true, /*init_seed=*/2);
  for (const auto& n : report.missing) CHECK(n.starts_with("head."));
  CHECK_FALSE(report.missing.empty());
  CHECK(report.extra.empty());
  // backbone matches the donor bit for bit
  for (const auto& [n, p] : donor.params())
    if (!n.starts_with("head.")) CHECK(g2.param(n).value.data == p.value.data);
  std::filesystem::remove(path);
}

TEST_CASE("shape conflict on a matching name is an error") {
  auto donor = build_model<float>(toy_config());
  donor.init_params(4);
  const std::string path = tmp_path("sepnet_shape.scw");
  save_weights(donor, path);

  ArchConfig cfg2 = toy_config();
  cfg2.head_units = 48;
  auto g2 = build_model<float>(cfg2);
  g2.init_params(2);
  CHECK_THROWS_AS(load_weights(g2, path, true), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("missing tensors with allow_partial=false is a completeness error") {
  auto g = build_model<float>(toy_config());
  g.init_params(4);
  // Write a file holding only the stem kernel using the public format helpers.
  ArchConfig tiny = toy_config();
  auto donor = build_model<float>(tiny);
  donor.init_params(4);
  const std::string path = tmp_path("sepnet_missing.scw");
  save_weights(donor, path);

  ArchConfig bigger = toy_config();
  bigger.blocks.push_back({16, 1});
  auto g2 = build_model<float>(bigger);
  g2.init_params(8);
  CHECK_THROWS_AS(load_weights(g2, path, false), ConfigError);

  // allow_partial initializes the missing block deterministically and lists it
  auto g3 = build_model<float>(bigger);
  g3.init_params(8);
  auto report = load_weights(g3, path, true, /*init_seed=*/8);
  bool block3_missing = false;
  for (const auto& n : report.missing) block3_missing |= n.starts_with("block3.");
  CHECK(block3_missing);
  std::filesystem::remove(path);
}

TEST_CASE("bad magic is a corrupt-file error") {
  const std::string path = tmp_path("sepnet_magic.scw");
  write_file_atomic(path, "NOPE this is not a weight file at all........");
  auto g = build_model<float>(toy_config());
  g.init_params(1);
  CHECK_THROWS_AS(load_weights(g, path, false), CorruptFileError);
  std::filesystem::remove(path);
}
