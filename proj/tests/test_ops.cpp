#include <catch_amalgamated.hpp>

#include "sepnet/ops.hpp"

using namespace sepnet;

namespace {

Tensor<double> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double max_rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape == b.shape);
  double worst = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]) /
                                std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1e-8}));
  return worst;
}

}  // namespace

TEST_CASE("conv2d pointwise scaling") {
  Tensor<double> x({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor<double> k({1, 1, 1, 1}, {2.0});
  Tensor<double> b({1}, {0.0});
  auto y = conv2d_forward(x, k, b, 1, 0);
  REQUIRE(y.shape == Shape{1, 1, 3, 3});
  for (double v : y.data) CHECK(v == 2.0);
}

TEST_CASE("conv2d identity-diagonal kernel dot product") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> k({1, 1, 2, 2}, {1, 0, 0, 1});
  Tensor<double> b({1}, {0.0});
  auto y = conv2d_forward(x, k, b, 1, 0);
  REQUIRE(y.shape == Shape{1, 1, 1, 1});
  CHECK(y.data[0] == 5.0);
}

TEST_CASE("conv2d zero kernel zero bias") {
  Rng rng(7);
  auto x = random_tensor({2, 3, 5, 5}, rng);
  Tensor<double> k({4, 3, 3, 3});
  Tensor<double> b({4});
  auto y = conv2d_forward(x, k, b, 1, 1);
  for (double v : y.data) CHECK(v == 0.0);
}

TEST_CASE("conv2d argument errors") {
  Tensor<double> x({1, 2, 4, 4});
  Tensor<double> k({1, 3, 3, 3});
  Tensor<double> b({1});
  CHECK_THROWS_AS(conv2d_forward(x, k, b, 1, 0), ConfigError);
  Tensor<double> k2({1, 2, 3, 3});
  CHECK_THROWS_AS(conv2d_forward(x, k2, b, 0, 0), ConfigError);
  CHECK_THROWS_AS(conv2d_forward(x, k2, b, 1, -1), ConfigError);
}

TEST_CASE("optimized conv2d equals naive oracle on randomized sweep") {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const int64_t C = 1 + static_cast<int64_t>(rng.below(8));
    const int64_t O = 1 + static_cast<int64_t>(rng.below(8));
    const int64_t K = std::vector<int64_t>{1, 3, 5}[rng.below(3)];
    const int64_t stride = 1 + static_cast<int64_t>(rng.below(2));
    const int64_t pad = static_cast<int64_t>(rng.below(3));
    const int64_t H = K + static_cast<int64_t>(rng.below(static_cast<uint64_t>(17 - K)));
    const int64_t W = K + static_cast<int64_t>(rng.below(static_cast<uint64_t>(17 - K)));
    auto x = random_tensor({1 + static_cast<int64_t>(rng.below(2)), C, H, W}, rng);
    auto k = random_tensor({O, C, K, K}, rng);
    auto b = random_tensor({O}, rng);
    auto fast = conv2d_forward(x, k, b, stride, pad);
    auto ref = conv2d_naive(x, k, b, stride, pad);
    CHECK(max_rel_diff(fast, ref) < 1e-5);
  }
}

TEST_CASE("depthwise separable single channel equals plain conv") {
  Rng rng(11);
  auto x = random_tensor({1, 1, 6, 6}, rng);
  auto dk = random_tensor({1, 3, 3}, rng);
  Tensor<double> pw({1, 1}, {1.0});
  Tensor<double> zb({1});
  auto sep = depthwise_separable_forward(x, dk, pw, zb, zb, 1, 1);
  Tensor<double> full({1, 1, 3, 3}, dk.data);
  auto ref = conv2d_forward(x, full, zb, 1, 1);
  CHECK(max_rel_diff(sep, ref) < 1e-12);
}

TEST_CASE("depthwise separable identity kernels pass input through") {
  Rng rng(12);
  const int64_t C = 3;
  auto x = random_tensor({2, C, 5, 5}, rng);
  Tensor<double> dk({C, 3, 3});
  for (int64_t c = 0; c < C; ++c) dk.at(c, 1, 1) = 1.0;
  Tensor<double> pw({C, C});
  for (int64_t c = 0; c < C; ++c) pw.at(c, c) = 1.0;
  Tensor<double> zb({C});
  auto y = depthwise_separable_forward(x, dk, pw, zb, zb, 1, 1);
  CHECK(max_rel_diff(y, x) < 1e-12);
}

TEST_CASE("depthwise separable equals composed-kernel convolution") {
  Rng rng(13);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  auto dk = random_tensor({3, 3, 3}, rng);
  auto pw = random_tensor({4, 3}, rng);
  Tensor<double> zb3({3}), zb4({4});
  auto sep = depthwise_separable_forward(x, dk, pw, zb3, zb4, 1, 1);
  auto composed = compose_separable_kernel(dk, pw);
  auto ref = conv2d_forward(x, composed, zb4, 1, 1);
  CHECK(max_rel_diff(sep, ref) < 1e-5);
}

TEST_CASE("batchnorm constant channel maps to zero in training mode") {
  Tensor<double> x({2, 1, 2, 2}, std::vector<double>(8, 3.5));
  Tensor<double> gamma({1}, {1.0}), beta({1}, {0.0});
  Tensor<double> rm({1}), rv({1}, {1.0});
  auto y = batchnorm_forward(x, gamma, beta, rm, rv, false, Mode::Train, 1e-5, 0.9);
  for (double v : y.data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("batchnorm training normalizes per channel") {
  Rng rng(5);
  auto x = random_tensor({4, 3, 4, 4}, rng, -2, 5);
  Tensor<double> gamma({3}, {1, 1, 1}), beta({3});
  Tensor<double> rm({3}), rv({3}, {1, 1, 1});
  auto y = batchnorm_forward(x, gamma, beta, rm, rv, false, Mode::Train, 1e-5, 0.9);
  const int64_t hw = 16;
  for (int64_t c = 0; c < 3; ++c) {
    double mean = 0, var = 0;
    int64_t n = 0;
    for (int64_t b = 0; b < 4; ++b)
      for (int64_t p = 0; p < hw; ++p) {
        mean += y.data[static_cast<size_t>((b * 3 + c) * hw + p)];
        ++n;
      }
    mean /= static_cast<double>(n);
    for (int64_t b = 0; b < 4; ++b)
      for (int64_t p = 0; p < hw; ++p) {
        const double d = y.data[static_cast<size_t>((b * 3 + c) * hw + p)] - mean;
        var += d * d;
      }
    var /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm inference uses running stats") {
  Rng rng(6);
  auto x = random_tensor({2, 1, 2, 2}, rng);
  Tensor<double> gamma({1}, {1.0}), beta({1}, {0.0});
  Tensor<double> rm({1}, {2.0}), rv({1}, {4.0});
  auto y = batchnorm_forward(x, gamma, beta, rm, rv, true, Mode::Infer, 1e-5, 0.9);
  for (size_t i = 0; i < x.data.size(); ++i)
    CHECK(y.data[i] == Catch::Approx((x.data[i] - 2.0) / std::sqrt(4.0 + 1e-5)).epsilon(1e-12));
}

TEST_CASE("batchnorm inference without populated stats is a state error") {
  Tensor<double> x({1, 1, 2, 2});
  Tensor<double> gamma({1}, {1.0}), beta({1}, {0.0});
  Tensor<double> rm({1}), rv({1}, {1.0});
  CHECK_THROWS_AS(batchnorm_forward(x, gamma, beta, rm, rv, false, Mode::Infer, 1e-5, 0.9),
                  StateError);
}

TEST_CASE("relu sign cases") {
  Tensor<double> x({3}, {-1, 0, 2});
  auto y = relu_forward(x);
  CHECK(y.data == std::vector<double>{0, 0, 2});
  Tensor<double> neg({4}, {-3, -2, -1, -0.5});
  for (double v : relu_forward(neg).data) CHECK(v == 0.0);
  Tensor<double> pos({3}, {1, 2, 3});
  CHECK(relu_forward(pos).data == pos.data);
}

TEST_CASE("global average pool") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_average_pool(x).data[0] == 2.5);

  Tensor<double> c({1, 2, 3, 3});
  for (int64_t p = 0; p < 9; ++p) {
    c.data[static_cast<size_t>(p)] = 7.0;
    c.data[static_cast<size_t>(9 + p)] = -1.5;
  }
  auto y = global_average_pool(c);
  CHECK(y.at(0, 0) == Catch::Approx(7.0));
  CHECK(y.at(0, 1) == Catch::Approx(-1.5));

  Rng rng(3);
  auto r = random_tensor({1, 3, 5, 7}, rng);
  auto g = global_average_pool(r);
  for (int64_t ch = 0; ch < 3; ++ch) {
    double sum = 0;
    for (int64_t yy = 0; yy < 5; ++yy)
      for (int64_t xx = 0; xx < 7; ++xx) sum += r.at(0, ch, yy, xx);
    CHECK(std::abs(g.at(0, ch) - sum / 35.0) < 1e-6);
  }
}

TEST_CASE("dropout contract") {
  Rng rng(9);
  auto x = random_tensor({100}, rng, 0.5, 1.5);
  std::vector<uint8_t> mask;
  auto y0 = dropout_forward(x, 0.0, Mode::Train, 1, &mask);
  CHECK(y0.data == x.data);
  CHECK(std::count(mask.begin(), mask.end(), 1) == 100);

  auto yi = dropout_forward(x, 0.7, Mode::Infer, 1, &mask);
  CHECK(yi.data == x.data);

  CHECK_THROWS_AS(dropout_forward(x, 1.0, Mode::Train, 1), ConfigError);
}

TEST_CASE("dropout keeps about half at rate 0.5 and doubles survivors") {
  Rng rng(10);
  auto x = random_tensor({10000}, rng, 0.25, 1.0);
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<uint8_t> mask;
    auto y = dropout_forward(x, 0.5, Mode::Train, seed, &mask);
    const auto kept = std::count(mask.begin(), mask.end(), 1);
    CHECK(std::abs(static_cast<double>(kept) / 10000.0 - 0.5) < 0.02);
    for (size_t i = 0; i < mask.size(); ++i) {
      if (mask[i]) CHECK(y.data[i] == Catch::Approx(2.0 * x.data[i]).epsilon(1e-12));
      else CHECK(y.data[i] == 0.0);
    }
    // deterministic per seed
    auto y2 = dropout_forward(x, 0.5, Mode::Train, seed);
    CHECK(y2.data == y.data);
  }
}

TEST_CASE("dense layer basics and oracle") {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> eye({3, 3});
  for (int64_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor<double> zb({3});
  CHECK(dense_forward(x, eye, zb).data == x.data);

  Tensor<double> ones({1, 3}, {1, 1, 1});
  Tensor<double> zb1({1});
  auto sums = dense_forward(x, ones, zb1);
  CHECK(sums.data == std::vector<double>{6, 15});

  Rng rng(8);
  auto xr = random_tensor({3, 4}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto b = random_tensor({5}, rng);
  auto y = dense_forward(xr, w, b);
  for (int64_t n = 0; n < 3; ++n)
    for (int64_t u = 0; u < 5; ++u) {
      double acc = b[u];
      for (int64_t f = 0; f < 4; ++f) acc += xr.at(n, f) * w.at(u, f);
      CHECK(std::abs(y.at(n, u) - acc) < 1e-6);
    }

  Tensor<double> bad({2, 5});
  CHECK_THROWS_AS(dense_forward(bad, w, b), ConfigError);
}

TEST_CASE("softmax cross entropy analytic values") {
  Tensor<double> z({1, 4});
  auto r = softmax_cross_entropy(z, {2});
  for (int64_t k = 0; k < 4; ++k) CHECK(r.probabilities.at(0, k) == Catch::Approx(0.25));
  CHECK(r.loss == Catch::Approx(std::log(4.0)).epsilon(1e-9));

  Tensor<double> big({1, 4}, {0, 1000, 0, 0});
  auto rb = softmax_cross_entropy(big, {1});
  CHECK(rb.loss < 1e-9);
  CHECK(std::isfinite(rb.loss));

  Tensor<double> l({1, 3}, {1, 2, 3});
  auto rl = softmax_cross_entropy(l, {2});
  const double expect = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  CHECK(rl.loss == Catch::Approx(expect).epsilon(1e-9));
  CHECK(rl.loss == Catch::Approx(0.407606).margin(1e-6));

  CHECK_THROWS_AS(softmax_cross_entropy(l, {3}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(l, {-1}), ConfigError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(21);
  auto z = random_tensor({8, 4}, rng, -10, 10);
  auto p = softmax(z);
  for (int64_t n = 0; n < 8; ++n) {
    double sum = 0;
    for (int64_t k = 0; k < 4; ++k) sum += p.at(n, k);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}
