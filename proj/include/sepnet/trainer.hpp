#pragma once

#include "sepnet/metrics.hpp"
#include "sepnet/model.hpp"

namespace sepnet {

struct TrainConfig {
  int64_t epochs = 2000;
  int64_t batch_size = 16;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  uint64_t seed = 0;
  bool shuffle = true;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw ConfigError("ADAM betas must be in (0,1)");
    if (eps <= 0) throw ConfigError("ADAM eps must be > 0");
  }
};

template <typename T>
struct AdamState {
  struct Moments {
    Tensor<T> m, v;
  };
  std::map<std::string, Moments> moments;
  int64_t t = 0;
};

// One ADAM update with bias correction over every trainable parameter.
// Expects grads freshly populated by backward(); frozen parameters are
// skipped entirely.
template <typename T>
void adam_step(ModelGraph<T>& graph, AdamState<T>& state, const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : graph.params()) {
    if (p.frozen) continue;
    auto it = state.moments.find(name);
    if (it == state.moments.end()) {
      it = state.moments
               .emplace(name, typename AdamState<T>::Moments{Tensor<T>(p.value.shape),
                                                             Tensor<T>(p.value.shape)})
               .first;
    }
    auto& mom = it->second;
    for (size_t i = 0; i < p.value.data.size(); ++i) {
      const double g = static_cast<double>(p.grad.data[i]);
      double m = cfg.beta1 * static_cast<double>(mom.m.data[i]) + (1 - cfg.beta1) * g;
      double v = cfg.beta2 * static_cast<double>(mom.v.data[i]) + (1 - cfg.beta2) * g * g;
      mom.m.data[i] = static_cast<T>(m);
      mom.v.data[i] = static_cast<T>(v);
      const double update = cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      p.value.data[i] = static_cast<T>(static_cast<double>(p.value.data[i]) - update);
    }
  }
}

template <typename T>
struct Batch {
  Tensor<T> images;  // N x C x H x W
  std::vector<int> labels;
};

template <typename T>
struct Dataset {
  std::vector<Tensor<T>> images;  // each C x H x W
  std::vector<int> labels;
  size_t size() const { return images.size(); }
};

// Seeded per-epoch batching: a fresh permutation is drawn from (seed, epoch);
// the final batch may be short.
template <typename T>
std::vector<Batch<T>> make_batches(const Dataset<T>& ds, int64_t batch_size, uint64_t seed,
                                   int64_t epoch_index, bool shuffle) {
  if (ds.size() == 0) throw ConfigError("cannot batch an empty dataset");
  std::vector<size_t> order(ds.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (shuffle) {
    Rng rng = Rng::fork(seed, 0xb47c0000ULL + static_cast<uint64_t>(epoch_index));
    rng.shuffle(order.begin(), order.end());
  }
  std::vector<Batch<T>> batches;
  const Shape& s = ds.images[0].shape;  // C,H,W
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t n = std::min(static_cast<size_t>(batch_size), order.size() - start);
    Batch<T> b;
    b.images = Tensor<T>({static_cast<int64_t>(n), s[0], s[1], s[2]});
    const size_t per = static_cast<size_t>(shape_numel(s));
    for (size_t i = 0; i < n; ++i) {
      const auto& img = ds.images[order[start + i]];
      std::copy(img.data.begin(), img.data.end(), b.images.data.begin() + static_cast<std::ptrdiff_t>(i * per));
      b.labels.push_back(ds.labels[order[start + i]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

template <typename T>
int argmax_row(const Tensor<T>& probs, int64_t row) {
  int best = 0;
  for (int64_t k = 1; k < probs.dim(1); ++k)
    if (probs.at(row, k) > probs.at(row, best)) best = static_cast<int>(k);
  return best;
}

struct EpochLog {
  int64_t epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double test_loss = 0, test_accuracy = 0;
};

template <typename T>
struct EvalResult {
  double loss = 0;
  ConfusionMatrix confusion;
};

// One optimization pass over the given batches (order is the caller's seeded
// order). Returns mean per-sample loss and accuracy.
template <typename T>
std::pair<double, double> train_epoch(ModelGraph<T>& graph, const std::vector<Batch<T>>& batches,
                                      AdamState<T>& state, const TrainConfig& cfg,
                                      int64_t epoch_index) {
  if (batches.empty()) throw ConfigError("train_epoch called with no batches");
  double loss_sum = 0;
  int64_t correct = 0, total = 0;
  uint64_t batch_idx = 0;
  for (const auto& b : batches) {
    const uint64_t dropout_seed =
        splitmix64(cfg.seed ^ splitmix64(0xd120u + static_cast<uint64_t>(epoch_index))) ^
        splitmix64(batch_idx++);
    auto fr = graph.forward(b.images, &b.labels, Mode::Train, dropout_seed);
    graph.backward();
    adam_step(graph, state, cfg);
    const int64_t n = b.images.dim(0);
    loss_sum += fr.loss * static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      if (argmax_row(fr.probabilities, i) == b.labels[static_cast<size_t>(i)]) ++correct;
    }
    total += n;
  }
  return {loss_sum / static_cast<double>(total),
          static_cast<double>(correct) / static_cast<double>(total)};
}

// Inference-mode pass: no dropout, BN running stats, no parameter or stat
// mutation. Argmax ties break toward the lowest class index.
template <typename T>
EvalResult<T> evaluate(ModelGraph<T>& graph, const std::vector<Batch<T>>& batches) {
  EvalResult<T> res;
  res.confusion = ConfusionMatrix(static_cast<int>(graph.num_classes));
  double loss_sum = 0;
  int64_t total = 0;
  for (const auto& b : batches) {
    auto fr = graph.forward(b.images, &b.labels, Mode::Infer, 0);
    const int64_t n = b.images.dim(0);
    loss_sum += fr.loss * static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i)
      res.confusion.add(argmax_row(fr.probabilities, i), b.labels[static_cast<size_t>(i)]);
    total += n;
  }
  res.loss = total ? loss_sum / static_cast<double>(total) : 0;
  return res;
}

}  // namespace sepnet
