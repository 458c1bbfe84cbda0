#pragma once

#include "sepnet/model.hpp"

namespace sepnet {

struct GradCheckReport {
  double max_rel_error = 0;
  std::string worst_param;
  int64_t worst_index = -1;
  int64_t checked = 0;
};

inline double rel_error(double a, double b) {
  // Near-zero gradients (e.g. a channel bias feeding a batch norm, whose true
  // gradient cancels) leave only finite-difference rounding noise, so treat
  // differences below the noise floor as a match instead of dividing noise by
  // a tiny denominator.
  if (std::abs(a - b) < 1e-9) return 0.0;
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Central finite differences against the analytic gradients of a full
// forward/backward pass. Double precision only; step is magnitude-scaled.
// Dropout is driven by a fixed seed so the perturbed losses see the same mask.
inline GradCheckReport grad_check(ModelGraph<double>& graph, const Tensor<double>& batch,
                                  const std::vector<int>& labels, Mode mode = Mode::Train,
                                  double h0 = 1e-5, uint64_t dropout_seed = 42) {
  // BN running stats must exist before an inference-mode pass.
  if (mode == Mode::Infer && !graph.bn_stats_populated)
    graph.forward(batch, &labels, Mode::Train, dropout_seed);

  auto loss_at = [&]() {
    return graph.forward(batch, &labels, mode, dropout_seed).loss;
  };

  loss_at();
  graph.backward();
  std::map<std::string, Tensor<double>> analytic;
  for (const auto& [name, p] : graph.params()) analytic.emplace(name, p.grad);

  // Stats drift during training-mode probes is irrelevant to the loss value,
  // but snapshot and restore them anyway so the check is side-effect free.
  const auto state_snapshot = graph.state();
  const bool stats_snapshot = graph.bn_stats_populated;

  GradCheckReport rep;
  for (auto& [name, p] : graph.params()) {
    if (p.frozen) continue;
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const double x = p.value[i];
      const double h = h0 * std::max(1.0, std::abs(x));
      p.value[i] = x + h;
      const double lp = loss_at();
      p.value[i] = x - h;
      const double lm = loss_at();
      p.value[i] = x;
      const double numeric = (lp - lm) / (2 * h);
      const double err = rel_error(numeric, analytic.at(name)[i]);
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_param = name;
        rep.worst_index = i;
      }
      ++rep.checked;
    }
  }
  graph.state() = state_snapshot;
  graph.bn_stats_populated = stats_snapshot;
  return rep;
}

}  // namespace sepnet
