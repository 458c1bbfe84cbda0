#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sepnet/ops.hpp"

namespace sepnet {

enum class LayerKind {
  Conv2d,
  DepthwiseConv,
  Pointwise,
  BatchNorm,
  Relu,
  GlobalAvgPool,
  Dense,
  Dropout,
  SoftmaxXent,
};

struct LayerHyper {
  int64_t kernel = 0;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t units = 0;
  double dropout_rate = 0.5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
};

struct LayerNode {
  LayerKind kind;
  std::string name;
  LayerHyper hyper;
  std::vector<std::string> params;  // parameter names owned by this layer
};

template <typename T>
struct ParamTensor {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
};

struct ArchConfig {
  int64_t in_channels = 1;
  int64_t in_height = 224;
  int64_t in_width = 224;
  int64_t num_classes = 4;
  int64_t stem_channels = 8;
  // (out_channels, stride) per separable block
  std::vector<std::pair<int64_t, int64_t>> blocks = {{16, 2}, {32, 2}, {64, 2}, {64, 1}};
  int64_t head_units = 2500;
  double dropout_rate = 0.5;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;
};

struct FreezePolicy {
  enum class Mode { None, FeatureExtractor, PrefixList };
  Mode mode = Mode::None;
  std::vector<std::string> prefixes;

  static FreezePolicy none() { return {}; }
  static FreezePolicy feature_extractor() { return {Mode::FeatureExtractor, {}}; }
  static FreezePolicy prefix_list(std::vector<std::string> p) {
    return {Mode::PrefixList, std::move(p)};
  }
};

template <typename T>
struct LayerTape {
  Tensor<T> input;
  BatchNormCache<T> bn;
  std::vector<uint8_t> dropout_mask;
  Tensor<T> probabilities;  // softmax layer only
};

template <typename T>
struct ForwardResult {
  double loss = 0;
  Tensor<T> probabilities;
};

// Ordered layer stack with a named parameter registry. Forward in training
// mode records a per-layer tape consumed by backward().
template <typename T>
class ModelGraph {
 public:
  std::vector<LayerNode> layers;
  Shape input_shape;  // C, H, W
  int64_t num_classes = 0;

  ParamTensor<T>& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }
  const ParamTensor<T>& param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw StateError("unknown parameter: " + name);
    return it->second;
  }
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }
  std::map<std::string, ParamTensor<T>>& params() { return params_; }
  const std::map<std::string, ParamTensor<T>>& params() const { return params_; }

  // BN running statistics: persisted with the weights, never optimized.
  std::map<std::string, Tensor<T>>& state() { return state_; }
  const std::map<std::string, Tensor<T>>& state() const { return state_; }
  bool bn_stats_populated = false;

  void add_param(const std::string& name, Shape shape) {
    if (params_.count(name)) throw StateError("duplicate parameter name: " + name);
    ParamTensor<T> p;
    p.name = name;
    p.value = Tensor<T>(shape);
    p.grad = Tensor<T>(shape);
    params_.emplace(name, std::move(p));
  }

  void add_state(const std::string& name, Shape shape, T fill) {
    state_.emplace(name, Tensor<T>(std::move(shape), fill));
  }

  // Fan-in scaled uniform init for weights, zeros for biases, identity for BN.
  void init_params(uint64_t seed) {
    uint64_t stream = 0;
    for (auto& [name, p] : params_) init_param(name, p, seed, stream++);
    for (auto& [name, t] : state_)
      t.fill(name.ends_with("running_var") ? T(1) : T(0));
    bn_stats_populated = false;
  }

  void init_param_by_name(const std::string& name, uint64_t seed) {
    // Stream index = position in the ordered registry, so a partial re-init
    // matches what a full init would have produced for that tensor.
    uint64_t stream = 0;
    for (auto& [n, p] : params_) {
      if (n == name) {
        init_param(n, p, seed, stream);
        return;
      }
      ++stream;
    }
    throw StateError("unknown parameter: " + name);
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& [n, p] : params_)
      if (!p.frozen) out.push_back(n);
    return out;
  }

  void zero_grads() {
    for (auto& [n, p] : params_) p.grad.fill(T(0));
  }

  // Computes every layer's output shape from the declared input shape,
  // throwing on any mismatch. Returns the logits shape.
  Shape shape_check(int64_t batch) const {
    Shape cur = {batch, input_shape[0], input_shape[1], input_shape[2]};
    for (const auto& l : layers) cur = layer_out_shape(l, cur);
    return cur;
  }

  ForwardResult<T> forward(const Tensor<T>& batch, const std::vector<int>* labels,
                           Mode mode, uint64_t dropout_seed) {
    if (batch.rank() != 4 || batch.dim(1) != input_shape[0] ||
        batch.dim(2) != input_shape[1] || batch.dim(3) != input_shape[2])
      throw ConfigError("batch shape " + shape_str(batch.shape) +
                        " does not match model input " + shape_str(input_shape));
    tape_.clear();
    tape_mode_ = mode;
    tape_labels_.clear();
    if (labels) tape_labels_ = *labels;
    Tensor<T> cur = batch;
    ForwardResult<T> res;
    uint64_t dropout_stream = 0;
    for (const auto& l : layers) {
      LayerTape<T> t;
      t.input = cur;
      switch (l.kind) {
        case LayerKind::Conv2d:
          cur = conv2d_forward(cur, param(l.params[0]).value, param(l.params[1]).value,
                               l.hyper.stride, l.hyper.padding);
          break;
        case LayerKind::DepthwiseConv:
          cur = depthwise_forward(cur, param(l.params[0]).value, param(l.params[1]).value,
                                  l.hyper.stride, l.hyper.padding);
          break;
        case LayerKind::Pointwise:
          cur = pointwise_forward(cur, param(l.params[0]).value, param(l.params[1]).value);
          break;
        case LayerKind::BatchNorm:
          cur = batchnorm_forward(cur, param(l.params[0]).value, param(l.params[1]).value,
                                  state_.at(l.name + ".running_mean"),
                                  state_.at(l.name + ".running_var"), bn_stats_populated,
                                  mode, l.hyper.bn_eps, l.hyper.bn_momentum, &t.bn);
          break;
        case LayerKind::Relu:
          cur = relu_forward(cur);
          break;
        case LayerKind::GlobalAvgPool:
          cur = global_average_pool(cur);
          break;
        case LayerKind::Dense:
          cur = dense_forward(cur, param(l.params[0]).value, param(l.params[1]).value);
          break;
        case LayerKind::Dropout:
          cur = dropout_forward(cur, l.hyper.dropout_rate, mode,
                                splitmix64(dropout_seed ^ splitmix64(dropout_stream++)),
                                &t.dropout_mask);
          break;
        case LayerKind::SoftmaxXent:
          if (labels) {
            auto sx = softmax_cross_entropy(cur, *labels);
            res.loss = sx.loss;
            cur = sx.probabilities;
          } else {
            cur = softmax(cur);
          }
          t.probabilities = cur;
          break;
      }
      tape_.push_back(std::move(t));
    }
    if (mode == Mode::Train) bn_stats_populated = true;
    res.probabilities = cur;
    has_tape_ = labels != nullptr;
    return res;
  }

  ForwardResult<T> forward_infer(const Tensor<T>& batch) {
    return forward(batch, nullptr, Mode::Infer, 0);
  }

  // Reverse pass over the recorded tape. Grads of frozen parameters are left
  // at zero. Returns the input gradient.
  Tensor<T> backward() {
    if (!has_tape_)
      throw StateError("backward called without a preceding labeled forward pass");
    zero_grads();
    Tensor<T> grad;  // gradient w.r.t. current layer output
    for (size_t li = layers.size(); li-- > 0;) {
      const auto& l = layers[li];
      const auto& t = tape_[li];
      switch (l.kind) {
        case LayerKind::SoftmaxXent:
          grad = softmax_cross_entropy_backward(t.probabilities, tape_labels_);
          break;
        case LayerKind::Conv2d: {
          Tensor<T> gi;
          conv2d_backward(t.input, param(l.params[0]).value, l.hyper.stride,
                          l.hyper.padding, grad, &gi, grad_slot(l.params[0]),
                          grad_slot(l.params[1]));
          grad = std::move(gi);
          break;
        }
        case LayerKind::DepthwiseConv: {
          Tensor<T> gi;
          depthwise_backward(t.input, param(l.params[0]).value, l.hyper.stride,
                             l.hyper.padding, grad, &gi, grad_slot(l.params[0]),
                             grad_slot(l.params[1]));
          grad = std::move(gi);
          break;
        }
        case LayerKind::Pointwise: {
          Tensor<T> gi;
          pointwise_backward(t.input, param(l.params[0]).value, grad, &gi,
                             grad_slot(l.params[0]), grad_slot(l.params[1]));
          grad = std::move(gi);
          break;
        }
        case LayerKind::BatchNorm: {
          Tensor<T> gi;
          batchnorm_backward(t.bn, param(l.params[0]).value, grad, &gi,
                             grad_slot(l.params[0]), grad_slot(l.params[1]));
          grad = std::move(gi);
          break;
        }
        case LayerKind::Relu:
          grad = relu_backward(t.input, grad);
          break;
        case LayerKind::GlobalAvgPool:
          grad = global_average_pool_backward(t.input.shape, grad);
          break;
        case LayerKind::Dense: {
          Tensor<T> gi;
          dense_backward(t.input, param(l.params[0]).value, grad, &gi,
                         grad_slot(l.params[0]), grad_slot(l.params[1]));
          grad = std::move(gi);
          break;
        }
        case LayerKind::Dropout:
          if (tape_mode_ == Mode::Train && l.hyper.dropout_rate > 0)
            grad = dropout_backward(t.dropout_mask, l.hyper.dropout_rate, grad);
          break;
      }
    }
    has_tape_ = false;
    return grad;
  }

 private:
  std::map<std::string, ParamTensor<T>> params_;
  std::map<std::string, Tensor<T>> state_;
  std::vector<LayerTape<T>> tape_;
  std::vector<int> tape_labels_;
  Mode tape_mode_ = Mode::Infer;
  bool has_tape_ = false;

  Tensor<T>* grad_slot(const std::string& name) {
    auto& p = param(name);
    return p.frozen ? nullptr : &grad_scratch(p);
  }
  Tensor<T>& grad_scratch(ParamTensor<T>& p) { return p.grad; }

  void init_param(const std::string& name, ParamTensor<T>& p, uint64_t seed,
                  uint64_t stream) {
    Rng rng = Rng::fork(seed, stream);
    if (name.ends_with(".gamma")) {
      p.value.fill(T(1));
    } else if (name.ends_with(".beta") || name.ends_with(".bias")) {
      p.value.fill(T(0));
    } else {
      int64_t fan_in = 1;
      for (size_t i = 1; i < p.value.shape.size(); ++i) fan_in *= p.value.shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (T& v : p.value.data) v = static_cast<T>(rng.uniform(-bound, bound));
    }
    p.grad.fill(T(0));
  }

  static Shape layer_out_shape(const LayerNode& l, const Shape& in) {
    switch (l.kind) {
      case LayerKind::Conv2d:
      case LayerKind::DepthwiseConv: {
        const int64_t ho = conv_out_dim(in[2], l.hyper.kernel, l.hyper.stride, l.hyper.padding);
        const int64_t wo = conv_out_dim(in[3], l.hyper.kernel, l.hyper.stride, l.hyper.padding);
        if (ho < 1 || wo < 1)
          throw ConfigError("layer " + l.name + " reduces spatial size below 1x1");
        return {in[0], l.hyper.units > 0 ? l.hyper.units : in[1], ho, wo};
      }
      case LayerKind::Pointwise:
        return {in[0], l.hyper.units, in[2], in[3]};
      case LayerKind::GlobalAvgPool:
        if (in.size() != 4)
          throw ConfigError("global average pool needs rank-4 input at layer " + l.name);
        return {in[0], in[1]};
      case LayerKind::Dense:
        return {in[0], l.hyper.units};
      default:
        return in;
    }
  }
};

// Head parameters are exactly the ones left trainable by feature-extractor
// freezing.
inline bool is_head_param(const std::string& name) { return name.starts_with("head."); }

template <typename T>
int64_t apply_freeze_policy(ModelGraph<T>& graph, const FreezePolicy& policy,
                            bool* matched_anything = nullptr) {
  int64_t frozen = 0;
  bool matched = false;
  for (auto& [name, p] : graph.params()) {
    bool f = false;
    switch (policy.mode) {
      case FreezePolicy::Mode::None:
        break;
      case FreezePolicy::Mode::FeatureExtractor:
        f = !is_head_param(name);
        break;
      case FreezePolicy::Mode::PrefixList:
        for (const auto& pre : policy.prefixes)
          if (name.starts_with(pre)) {
            f = true;
            break;
          }
        break;
    }
    p.frozen = f;
    if (f) {
      ++frozen;
      matched = true;
    }
  }
  if (matched_anything) *matched_anything = matched;
  return frozen;
}

// Backbone: stem 3x3 stride-2 conv, then per block depthwise 3x3 -> BN ->
// ReLU -> pointwise 1x1 -> BN -> ReLU. Head: GAP -> dense(head_units) -> BN
// -> dropout -> dense(num_classes) -> softmax.
template <typename T>
ModelGraph<T> build_model(const ArchConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (cfg.head_units < 1) throw ConfigError("head_units must be >= 1");
  if (cfg.dropout_rate < 0 || cfg.dropout_rate >= 1)
    throw ConfigError("dropout_rate must be in [0,1)");
  for (const auto& [oc, s] : cfg.blocks)
    if (s != 1 && s != 2) throw ConfigError("block stride must be 1 or 2");

  ModelGraph<T> g;
  g.input_shape = {cfg.in_channels, cfg.in_height, cfg.in_width};
  g.num_classes = cfg.num_classes;

  auto add_bn = [&](const std::string& name, int64_t channels) {
    LayerNode l{LayerKind::BatchNorm, name, {}, {name + ".gamma", name + ".beta"}};
    l.hyper.bn_eps = cfg.bn_eps;
    l.hyper.bn_momentum = cfg.bn_momentum;
    g.layers.push_back(l);
    g.add_param(name + ".gamma", {channels});
    g.add_param(name + ".beta", {channels});
    g.add_state(name + ".running_mean", {channels}, T(0));
    g.add_state(name + ".running_var", {channels}, T(1));
  };
  auto add_relu = [&](const std::string& name) {
    g.layers.push_back({LayerKind::Relu, name, {}, {}});
  };

  {
    LayerNode stem{LayerKind::Conv2d, "stem", {}, {"stem.kernel", "stem.bias"}};
    stem.hyper.kernel = 3;
    stem.hyper.stride = 2;
    stem.hyper.padding = 1;
    stem.hyper.units = cfg.stem_channels;
    g.layers.push_back(stem);
    g.add_param("stem.kernel", {cfg.stem_channels, cfg.in_channels, 3, 3});
    g.add_param("stem.bias", {cfg.stem_channels});
  }
  add_bn("stem.bn", cfg.stem_channels);
  add_relu("stem.relu");

  int64_t channels = cfg.stem_channels;
  for (size_t bi = 0; bi < cfg.blocks.size(); ++bi) {
    const auto [oc, stride] = cfg.blocks[bi];
    const std::string base = "block" + std::to_string(bi + 1);
    LayerNode dw{LayerKind::DepthwiseConv, base + ".dw", {},
                 {base + ".dw.kernel", base + ".dw.bias"}};
    dw.hyper.kernel = 3;
    dw.hyper.stride = stride;
    dw.hyper.padding = 1;
    g.layers.push_back(dw);
    g.add_param(base + ".dw.kernel", {channels, 3, 3});
    g.add_param(base + ".dw.bias", {channels});
    add_bn(base + ".bn1", channels);
    add_relu(base + ".relu1");

    LayerNode pw{LayerKind::Pointwise, base + ".pw", {},
                 {base + ".pw.weight", base + ".pw.bias"}};
    pw.hyper.units = oc;
    g.layers.push_back(pw);
    g.add_param(base + ".pw.weight", {oc, channels});
    g.add_param(base + ".pw.bias", {oc});
    add_bn(base + ".bn2", oc);
    add_relu(base + ".relu2");
    channels = oc;
  }

  g.layers.push_back({LayerKind::GlobalAvgPool, "gap", {}, {}});

  {
    LayerNode fc1{LayerKind::Dense, "head.fc1", {}, {"head.fc1.weight", "head.fc1.bias"}};
    fc1.hyper.units = cfg.head_units;
    g.layers.push_back(fc1);
    g.add_param("head.fc1.weight", {cfg.head_units, channels});
    g.add_param("head.fc1.bias", {cfg.head_units});
  }
  add_bn("head.bn", cfg.head_units);
  {
    LayerNode drop{LayerKind::Dropout, "head.dropout", {}, {}};
    drop.hyper.dropout_rate = cfg.dropout_rate;
    g.layers.push_back(drop);
  }
  {
    LayerNode fc2{LayerKind::Dense, "head.fc2", {}, {"head.fc2.weight", "head.fc2.bias"}};
    fc2.hyper.units = cfg.num_classes;
    g.layers.push_back(fc2);
    g.add_param("head.fc2.weight", {cfg.num_classes, cfg.head_units});
    g.add_param("head.fc2.bias", {cfg.num_classes});
  }
  g.layers.push_back({LayerKind::SoftmaxXent, "softmax", {}, {}});

  g.shape_check(1);  // fails fast on a stride plan that collapses the map
  return g;
}

struct LayerParamCount {
  std::string layer;
  int64_t weights = 0;
  int64_t biases = 0;
};

template <typename T>
std::pair<std::vector<LayerParamCount>, int64_t> parameter_count(const ModelGraph<T>& g) {
  std::vector<LayerParamCount> per_layer;
  int64_t total = 0;
  for (const auto& l : g.layers) {
    if (l.params.empty()) continue;
    LayerParamCount c;
    c.layer = l.name;
    for (const auto& pn : l.params) {
      const auto& p = g.param(pn);
      if (pn.ends_with(".bias") || pn.ends_with(".beta"))
        c.biases += p.value.numel();
      else
        c.weights += p.value.numel();
    }
    total += c.weights + c.biases;
    per_layer.push_back(c);
  }
  return {per_layer, total};
}

struct SeparableCounts {
  int64_t separable;  // K^2 C + C O
  int64_t full;       // K^2 C O
  double ratio;       // 1/O + 1/K^2
};

inline SeparableCounts separable_param_counts(int64_t C, int64_t O, int64_t K) {
  SeparableCounts s;
  s.separable = K * K * C + C * O;
  s.full = K * K * C * O;
  s.ratio = 1.0 / static_cast<double>(O) + 1.0 / static_cast<double>(K * K);
  return s;
}

}  // namespace sepnet
