#pragma once

#include <algorithm>
#include <optional>

#include "sepnet/tensor.hpp"

namespace sepnet {

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline void check_conv_args(const Shape& in, int64_t kc, int64_t k, int64_t stride,
                            int64_t pad) {
  if (stride < 1) throw ConfigError("conv stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw ConfigError("conv padding must be >= 0, got " + std::to_string(pad));
  if (in.size() != 4)
    throw ConfigError("conv input must be rank-4 NCHW, got " + shape_str(in));
  if (in[1] != kc)
    throw ConfigError("conv input has " + std::to_string(in[1]) +
                      " channels but kernel expects " + std::to_string(kc));
  if (in[2] + 2 * pad < k || in[3] + 2 * pad < k)
    throw ConfigError("conv kernel " + std::to_string(k) + " larger than padded input " +
                      shape_str(in));
}

// Reference convolution (cross-correlation): plain quintuple loop over the
// output and kernel window. This is the oracle the optimized path is tested
// against.
template <typename T>
Tensor<T> conv2d_naive(const Tensor<T>& input, const Tensor<T>& kernel,
                       const Tensor<T>& bias, int64_t stride, int64_t pad) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
    throw ConfigError("conv kernel must be OxCxKxK, got " + shape_str(kernel.shape));
  const int64_t O = kernel.dim(0), C = kernel.dim(1), K = kernel.dim(2);
  check_conv_args(input.shape, C, K, stride, pad);
  if (bias.numel() != O)
    throw ConfigError("conv bias length " + std::to_string(bias.numel()) +
                      " does not match out channels " + std::to_string(O));
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = conv_out_dim(H, K, stride, pad);
  const int64_t Wo = conv_out_dim(W, K, stride, pad);
  Tensor<T> out({N, O, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          T acc = bias[o];
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                const int64_t iy = y * stride + ky - pad;
                const int64_t ix = x * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += input.at(n, c, iy, ix) * kernel.at(o, c, ky, kx);
              }
          out.at(n, o, y, x) = acc;
        }
  return out;
}

// Optimized path: im2col + matrix multiply. Column buffer is (C*K*K) x (Ho*Wo)
// per image.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                         const Tensor<T>& bias, int64_t stride, int64_t pad) {
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3))
    throw ConfigError("conv kernel must be OxCxKxK, got " + shape_str(kernel.shape));
  const int64_t O = kernel.dim(0), C = kernel.dim(1), K = kernel.dim(2);
  check_conv_args(input.shape, C, K, stride, pad);
  if (bias.numel() != O)
    throw ConfigError("conv bias length " + std::to_string(bias.numel()) +
                      " does not match out channels " + std::to_string(O));
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = conv_out_dim(H, K, stride, pad);
  const int64_t Wo = conv_out_dim(W, K, stride, pad);
  const int64_t cols = Ho * Wo, rows = C * K * K;
  Tensor<T> out({N, O, Ho, Wo});
  std::vector<T> col(static_cast<size_t>(rows * cols));
  for (int64_t n = 0; n < N; ++n) {
    std::fill(col.begin(), col.end(), T(0));
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ky = 0; ky < K; ++ky)
        for (int64_t kx = 0; kx < K; ++kx) {
          const int64_t r = (c * K + ky) * K + kx;
          for (int64_t y = 0; y < Ho; ++y) {
            const int64_t iy = y * stride + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int64_t x = 0; x < Wo; ++x) {
              const int64_t ix = x * stride + kx - pad;
              if (ix < 0 || ix >= W) continue;
              col[static_cast<size_t>(r * cols + y * Wo + x)] = input.at(n, c, iy, ix);
            }
          }
        }
    for (int64_t o = 0; o < O; ++o) {
      const T* krow = &kernel.data[static_cast<size_t>(o * rows)];
      for (int64_t p = 0; p < cols; ++p) {
        T acc = bias[o];
        for (int64_t r = 0; r < rows; ++r) acc += krow[r] * col[static_cast<size_t>(r * cols + p)];
        out.data[static_cast<size_t>((n * O + o) * cols + p)] = acc;
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, int64_t stride,
                     int64_t pad, const Tensor<T>& grad_out, Tensor<T>* grad_input,
                     Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const int64_t O = kernel.dim(0), C = kernel.dim(1), K = kernel.dim(2);
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  if (grad_input) *grad_input = Tensor<T>(input.shape);
  if (grad_kernel) *grad_kernel = Tensor<T>(kernel.shape);
  if (grad_bias) *grad_bias = Tensor<T>({O});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          const T g = grad_out.at(n, o, y, x);
          if (grad_bias) (*grad_bias)[o] += g;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t ky = 0; ky < K; ++ky)
              for (int64_t kx = 0; kx < K; ++kx) {
                const int64_t iy = y * stride + ky - pad;
                const int64_t ix = x * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                if (grad_kernel)
                  grad_kernel->at(o, c, ky, kx) += g * input.at(n, c, iy, ix);
                if (grad_input)
                  grad_input->at(n, c, iy, ix) += g * kernel.at(o, c, ky, kx);
              }
        }
}

// Depthwise convolution: one KxK filter per input channel, channel count
// preserved.
template <typename T>
Tensor<T> depthwise_forward(const Tensor<T>& input, const Tensor<T>& kernel,
                            const Tensor<T>& bias, int64_t stride, int64_t pad) {
  if (kernel.rank() != 3 || kernel.dim(1) != kernel.dim(2))
    throw ConfigError("depthwise kernel must be CxKxK, got " + shape_str(kernel.shape));
  const int64_t C = kernel.dim(0), K = kernel.dim(1);
  check_conv_args(input.shape, C, K, stride, pad);
  if (bias.numel() != C)
    throw ConfigError("depthwise bias length does not match channel count");
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = conv_out_dim(H, K, stride, pad);
  const int64_t Wo = conv_out_dim(W, K, stride, pad);
  Tensor<T> out({N, C, Ho, Wo});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          T acc = bias[c];
          for (int64_t ky = 0; ky < K; ++ky)
            for (int64_t kx = 0; kx < K; ++kx) {
              const int64_t iy = y * stride + ky - pad;
              const int64_t ix = x * stride + kx - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += input.at(n, c, iy, ix) * kernel.at(c, ky, kx);
            }
          out.at(n, c, y, x) = acc;
        }
  return out;
}

template <typename T>
void depthwise_backward(const Tensor<T>& input, const Tensor<T>& kernel, int64_t stride,
                        int64_t pad, const Tensor<T>& grad_out, Tensor<T>* grad_input,
                        Tensor<T>* grad_kernel, Tensor<T>* grad_bias) {
  const int64_t C = kernel.dim(0), K = kernel.dim(1);
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t Ho = grad_out.dim(2), Wo = grad_out.dim(3);
  if (grad_input) *grad_input = Tensor<T>(input.shape);
  if (grad_kernel) *grad_kernel = Tensor<T>(kernel.shape);
  if (grad_bias) *grad_bias = Tensor<T>({C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < Ho; ++y)
        for (int64_t x = 0; x < Wo; ++x) {
          const T g = grad_out.at(n, c, y, x);
          if (grad_bias) (*grad_bias)[c] += g;
          for (int64_t ky = 0; ky < K; ++ky)
            for (int64_t kx = 0; kx < K; ++kx) {
              const int64_t iy = y * stride + ky - pad;
              const int64_t ix = x * stride + kx - pad;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              if (grad_kernel) grad_kernel->at(c, ky, kx) += g * input.at(n, c, iy, ix);
              if (grad_input) grad_input->at(n, c, iy, ix) += g * kernel.at(c, ky, kx);
            }
        }
}

// 1x1 channel-mixing convolution, weight O x C.
template <typename T>
Tensor<T> pointwise_forward(const Tensor<T>& input, const Tensor<T>& weight,
                            const Tensor<T>& bias) {
  if (weight.rank() != 2)
    throw ConfigError("pointwise weight must be OxC, got " + shape_str(weight.shape));
  const int64_t O = weight.dim(0), C = weight.dim(1);
  if (input.rank() != 4 || input.dim(1) != C)
    throw ConfigError("pointwise input " + shape_str(input.shape) +
                      " incompatible with weight " + shape_str(weight.shape));
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  Tensor<T> out({N, O, H, W});
  const int64_t hw = H * W;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t p = 0; p < hw; ++p) {
        T acc = bias[o];
        for (int64_t c = 0; c < C; ++c)
          acc += weight.at(o, c) * input.data[static_cast<size_t>((n * C + c) * hw + p)];
        out.data[static_cast<size_t>((n * O + o) * hw + p)] = acc;
      }
  return out;
}

template <typename T>
void pointwise_backward(const Tensor<T>& input, const Tensor<T>& weight,
                        const Tensor<T>& grad_out, Tensor<T>* grad_input,
                        Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const int64_t O = weight.dim(0), C = weight.dim(1);
  const int64_t N = input.dim(0), H = input.dim(2), W = input.dim(3);
  const int64_t hw = H * W;
  if (grad_input) *grad_input = Tensor<T>(input.shape);
  if (grad_weight) *grad_weight = Tensor<T>(weight.shape);
  if (grad_bias) *grad_bias = Tensor<T>({O});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t p = 0; p < hw; ++p) {
        const T g = grad_out.data[static_cast<size_t>((n * O + o) * hw + p)];
        if (grad_bias) (*grad_bias)[o] += g;
        for (int64_t c = 0; c < C; ++c) {
          const T xin = input.data[static_cast<size_t>((n * C + c) * hw + p)];
          if (grad_weight) grad_weight->at(o, c) += g * xin;
          if (grad_input)
            (*grad_input).data[static_cast<size_t>((n * C + c) * hw + p)] +=
                g * weight.at(o, c);
        }
      }
}

// Depthwise + pointwise in one call. With zero biases this equals a full
// convolution with the composed kernel W[o,c,:,:] = P[o,c] * D[c,:,:].
template <typename T>
Tensor<T> depthwise_separable_forward(const Tensor<T>& input,
                                      const Tensor<T>& depthwise_kernel,
                                      const Tensor<T>& pointwise_weight,
                                      const Tensor<T>& depthwise_bias,
                                      const Tensor<T>& pointwise_bias, int64_t stride,
                                      int64_t pad) {
  Tensor<T> mid = depthwise_forward(input, depthwise_kernel, depthwise_bias, stride, pad);
  return pointwise_forward(mid, pointwise_weight, pointwise_bias);
}

template <typename T>
Tensor<T> compose_separable_kernel(const Tensor<T>& depthwise_kernel,
                                   const Tensor<T>& pointwise_weight) {
  const int64_t C = depthwise_kernel.dim(0), K = depthwise_kernel.dim(1);
  const int64_t O = pointwise_weight.dim(0);
  Tensor<T> full({O, C, K, K});
  for (int64_t o = 0; o < O; ++o)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t ky = 0; ky < K; ++ky)
        for (int64_t kx = 0; kx < K; ++kx)
          full.at(o, c, ky, kx) = pointwise_weight.at(o, c) * depthwise_kernel.at(c, ky, kx);
  return full;
}

enum class Mode { Train, Infer };

template <typename T>
struct BatchNormCache {
  Tensor<T> input;
  std::vector<T> mean, invstd;
};

// Per-channel batch normalization over N*H*W. Rank-2 input N x C is treated
// as N x C x 1 x 1. Training mode uses batch statistics and updates the
// running estimates; inference mode requires populated running stats.
template <typename T>
Tensor<T> batchnorm_forward(const Tensor<T>& input, const Tensor<T>& gamma,
                            const Tensor<T>& beta, Tensor<T>& running_mean,
                            Tensor<T>& running_var, bool stats_populated, Mode mode,
                            double eps, double momentum,
                            BatchNormCache<T>* cache = nullptr) {
  if (input.rank() != 2 && input.rank() != 4)
    throw ConfigError("batchnorm input must be rank 2 or 4, got " + shape_str(input.shape));
  const int64_t N = input.dim(0), C = input.dim(1);
  const int64_t hw = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  if (gamma.numel() != C || beta.numel() != C)
    throw ConfigError("batchnorm gamma/beta length must equal channel count " +
                      std::to_string(C));
  if (mode == Mode::Infer && !stats_populated)
    throw StateError("batchnorm inference requested but running stats are unpopulated");
  Tensor<T> out(input.shape);
  std::vector<T> mean(static_cast<size_t>(C)), invstd(static_cast<size_t>(C));
  const int64_t count = N * hw;
  for (int64_t c = 0; c < C; ++c) {
    T m, v;
    if (mode == Mode::Train) {
      double sum = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < hw; ++p)
          sum += static_cast<double>(input.data[static_cast<size_t>((n * C + c) * hw + p)]);
      m = static_cast<T>(sum / static_cast<double>(count));
      double sq = 0;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < hw; ++p) {
          const double d =
              static_cast<double>(input.data[static_cast<size_t>((n * C + c) * hw + p)]) - m;
          sq += d * d;
        }
      v = static_cast<T>(sq / static_cast<double>(count));
      running_mean[c] = static_cast<T>(momentum) * running_mean[c] +
                        static_cast<T>(1 - momentum) * m;
      running_var[c] =
          static_cast<T>(momentum) * running_var[c] + static_cast<T>(1 - momentum) * v;
    } else {
      m = running_mean[c];
      v = running_var[c];
    }
    mean[static_cast<size_t>(c)] = m;
    invstd[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(v) + eps));
    for (int64_t n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const size_t i = static_cast<size_t>((n * C + c) * hw + p);
        out.data[i] = gamma[c] * (input.data[i] - m) * invstd[static_cast<size_t>(c)] + beta[c];
      }
  }
  if (cache) {
    cache->input = input;
    cache->mean = std::move(mean);
    cache->invstd = std::move(invstd);
  }
  return out;
}

// Training-mode backward (batch statistics participate in the gradient).
template <typename T>
void batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma,
                        const Tensor<T>& grad_out, Tensor<T>* grad_input,
                        Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const Tensor<T>& x = cache.input;
  const int64_t N = x.dim(0), C = x.dim(1);
  const int64_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const int64_t count = N * hw;
  if (grad_input) *grad_input = Tensor<T>(x.shape);
  if (grad_gamma) *grad_gamma = Tensor<T>({C});
  if (grad_beta) *grad_beta = Tensor<T>({C});
  for (int64_t c = 0; c < C; ++c) {
    const T m = cache.mean[static_cast<size_t>(c)];
    const T is = cache.invstd[static_cast<size_t>(c)];
    double sum_g = 0, sum_gx = 0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t p = 0; p < hw; ++p) {
        const size_t i = static_cast<size_t>((n * C + c) * hw + p);
        const double g = static_cast<double>(grad_out.data[i]);
        const double xhat = static_cast<double>((x.data[i] - m) * is);
        sum_g += g;
        sum_gx += g * xhat;
      }
    if (grad_gamma) (*grad_gamma)[c] = static_cast<T>(sum_gx);
    if (grad_beta) (*grad_beta)[c] = static_cast<T>(sum_g);
    if (grad_input) {
      const double inv_n = 1.0 / static_cast<double>(count);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t p = 0; p < hw; ++p) {
          const size_t i = static_cast<size_t>((n * C + c) * hw + p);
          const double g = static_cast<double>(grad_out.data[i]);
          const double xhat = static_cast<double>((x.data[i] - m) * is);
          (*grad_input).data[i] = static_cast<T>(
              static_cast<double>(gamma[c]) * static_cast<double>(is) *
              (g - inv_n * sum_g - xhat * inv_n * sum_gx));
        }
    }
  }
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (T& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  for (size_t i = 0; i < g.data.size(); ++i)
    if (input.data[i] <= T(0)) g.data[i] = T(0);
  return g;
}

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& input) {
  if (input.rank() != 4)
    throw ConfigError("global average pool expects NCHW input, got " + shape_str(input.shape));
  const int64_t N = input.dim(0), C = input.dim(1), hw = input.dim(2) * input.dim(3);
  Tensor<T> out({N, C});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double sum = 0;
      for (int64_t p = 0; p < hw; ++p)
        sum += static_cast<double>(input.data[static_cast<size_t>((n * C + c) * hw + p)]);
      out.at(n, c) = static_cast<T>(sum / static_cast<double>(hw));
    }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const int64_t N = input_shape[0], C = input_shape[1], hw = input_shape[2] * input_shape[3];
  Tensor<T> g(input_shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T v = grad_out.at(n, c) / static_cast<T>(hw);
      for (int64_t p = 0; p < hw; ++p)
        g.data[static_cast<size_t>((n * C + c) * hw + p)] = v;
    }
  return g;
}

// Inverted dropout: survivors scaled by 1/(1-rate) at train time, inference
// is identity. Mask is bit-reproducible for a given seed.
template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& input, double rate, Mode mode, uint64_t seed,
                          std::vector<uint8_t>* kept_mask = nullptr) {
  if (rate < 0 || rate >= 1)
    throw ConfigError("dropout rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::Infer || rate == 0) {
    if (kept_mask) kept_mask->assign(input.data.size(), 1);
    return input;
  }
  Rng rng(seed);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> out = input;
  if (kept_mask) kept_mask->assign(input.data.size(), 0);
  for (size_t i = 0; i < out.data.size(); ++i) {
    if (rng.uniform() < rate) {
      out.data[i] = T(0);
    } else {
      out.data[i] *= scale;
      if (kept_mask) (*kept_mask)[i] = 1;
    }
  }
  return out;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<uint8_t>& kept_mask, double rate,
                           const Tensor<T>& grad_out) {
  Tensor<T> g = grad_out;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < g.data.size(); ++i)
    g.data[i] = kept_mask[i] ? g.data[i] * scale : T(0);
  return g;
}

// y = x W^T + b with x: N x F, W: U x F.
template <typename T>
Tensor<T> dense_forward(const Tensor<T>& input, const Tensor<T>& weight,
                        const Tensor<T>& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || input.dim(1) != weight.dim(1))
    throw ConfigError("dense shapes incompatible: input " + shape_str(input.shape) +
                      ", weight " + shape_str(weight.shape));
  const int64_t N = input.dim(0), F = input.dim(1), U = weight.dim(0);
  if (bias.numel() != U) throw ConfigError("dense bias length must equal unit count");
  Tensor<T> out({N, U});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t u = 0; u < U; ++u) {
      T acc = bias[u];
      for (int64_t f = 0; f < F; ++f) acc += input.at(n, f) * weight.at(u, f);
      out.at(n, u) = acc;
    }
  return out;
}

template <typename T>
void dense_backward(const Tensor<T>& input, const Tensor<T>& weight,
                    const Tensor<T>& grad_out, Tensor<T>* grad_input,
                    Tensor<T>* grad_weight, Tensor<T>* grad_bias) {
  const int64_t N = input.dim(0), F = input.dim(1), U = weight.dim(0);
  if (grad_input) *grad_input = Tensor<T>(input.shape);
  if (grad_weight) *grad_weight = Tensor<T>(weight.shape);
  if (grad_bias) *grad_bias = Tensor<T>({U});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t u = 0; u < U; ++u) {
      const T g = grad_out.at(n, u);
      if (grad_bias) (*grad_bias)[u] += g;
      for (int64_t f = 0; f < F; ++f) {
        if (grad_weight) grad_weight->at(u, f) += g * input.at(n, f);
        if (grad_input) grad_input->at(n, f) += g * weight.at(u, f);
      }
    }
}

template <typename T>
struct SoftmaxXentResult {
  double loss = 0;
  Tensor<T> probabilities;
};

// Mean cross-entropy over the batch, softmax computed with max subtraction.
template <typename T>
SoftmaxXentResult<T> softmax_cross_entropy(const Tensor<T>& logits,
                                           const std::vector<int>& labels) {
  if (logits.rank() != 2)
    throw ConfigError("softmax expects N x K logits, got " + shape_str(logits.shape));
  const int64_t N = logits.dim(0), K = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw ConfigError("label count " + std::to_string(labels.size()) +
                      " does not match batch size " + std::to_string(N));
  SoftmaxXentResult<T> res;
  res.probabilities = Tensor<T>({N, K});
  double loss = 0;
  for (int64_t n = 0; n < N; ++n) {
    const int y = labels[static_cast<size_t>(n)];
    if (y < 0 || y >= K)
      throw ConfigError("label " + std::to_string(y) + " out of range [0," +
                        std::to_string(K) + ")");
    double mx = static_cast<double>(logits.at(n, 0));
    for (int64_t k = 1; k < K; ++k)
      mx = std::max(mx, static_cast<double>(logits.at(n, k)));
    double denom = 0;
    for (int64_t k = 0; k < K; ++k)
      denom += std::exp(static_cast<double>(logits.at(n, k)) - mx);
    for (int64_t k = 0; k < K; ++k)
      res.probabilities.at(n, k) =
          static_cast<T>(std::exp(static_cast<double>(logits.at(n, k)) - mx) / denom);
    loss -= static_cast<double>(logits.at(n, y)) - mx - std::log(denom);
  }
  res.loss = loss / static_cast<double>(N);
  return res;
}

// d(mean xent)/d(logits) = (p - onehot) / N
template <typename T>
Tensor<T> softmax_cross_entropy_backward(const Tensor<T>& probabilities,
                                         const std::vector<int>& labels) {
  const int64_t N = probabilities.dim(0), K = probabilities.dim(1);
  Tensor<T> g = probabilities;
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(N));
  for (int64_t n = 0; n < N; ++n) {
    g.at(n, labels[static_cast<size_t>(n)]) -= T(1);
    for (int64_t k = 0; k < K; ++k) g.at(n, k) *= inv_n;
  }
  return g;
}

// Probabilities only (inference head).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const int64_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> out({N, K});
  for (int64_t n = 0; n < N; ++n) {
    double mx = static_cast<double>(logits.at(n, 0));
    for (int64_t k = 1; k < K; ++k)
      mx = std::max(mx, static_cast<double>(logits.at(n, k)));
    double denom = 0;
    for (int64_t k = 0; k < K; ++k)
      denom += std::exp(static_cast<double>(logits.at(n, k)) - mx);
    for (int64_t k = 0; k < K; ++k)
      out.at(n, k) = static_cast<T>(std::exp(static_cast<double>(logits.at(n, k)) - mx) / denom);
  }
  return out;
}

}  // namespace sepnet
