#pragma once

#include <vector>

#include "clear/numerics/ops.hpp"

namespace clear::nn {

/// Output extent of a strided convolution along one axis.
int conv_out_extent(int in, int kernel, int stride, int padding);
/// Output extent of the adjoint (transposed) convolution along one axis.
int transpose_conv_out_extent(int in, int kernel, int stride, int padding);

/// 2-d cross-correlation. input (N, I, H, W), kernels (O, I, k, k) with odd k,
/// optional bias (O).
Var conv2d(const Var& input, const Var& kernels, const Var& bias, int stride, int padding);
inline Var conv2d(const Var& input, const Var& kernels, int stride, int padding) {
  return conv2d(input, kernels, Var(), stride, padding);
}

/// Adjoint of conv2d under the same kernels and geometry: input (N, O, h, w)
/// maps to (N, I, (h-1)*stride - 2*padding + k, ...). Any kernel extent.
Var transpose_conv2d(const Var& input, const Var& kernels, const Var& bias, int stride, int padding);
inline Var transpose_conv2d(const Var& input, const Var& kernels, int stride, int padding) {
  return transpose_conv2d(input, kernels, Var(), stride, padding);
}

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

/// Per-channel normalization over batch and spatial axes. In training mode
/// batch statistics are used and `stats` is updated with `momentum`; otherwise
/// the running statistics are used.
Var batch_norm(const Var& input, const Var& gamma, const Var& beta, BatchNormStats& stats, double epsilon,
               double momentum, bool training);

/// 2x2 max pooling with stride 2; ties resolve to the first element.
Var max_pool2d(const Var& input);

struct AttentionParams {
  Var wq, bq;  // (d, C, 1, 1), (d)
  Var wk, bk;
  Var wv, bv;  // (C, C, 1, 1), (C)
};

struct AttentionResult {
  Var output;   // input + attended values, (N, C, H, W)
  Var weights;  // (N, P, P), rows sum to one
};

/// Single-head dot-product attention over the flattened spatial axis with a
/// residual connection.
AttentionResult self_attention(const Var& input, const AttentionParams& params);

/// Sinusoidal embedding: [sin(t w_0) .. sin(t w_{d/2-1}), cos(t w_0) .. ],
/// w_i = 10000^(-2i/d). `dim` must be even.
Tensor sine_time_embedding(double t, int dim);
/// Stacks embeddings for a batch of steps into (N, dim).
Tensor sine_time_embedding(const std::vector<int>& steps, int dim);

}  // namespace clear::nn
