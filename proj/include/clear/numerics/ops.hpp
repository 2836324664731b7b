#pragma once

#include <functional>

#include "clear/numerics/autodiff.hpp"

// Differentiable tensor primitives. Shapes are checked eagerly; mismatches throw
// std::invalid_argument naming both shapes.
namespace clear::nn {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

Var relu(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var reciprocal(const Var& a);
/// Clamp to [0, 1]; gradient is zero where the input lies outside the range.
Var clamp01(const Var& a);
Var detach(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);

Var reshape(const Var& a, Shape shape);
/// Concatenate along axis 1 (channels for NCHW, features for N x F).
Var concat1(const Var& a, const Var& b);
/// Slice [start, start+len) along axis 1.
Var slice1(const Var& a, int start, int len);

/// x: (N, C, ...) + bias: (C) broadcast over the remaining axes.
Var add_channel_bias(const Var& x, const Var& bias);
/// x: (N, C, ...) scaled by s: (N, C).
Var mul_nc(const Var& x, const Var& s);
/// x: (N, C, ...) shifted by b: (N, C).
Var add_nc(const Var& x, const Var& b);
/// Mean over all axes after the first two: (N, C, ...) -> (N, C).
Var mean_spatial(const Var& x);
/// Sum over all axes but the first: (N, ...) -> (N).
Var sum_per_sample(const Var& x);
/// x: (N, ...) scaled by s: (N).
Var mul_per_sample(const Var& x, const Var& s);

/// x: (N, in), weight: (out, in), bias: (out) or undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Batched product (B, m, k) x (B, k, n) -> (B, m, n).
Var bmm(const Var& a, const Var& b);
/// (B, m, n) -> (B, n, m).
Var transpose12(const Var& a);
/// Softmax over the last axis.
Var softmax_last(const Var& a);

/// Applies a fixed real-linear map plus offset: y = M x + b. `forward` computes
/// M x + b, `adjoint` computes M^T g. Used for the channel/equalizer chain.
Var linear_map(const Var& x, std::function<Tensor(const Tensor&)> forward,
               std::function<Tensor(const Tensor&)> adjoint);

}  // namespace clear::nn
