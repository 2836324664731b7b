#pragma once

#include <cmath>

#include "clear/numerics/rng.hpp"

namespace clear::nn {

/// He-normal kernel (O, I, k, k) with fan-in I*k*k, scaled by `gain`.
inline Tensor he_kernel(Rng& rng, int out, int in, int k, double gain = 1.0) {
  return rng.normal_tensor({out, in, k, k}, gain * std::sqrt(2.0 / (in * k * k)));
}

/// Dense weight (out, in) with standard deviation gain / sqrt(in).
inline Tensor dense_weight(Rng& rng, int out, int in, double gain = 1.0) {
  return rng.normal_tensor({out, in}, gain / std::sqrt(static_cast<double>(in)));
}

}  // namespace clear::nn
