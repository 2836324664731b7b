#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "clear/numerics/autodiff.hpp"
#include "clear/numerics/layers.hpp"

namespace clear::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Tensor m;
  Tensor v;
  std::int64_t step = 0;
};

/// Named trainable tensors plus batch-norm buffers and per-parameter Adam
/// state. Names are unique; iteration order is lexicographic.
class ParamSet {
public:
  /// Registers a parameter. Throws std::invalid_argument on a duplicate name.
  Var add(const std::string& name, Tensor init);
  /// Registers (or returns) running statistics for a batch-norm layer.
  BatchNormStats& add_stats(const std::string& name, int channels);

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);

  const std::map<std::string, Var>& params() const { return params_; }
  std::map<std::string, Var>& params() { return params_; }
  std::map<std::string, BatchNormStats>& stats() { return stats_; }
  const std::map<std::string, BatchNormStats>& stats() const { return stats_; }
  std::map<std::string, AdamState>& adam() { return adam_; }
  const std::map<std::string, AdamState>& adam() const { return adam_; }

  std::vector<std::string> names(std::string_view prefix = {}) const;
  std::size_t scalar_count() const;

  void zero_grad();
  /// Sets every parameter to zero (used by degenerate-network checks).
  void zero_values();

private:
  std::map<std::string, Var> params_;
  std::map<std::string, BatchNormStats> stats_;
  std::map<std::string, AdamState> adam_;
};

/// Clears every parameter gradient and back-propagates from `loss`.
/// Parameters the loss does not depend on end with zero gradients.
void backward(const Var& loss, ParamSet& params);

/// One Adam update on every parameter whose name starts with `prefix`.
/// Throws std::runtime_error (and leaves parameters untouched) if any
/// gradient is non-finite.
void adam_step(ParamSet& params, const AdamConfig& cfg, std::string_view prefix = {});

}  // namespace clear::nn
