#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "clear/numerics/tensor.hpp"

namespace clear::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Receives the gradient flowing into a node and the node's recorded inputs.
/// Implementations add into `inputs[i]->grad` for inputs that require it.
using BackwardFn = std::function<void(const Tensor& grad_out, const std::vector<Node*>& inputs)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool consumed = false;
  std::vector<NodePtr> parents;
  BackwardFn backward_fn;

  /// Adds `g` into this node's gradient buffer, allocating it on first use.
  void accumulate(const Tensor& g);
  Tensor& grad_buffer();
};

/// Handle to a value on the recorded graph. Cheap to copy.
class Var {
public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t numel() const { return node_->value.numel(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool defined() const { return static_cast<bool>(node_); }

  /// Gradient buffer; zero-filled tensor of matching shape if nothing flowed here.
  const Tensor& grad() const;
  void zero_grad();

  const NodePtr& node() const { return node_; }

private:
  NodePtr node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }
inline Var parameter(Tensor t) { return Var(std::move(t), true); }

/// Records an operation result. When recording is disabled or no input requires
/// gradients, the result is a plain constant and `fn` is dropped.
Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

/// Runs reverse accumulation from a scalar. Each recorded graph may be
/// differentiated once; a second call throws std::logic_error.
void backward(const Var& loss);

bool grad_enabled();

/// Disables recording for the lifetime of the guard (evaluation passes).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  bool previous_;
};

}  // namespace clear::nn
