#include "clear/numerics/autodiff.hpp"

#include <stdexcept>
#include <unordered_set>

namespace clear::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

void Node::accumulate(const Tensor& g) {
  if (grad.empty()) {
    require_same_shape(value, g, "gradient accumulation");
    grad = g;
  } else {
    grad += g;
  }
}

Tensor& Node::grad_buffer() {
  if (grad.empty()) grad = Tensor::zeros(value.shape());
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::grad() const { return node_->grad_buffer(); }

void Var::zero_grad() { node_->grad = Tensor(); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.parents.reserve(inputs.size());
  for (const auto& in : inputs) node.parents.push_back(in.node());
  node.backward_fn = std::move(fn);
  return out;
}

void backward(const Var& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (root->consumed) throw std::logic_error("backward: graph already differentiated; record it again");
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  // Owning handles: releasing a node's parents below must not free nodes still queued.
  std::vector<NodePtr> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr p = node->parents[next++];
      if (!p->requires_grad) continue;
      if (p->consumed) throw std::logic_error("backward: graph already differentiated; record it again");
      if (!p->parents.empty() && seen.insert(p.get()).second) stack.emplace_back(std::move(p), 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad = Tensor::full(root->value.shape(), 1.0);
  std::vector<Node*> inputs;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (!node->grad.empty() && node->backward_fn) {
      inputs.clear();
      for (const auto& p : node->parents) inputs.push_back(p.get());
      node->backward_fn(node->grad, inputs);
    }
    node->consumed = true;
    node->backward_fn = nullptr;
    node->parents.clear();
    node->grad = Tensor();
  }
}

}  // namespace clear::nn
