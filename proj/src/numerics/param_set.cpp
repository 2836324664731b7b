#include "clear/numerics/param_set.hpp"

#include <cmath>
#include <stdexcept>

namespace clear::nn {

Var ParamSet::add(const std::string& name, Tensor init) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  Var v = parameter(std::move(init));
  params_.emplace(name, v);
  return v;
}

BatchNormStats& ParamSet::add_stats(const std::string& name, int channels) {
  auto [it, inserted] = stats_.try_emplace(name);
  if (inserted) {
    it->second.running_mean = Tensor::zeros({channels});
    it->second.running_var = Tensor::full({channels}, 1.0);
  }
  return it->second;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

Var& ParamSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_)
    if (name.starts_with(prefix)) out.push_back(name);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

void ParamSet::zero_values() {
  for (auto& [_, v] : params_) v.mutable_value().fill(0.0);
}

void backward(const Var& loss, ParamSet& params) {
  params.zero_grad();
  nn::backward(loss);
}

void adam_step(ParamSet& params, const AdamConfig& cfg, std::string_view prefix) {
  for (const auto& [name, v] : params.params()) {
    if (!name.starts_with(prefix)) continue;
    if (!v.grad().all_finite()) throw std::runtime_error("adam_step: non-finite gradient in parameter '" + name + "'");
  }
  for (auto& [name, v] : params.params()) {
    if (!name.starts_with(prefix)) continue;
    AdamState& st = params.adam()[name];
    if (st.m.empty()) {
      st.m = Tensor::zeros(v.shape());
      st.v = Tensor::zeros(v.shape());
    }
    ++st.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    const Tensor& g = v.grad();
    Tensor& w = v.mutable_value();
    for (std::size_t i = 0; i < w.numel(); ++i) {
      st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g[i];
      st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = st.m[i] / bc1;
      const double v_hat = st.v[i] / bc2;
      w[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace clear::nn
