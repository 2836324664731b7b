#include <cmath>
#include <stdexcept>

#include "clear/addm/addm.hpp"

namespace clear::addm {

using namespace nn;

namespace {
Tensor per_sample_mix(const Tensor& x0, const Tensor& eps, const NoiseSchedule& sched, const std::vector<int>& steps) {
  Tensor x_t(x0.shape());
  const std::size_t per = x0.numel() / steps.size();
  for (std::size_t n = 0; n < steps.size(); ++n) {
    const double a = std::sqrt(sched.alpha_bar[steps[n]]), s = std::sqrt(1.0 - sched.alpha_bar[steps[n]]);
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) x_t[i] = a * x0[i] + s * eps[i];
  }
  return x_t;
}

std::vector<int> draw_steps(Rng& rng, int n, int T) {
  std::vector<int> steps(static_cast<std::size_t>(n));
  for (auto& t : steps) t = rng.uniform_int(1, T);
  return steps;
}

Tensor apply_op(const ChannelOp& op, const Tensor& x) { return op ? op(x) : x; }
}  // namespace

Tensor unet_predict(const Tensor& x_t, int t, const Tensor& cond, const Denoiser& den, ParamSet& ps) {
  NoGradGuard guard;
  return den.forward(ps, constant(x_t), std::vector<int>(static_cast<std::size_t>(x_t.dim(0)), t), cond).value();
}

EpsPredictor network_predictor(const Denoiser& den, ParamSet& ps, const Tensor& cond) {
  return [&den, &ps, cond](const Tensor& x_t, int t) { return unet_predict(x_t, t, cond, den, ps); };
}

Var denoiser_loss(const Var& x0, const NoiseSchedule& sched, const Denoiser& den, ParamSet& ps, const Tensor& cond,
                  std::uint64_t seed) {
  Rng rng(seed);
  const int n = x0.dim(0);
  const std::vector<int> steps = draw_steps(rng, n, sched.T);
  const Tensor eps = rng.normal_tensor(x0.shape());
  Tensor a({n});
  for (int b = 0; b < n; ++b) a[b] = std::sqrt(sched.alpha_bar[steps[b]]);
  const Tensor noise = per_sample_mix(Tensor::zeros(x0.shape()), eps, sched, steps);
  const Var x_t = add(mul_per_sample(x0, constant(a)), constant(noise));
  return mse(den.forward(ps, x_t, steps, cond), constant(eps));
}

Var denoiser_loss(const Tensor& x0, const NoiseSchedule& sched, const Denoiser& den, ParamSet& ps, const Tensor& cond,
                  std::uint64_t seed) {
  return denoiser_loss(constant(x0), sched, den, ps, cond, seed);
}

TrainStepResult train_step(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched, const Denoiser& den,
                           ParamSet& ps, const AdamConfig& adam, const Tensor& cond, std::uint64_t seed) {
  Rng rng(seed);
  TrainStepResult res;
  res.steps = draw_steps(rng, x0.dim(0), sched.T);
  const Tensor eps = rng.normal_tensor(x0.shape());
  const Tensor x_t = per_sample_mix(apply_op(channel, x0), eps, sched, res.steps);
  const Var loss = mse(den.forward(ps, constant(x_t), res.steps, cond), constant(eps));
  res.loss = loss.value()[0];
  if (!std::isfinite(res.loss)) throw std::runtime_error("addm train_step: non-finite loss");
  backward(loss, ps);
  adam_step(ps, adam, den.prefix());
  return res;
}

Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, const NoiseSchedule& sched, int t) {
  require_same_shape(x_t, eps_hat, "predict_x0");
  const double a = std::sqrt(sched.alpha_bar[t]), s = std::sqrt(1.0 - sched.alpha_bar[t]);
  Tensor x0(x_t.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i) x0[i] = (x_t[i] - s * eps_hat[i]) / a;
  return x0;
}

Tensor reverse_step(const Tensor& x_t, int t, const EpsPredictor& predictor, const NoiseSchedule& sched,
                    std::uint64_t seed, const SamplerOptions& opts) {
  if (t < 1 || t > sched.T) throw std::invalid_argument("reverse_step: t outside [1, T]");
  const Tensor x0_hat = predict_x0(x_t, predictor(x_t, t), sched, t);
  const double sigma = opts.deterministic ? 0.0 : sched.sigma[t];
  Rng rng(seed);
  Tensor noise = sigma > 0.0 ? rng.normal_tensor(x_t.shape(), sigma) : Tensor::zeros(x_t.shape());

  if (opts.mode == ReverseMode::posterior) {
    const double denom = 1.0 - sched.alpha_bar[t];
    const double c0 = std::sqrt(sched.alpha_bar[t - 1]) * sched.beta[t] / denom;
    const double ct = std::sqrt(sched.alpha[t]) * (1.0 - sched.alpha_bar[t - 1]) / denom;
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c0 * x0_hat[i] + ct * x_t[i] + noise[i];
    return out;
  }
  switch (opts.literal_noise) {
    case LiteralNoise::both: return apply_op(opts.channel, x0_hat + noise) + noise;
    case LiteralNoise::update_only: return apply_op(opts.channel, x0_hat + noise);
    case LiteralNoise::channel_only: return apply_op(opts.channel, x0_hat) + noise;
  }
  return x0_hat;
}

Tensor prepare_start(const Tensor& y, const Tensor& mask, const NoiseSchedule& sched, int t, std::uint64_t seed) {
  if (!mask.empty()) require_same_shape(y, mask, "sampler mask");
  const int n = y.dim(0);
  const std::size_t per = y.numel() / static_cast<std::size_t>(n);
  const double fill = std::sqrt(1.0 - sched.alpha_bar[t]);
  Rng rng(seed);
  Tensor x(y.shape());
  for (int b = 0; b < n; ++b) {
    double ss = 0.0;
    std::size_t active = 0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      if (mask.empty() || mask[i] != 0.0) {
        ss += y[i] * y[i];
        ++active;
      }
    const double scale = ss > 0.0 ? std::sqrt(static_cast<double>(active) / ss) : 1.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i)
      x[i] = (mask.empty() || mask[i] != 0.0) ? scale * y[i] : fill * rng.normal();
  }
  return x;
}

Tensor sample(const Tensor& y, const Tensor& mask, const EpsPredictor& predictor, const NoiseSchedule& sched,
              int t_start, std::uint64_t seed, const SamplerOptions& opts) {
  if (t_start < 0 || t_start > sched.T)
    throw std::invalid_argument("sample: t_start " + std::to_string(t_start) + " outside [0, " +
                                std::to_string(sched.T) + "]");
  if (t_start == 0) return y;
  Tensor x = prepare_start(y, mask, sched, t_start, derive_seed(seed, "start"));
  for (int t = t_start; t >= 1; --t) x = reverse_step(x, t, predictor, sched, derive_seed(seed, "step", t), opts);
  if (!mask.empty())
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] *= mask[i];
  return x;
}

}  // namespace clear::addm
