#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clear/numerics/layers.hpp"
#include "clear/numerics/param_set.hpp"
#include "clear/numerics/rng.hpp"

namespace clear::addm {

using nn::Tensor;
using nn::Var;

/// Per-step and cumulative noise levels, indexed 1..T (index 0 holds the
/// clean-signal values alpha_bar = 1, beta = 0).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;  // reverse standard deviations, sigma[1] = 0

  /// (1 - alpha_bar_t) / alpha_bar_t.
  double noise_to_signal(int t) const { return (1.0 - alpha_bar[t]) / alpha_bar[t]; }
};

/// Linear beta from beta_1 = 0.1 / T up to the smallest beta_T that brings
/// alpha_bar_T to `alpha_bar_T_target` or below. Throws std::invalid_argument
/// naming the achievable bound when even beta_T = 0.999 is not enough.
NoiseSchedule make_schedule(int T, double alpha_bar_T_target = 1e-4);
/// Schedule from explicit per-step betas in [0, 1).
NoiseSchedule schedule_from_betas(const std::vector<double>& betas);
/// Keeps every `stride`-th cumulative level of `base` and re-derives the steps.
NoiseSchedule subsample(const NoiseSchedule& base, int stride);

/// Smallest t with (1 - alpha_bar_t) / alpha_bar_t >= nsr; 0 when nsr is
/// negligible, T when no step is noisy enough.
int start_step(const NoiseSchedule& sched, double nsr);

/// The channel term C(x0); an empty function means the identity.
using ChannelOp = std::function<Tensor(const Tensor&)>;

struct Diffused {
  Tensor x_t;
  Tensor eps;
};

/// x_t = sqrt(alpha_bar_t) C(x0) + sqrt(1 - alpha_bar_t) eps.
Diffused forward_diffuse(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched, int t,
                         std::uint64_t seed);
/// Runs the one-step recursion x_t = sqrt(alpha_t) x_{t-1} + sqrt(1 - alpha_t) eps_t
/// from x_0 = C(x0); returns x_1 .. x_T.
std::vector<Tensor> diffuse_sequence(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched,
                                     std::uint64_t seed);

struct DenoiserConfig {
  int channels = 8;   // input planes (real/imag interleaved)
  int width = 32;
  int depth = 2;      // resolution levels
  int time_dim = 32;
  int cond_dim = 3;
  int embed_dim = 64;
  bool attention = true;
};

/// Conditional U-Net predicting the diffusion noise. Parameters live in a
/// ParamSet under `prefix`.
class Denoiser {
public:
  Denoiser() = default;
  Denoiser(DenoiserConfig cfg, std::string prefix = "addm.");

  /// Registers and initializes every parameter.
  void init(nn::ParamSet& ps, Rng& rng) const;

  /// x_t: (N, channels, H, W); steps: one per sample; cond: (N, cond_dim).
  Var forward(nn::ParamSet& ps, const Var& x_t, const std::vector<int>& steps, const Tensor& cond) const;

  const DenoiserConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

private:
  std::string p(const std::string& name) const { return prefix_ + name; }
  Var film(nn::ParamSet& ps, const Var& h, const Var& embed, const std::string& site) const;

  DenoiserConfig cfg_;
  std::string prefix_ = "addm.";
};

/// eps_hat for a batch sharing one step t. Runs without recording.
Tensor unet_predict(const Tensor& x_t, int t, const Tensor& cond, const Denoiser& den, nn::ParamSet& ps);

/// Any noise predictor: (x_t, t) -> eps_hat.
using EpsPredictor = std::function<Tensor(const Tensor& x_t, int t)>;
EpsPredictor network_predictor(const Denoiser& den, nn::ParamSet& ps, const Tensor& cond);

struct TrainStepResult {
  double loss = 0.0;
  std::vector<int> steps;
};

/// One denoiser update: t uniform on 1..T per sample, loss mean |eps - eps_hat|^2,
/// Adam on the denoiser's parameters. Throws std::runtime_error on a non-finite loss.
TrainStepResult train_step(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched,
                           const Denoiser& den, nn::ParamSet& ps, const nn::AdamConfig& adam, const Tensor& cond,
                           std::uint64_t seed);

/// Recorded noise-prediction loss for joint training; gradients reach x0.
Var denoiser_loss(const Var& x0, const NoiseSchedule& sched, const Denoiser& den, nn::ParamSet& ps,
                  const Tensor& cond, std::uint64_t seed);
Var denoiser_loss(const Tensor& x0, const NoiseSchedule& sched, const Denoiser& den, nn::ParamSet& ps,
                  const Tensor& cond, std::uint64_t seed);

enum class ReverseMode {
  posterior,  // x0-prediction with the Gaussian posterior mean
  literal,    // jump to the x0 estimate, then the in-loop channel line
};

/// Where the literal mode injects sigma_t eps'.
enum class LiteralNoise { both, update_only, channel_only };

struct SamplerOptions {
  ReverseMode mode = ReverseMode::posterior;
  LiteralNoise literal_noise = LiteralNoise::both;
  bool deterministic = false;  // sigma_t = 0 at every step
  ChannelOp channel;           // literal mode only
};

/// (x_t - sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_bar_t).
Tensor predict_x0(const Tensor& x_t, const Tensor& eps_hat, const NoiseSchedule& sched, int t);

Tensor reverse_step(const Tensor& x_t, int t, const EpsPredictor& predictor, const NoiseSchedule& sched,
                    std::uint64_t seed, const SamplerOptions& opts = {});

/// Reverse chain from t_start down to 1. `y` lives in the denoiser domain
/// (unit per-component power over active entries); `mask` marks active
/// entries (1) and may be empty. The input is rescaled to the x_{t_start}
/// marginal, inactive entries are filled with noise of that level, and the
/// output is re-masked. t_start = 0 returns `y` untouched.
Tensor sample(const Tensor& y, const Tensor& mask, const EpsPredictor& predictor, const NoiseSchedule& sched,
              int t_start, std::uint64_t seed, const SamplerOptions& opts = {});

/// Rescales each sample of `y` to unit mean square over its active entries
/// and fills inactive entries with sqrt(1 - alpha_bar_t) noise: the starting
/// state of the reverse chain.
Tensor prepare_start(const Tensor& y, const Tensor& mask, const NoiseSchedule& sched, int t, std::uint64_t seed);

}  // namespace clear::addm
