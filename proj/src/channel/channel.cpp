#include "clear/channel/channel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "clear/channel/fft.hpp"
#include "clear/numerics/rng.hpp"

namespace clear::channel {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kSpeedOfLight = 3e8;

void require_length(const ComplexSequence& x, const ChannelRealization& ch) {
  if (x.size() != ch.length)
    throw std::invalid_argument("channel: signal has " + std::to_string(x.size()) +
                                " samples but the realization covers " + std::to_string(ch.length));
}
}  // namespace

double ComplexSequence::average_power() const {
  if (samples.empty()) return 0.0;
  double p = 0.0;
  for (const auto& s : samples) p += std::norm(s);
  return p / static_cast<double>(samples.size());
}

cplx PathSpec::gain(std::size_t k) const {
  return amplitude * std::polar(1.0, initial_phase + kTwoPi * doppler * static_cast<double>(k));
}

std::string_view profile_name(Profile p) {
  switch (p) {
    case Profile::awgn: return "awgn";
    case Profile::rayleigh: return "rayleigh";
    case Profile::time_varying: return "time_varying";
  }
  return "?";
}

Profile parse_profile(std::string_view name) {
  if (name == "awgn") return Profile::awgn;
  if (name == "rayleigh") return Profile::rayleigh;
  if (name == "time_varying" || name == "tv") return Profile::time_varying;
  throw std::invalid_argument("unknown channel profile '" + std::string(name) +
                              "' (expected awgn, rayleigh or time_varying)");
}

void ChannelConfig::validate() const {
  if (paths < 1) throw std::invalid_argument("channel: paths must be >= 1");
  if (max_delay < 0) throw std::invalid_argument("channel: max_delay must be >= 0");
  if (!(ds >= 0.0) || !std::isfinite(ds)) throw std::invalid_argument("channel: ds must be finite and >= 0");
  if (!(pn >= 0.0) || !std::isfinite(pn)) throw std::invalid_argument("channel: pn must be finite and >= 0");
  if (std::isnan(snr_db) || snr_db == -INFINITY) throw std::invalid_argument("channel: snr_db must be a number");
}

int ChannelRealization::max_delay() const {
  int d = 0;
  for (const auto& p : paths) d = std::max(d, p.delay_samples);
  return d;
}

cplx ChannelRealization::coefficient(std::size_t i, std::size_t k) const {
  const PathSpec& p = paths[i];
  double phi = 0.0;
  if (!path_phase_noise.empty())
    phi = path_phase_noise[i][k];
  else if (!phase_noise.empty())
    phi = phase_noise[k];
  return p.gain(k) * std::polar(1.0, phi);
}

double ChannelRealization::noise_variance() const { return noise_variance_for_snr(snr_db); }

double noise_variance_for_snr(double snr_db) {
  if (snr_db == INFINITY) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

double doppler_shift(double v, double fc, double theta) {
  if (!(v >= 0.0) || v >= kSpeedOfLight)
    throw std::invalid_argument("doppler_shift: speed must lie in [0, c)");
  return v / kSpeedOfLight * fc * std::cos(theta);
}

std::vector<double> phase_noise_trajectory(double pn, std::size_t n, std::uint64_t seed) {
  std::vector<double> phi(n, 0.0);
  if (pn == 0.0) return phi;
  Rng rng(seed);
  for (std::size_t k = 1; k < n; ++k) phi[k] = phi[k - 1] + pn * rng.normal();
  return phi;
}

ChannelRealization realize_channel(const ChannelConfig& cfg, std::size_t n, std::uint64_t seed) {
  cfg.validate();
  if (n == 0) throw std::invalid_argument("realize_channel: length must be >= 1");
  ChannelRealization ch;
  ch.snr_db = cfg.snr_db;
  ch.profile = cfg.profile;
  ch.length = n;

  if (cfg.profile == Profile::awgn) {
    ch.paths.push_back(PathSpec{});
    ch.phase_noise.assign(n, 0.0);
    return ch;
  }

  Rng rng(derive_seed(seed, "paths"));
  const double path_var = 1.0 / cfg.paths;
  const bool varying = cfg.profile == Profile::time_varying;
  ch.paths.resize(cfg.paths);
  for (auto& p : ch.paths) {
    p.amplitude = rng.complex_normal(path_var);
    p.delay_samples = rng.uniform_int(0, cfg.max_delay);
    p.doppler = varying ? rng.uniform(-cfg.ds, cfg.ds) : 0.0;
  }

  const double pn = varying ? cfg.pn : 0.0;
  if (cfg.phase_noise_mode == PhaseNoiseMode::per_path) {
    for (int i = 0; i < cfg.paths; ++i)
      ch.path_phase_noise.push_back(phase_noise_trajectory(pn, n, derive_seed(seed, "phase", i)));
  } else {
    ch.phase_noise = phase_noise_trajectory(pn, n, derive_seed(seed, "phase"));
  }
  return ch;
}

ComplexSequence apply_channel_noiseless(const ComplexSequence& x, const ChannelRealization& ch) {
  require_length(x, ch);
  if (ch.profile == Profile::awgn) return x;
  const std::size_t n = x.size();
  ComplexSequence y(std::vector<cplx>(n), x.sample_interval);
  for (std::size_t i = 0; i < ch.paths.size(); ++i) {
    const std::size_t d = static_cast<std::size_t>(ch.paths[i].delay_samples);
    for (std::size_t k = d; k < n; ++k) y.samples[k] += ch.coefficient(i, k) * x.samples[k - d];
  }
  return y;
}

ComplexSequence apply_channel_adjoint(const ComplexSequence& y, const ChannelRealization& ch) {
  require_length(y, ch);
  if (ch.profile == Profile::awgn) return y;
  const std::size_t n = y.size();
  ComplexSequence x(std::vector<cplx>(n), y.sample_interval);
  for (std::size_t i = 0; i < ch.paths.size(); ++i) {
    const std::size_t d = static_cast<std::size_t>(ch.paths[i].delay_samples);
    for (std::size_t k = d; k < n; ++k) x.samples[k - d] += std::conj(ch.coefficient(i, k)) * y.samples[k];
  }
  return x;
}

ComplexSequence apply_channel(const ComplexSequence& x, const ChannelRealization& ch, std::uint64_t seed) {
  ComplexSequence y = apply_channel_noiseless(x, ch);
  const double var = ch.noise_variance();
  if (var > 0.0) {
    Rng rng(seed);
    for (auto& s : y.samples) s += rng.complex_normal(var);
  }
  return y;
}

std::vector<cplx> impulse_response(const ChannelRealization& ch, std::size_t t) {
  std::vector<cplx> h(static_cast<std::size_t>(ch.max_delay()) + 1);
  for (std::size_t i = 0; i < ch.paths.size(); ++i) h[ch.paths[i].delay_samples] += ch.coefficient(i, t);
  return h;
}

std::vector<cplx> transfer_function(const ChannelRealization& ch, std::size_t t, int n_freq) {
  if (n_freq < ch.max_delay() + 1)
    throw std::invalid_argument("transfer_function: n_freq must cover the delay spread");
  std::vector<cplx> h = impulse_response(ch, t);
  h.resize(static_cast<std::size_t>(n_freq));
  return dsp::fft(h);
}

}  // namespace clear::channel
