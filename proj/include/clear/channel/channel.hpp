#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace clear::channel {

using cplx = std::complex<double>;

/// Complex baseband samples on a uniform grid.
struct ComplexSequence {
  std::vector<cplx> samples;
  double sample_interval = 1.0;  // seconds per sample

  ComplexSequence() = default;
  explicit ComplexSequence(std::vector<cplx> s, double interval = 1.0)
      : samples(std::move(s)), sample_interval(interval) {}

  std::size_t size() const { return samples.size(); }
  double average_power() const;
};

/// One propagation path. Its gain process is
/// amplitude * exp(j(initial_phase + 2*pi*doppler*k)); phase noise is applied
/// on top by the realization.
struct PathSpec {
  cplx amplitude{1.0, 0.0};
  int delay_samples = 0;
  double doppler = 0.0;  // cycles per sample
  double initial_phase = 0.0;

  cplx gain(std::size_t k) const;
};

enum class Profile { awgn, rayleigh, time_varying };
enum class PhaseNoiseMode { common, per_path };

std::string_view profile_name(Profile p);
/// Throws std::invalid_argument for unknown names.
Profile parse_profile(std::string_view name);

struct ChannelConfig {
  int paths = 4;
  int max_delay = 3;  // samples
  double ds = 0.0;    // maximum Doppler, cycles per sample
  double pn = 0.0;    // Wiener phase step deviation, radians
  double snr_db = 20.0;
  Profile profile = Profile::time_varying;
  PhaseNoiseMode phase_noise_mode = PhaseNoiseMode::common;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct ChannelRealization {
  std::vector<PathSpec> paths;
  std::vector<double> phase_noise;                   // common mode, one value per sample
  std::vector<std::vector<double>> path_phase_noise;  // per-path mode, one trajectory per path
  double snr_db = 20.0;
  Profile profile = Profile::time_varying;
  std::size_t length = 0;

  int max_delay() const;
  /// Total coefficient of path `i` at sample `k`, phase noise included.
  cplx coefficient(std::size_t i, std::size_t k) const;
  /// Complex noise variance relative to unit transmit power; 0 for infinite SNR.
  double noise_variance() const;
};

/// Complex noise variance 10^(-snr/10); +inf maps to 0.
double noise_variance_for_snr(double snr_db);

/// (v / c) * fc * cos(theta) with c = 3e8 m/s. Rejects v outside [0, c).
double doppler_shift(double v, double fc, double theta);

/// Wiener walk: phi(0) = 0, phi(k) = phi(k-1) + pn * w(k).
std::vector<double> phase_noise_trajectory(double pn, std::size_t n, std::uint64_t seed);

ChannelRealization realize_channel(const ChannelConfig& cfg, std::size_t n, std::uint64_t seed);

/// Multipath, Doppler and phase noise without the additive noise term.
ComplexSequence apply_channel_noiseless(const ComplexSequence& x, const ChannelRealization& ch);
/// Adjoint of apply_channel_noiseless under the real inner product Re<a, b>.
ComplexSequence apply_channel_adjoint(const ComplexSequence& y, const ChannelRealization& ch);
/// Full channel: multipath (short-circuited for the AWGN profile) plus noise drawn from `seed`.
ComplexSequence apply_channel(const ComplexSequence& x, const ChannelRealization& ch, std::uint64_t seed);

/// Instantaneous impulse response at sample t, length max_delay + 1.
std::vector<cplx> impulse_response(const ChannelRealization& ch, std::size_t t);
/// DFT of the impulse response at sample t over n_freq bins.
std::vector<cplx> transfer_function(const ChannelRealization& ch, std::size_t t, int n_freq);

}  // namespace clear::channel
