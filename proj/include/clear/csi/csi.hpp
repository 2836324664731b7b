#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "clear/channel/channel.hpp"

namespace clear::csi {

using channel::ComplexSequence;
using channel::cplx;

/// Known training block. It is sent `repetitions` times, each copy preceded by
/// a cyclic prefix of `cyclic_prefix` samples.
struct PilotBlock {
  ComplexSequence symbols;
  int repetitions = 1;
  int cyclic_prefix = 0;

  int period() const { return static_cast<int>(symbols.size()) + cyclic_prefix; }
  int waveform_length() const { return repetitions * period(); }
};

/// Unit-modulus symbols with pseudo-random phase. Rejects length < 8.
PilotBlock make_pilot(int length, std::uint64_t seed, int repetitions = 1, int cyclic_prefix = 0);
/// The transmitted samples of a pilot block: prefix + symbols, repeated.
ComplexSequence pilot_waveform(const PilotBlock& pilot);

struct CsiEstimate {
  std::vector<cplx> taps;       // dense estimate over lags 0..max_delay
  std::vector<cplx> gains;      // taps above the detection floor
  std::vector<int> delays;      // their lags
  double doppler = 0.0;         // common rotation, cycles per sample
  double phase_step_var = 0.0;  // Wiener step variance, rad^2 per sample
  double noise_var = 0.0;       // complex noise variance per sample
  double est_snr_db = 0.0;      // 10 log10(1 / noise_var), capped
  double tap_var = 0.0;         // estimation variance of each tap
  std::vector<double> phase_drifts;  // raw inter-repetition drifts (radians)
  int drift_spacing = 0;             // samples between the repetitions behind each drift
  int drift_window = 0;              // samples averaged by each repetition's estimate
};

constexpr double kSnrCapDb = 100.0;

/// Least-squares taps over lags 0..max_delay from each repetition of the
/// pilot; the residual gives the noise level and the drift between
/// repetitions gives Doppler and phase-noise estimates. Throws
/// std::invalid_argument on a degenerate pilot or a short received block.
CsiEstimate estimate_csi(const PilotBlock& pilot, const ComplexSequence& received, int max_delay);

/// Pools estimates from several pilot slots of one frame.
CsiEstimate combine(const std::vector<CsiEstimate>& parts);

/// CSI that exactly describes a realization at sample t (genie receiver).
CsiEstimate known_csi(const channel::ChannelRealization& ch, std::size_t t);

struct AdaptedParams {
  std::vector<cplx> impulse_response;  // combined per-path taps
  std::array<double, 3> conditioning{};
};

/// Maps (snr dB, Doppler, phase step deviation) into [0, 1]^3:
/// snr clamped to [-5, 30] then rescaled, Doppler / 0.5 and deviation / 0.2 capped at 1.
std::array<double, 3> conditioning_vector(double snr_db, double doppler, double phase_dev);

AdaptedParams update_parameters(const CsiEstimate& csi);

/// MMSE frequency-domain weights W = H* / (|H|^2 + noise_var) over n bins.
std::vector<cplx> mmse_weights(const std::vector<cplx>& taps, double noise_var, int n);
/// Circular MMSE equalization of a whole block (the block carries its own cyclic prefix).
ComplexSequence equalize(const ComplexSequence& received, const CsiEstimate& csi);
/// Applies precomputed weights; `adjoint` applies their conjugates (the real adjoint).
std::vector<cplx> apply_weights(const std::vector<cplx>& block, const std::vector<cplx>& weights, bool adjoint);

/// Noise-to-signal ratio left after MMSE equalization over n bins, e / (1 - e)
/// with e the mean MMSE error, plus a phase-drift term for samples up to
/// `pilot_spacing / 2` away from their pilot reference.
double effective_nsr(const CsiEstimate& csi, int n, int pilot_spacing);

ComplexSequence add_cyclic_prefix(const ComplexSequence& x, int cp);
ComplexSequence remove_cyclic_prefix(const ComplexSequence& y, int cp);

}  // namespace clear::csi
