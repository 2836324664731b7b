#include "clear/csi/csi.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "clear/channel/fft.hpp"
#include "clear/numerics/rng.hpp"

namespace clear::csi {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;

double snr_from_noise(double noise_var) {
  if (!(noise_var > 0.0)) return kSnrCapDb;
  return std::min(kSnrCapDb, -10.0 * std::log10(noise_var));
}

void detect_paths(CsiEstimate& est) {
  const double floor = std::max(1e-20, 4.0 * est.tap_var);
  est.gains.clear();
  est.delays.clear();
  for (std::size_t l = 0; l < est.taps.size(); ++l)
    if (std::norm(est.taps[l]) > floor) {
      est.gains.push_back(est.taps[l]);
      est.delays.push_back(static_cast<int>(l));
    }
}

void drift_statistics(CsiEstimate& est) {
  const auto& d = est.phase_drifts;
  est.doppler = 0.0;
  est.phase_step_var = 0.0;
  if (d.empty() || est.drift_spacing <= 0) return;
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(d.size());
  est.doppler = mean / (kTwoPi * est.drift_spacing);
  if (d.size() >= 2) {
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    // Each estimate averages the walk over its window, so the difference of two
    // estimates carries spacing - window/3 steps of Wiener variance.
    const double span = est.drift_spacing - est.drift_window / 3.0;
    est.phase_step_var = ss / static_cast<double>(d.size() - 1) / span;
  }
}
}  // namespace

PilotBlock make_pilot(int length, std::uint64_t seed, int repetitions, int cyclic_prefix) {
  if (length < 8) throw std::invalid_argument("make_pilot: length must be >= 8");
  if (repetitions < 1) throw std::invalid_argument("make_pilot: repetitions must be >= 1");
  if (cyclic_prefix < 0) throw std::invalid_argument("make_pilot: cyclic prefix must be >= 0");
  Rng rng(seed);
  std::vector<cplx> s(static_cast<std::size_t>(length));
  for (auto& v : s) v = std::polar(1.0, rng.uniform(0.0, kTwoPi));
  return PilotBlock{ComplexSequence(std::move(s)), repetitions, cyclic_prefix};
}

ComplexSequence pilot_waveform(const PilotBlock& pilot) {
  std::vector<cplx> w;
  w.reserve(static_cast<std::size_t>(pilot.waveform_length()));
  const ComplexSequence one = add_cyclic_prefix(pilot.symbols, pilot.cyclic_prefix);
  for (int r = 0; r < pilot.repetitions; ++r) w.insert(w.end(), one.samples.begin(), one.samples.end());
  return ComplexSequence(std::move(w), pilot.symbols.sample_interval);
}

CsiEstimate estimate_csi(const PilotBlock& pilot, const ComplexSequence& received, int max_delay) {
  const int p = static_cast<int>(pilot.symbols.size());
  const int taps = max_delay + 1;
  if (max_delay < 0) throw std::invalid_argument("estimate_csi: max_delay must be >= 0");
  if (p < taps + 1) throw std::invalid_argument("estimate_csi: pilot shorter than the delay window plus one");
  if (static_cast<int>(received.size()) < pilot.waveform_length())
    throw std::invalid_argument("estimate_csi: received block shorter than the pilot waveform");

  const ComplexSequence sent = pilot_waveform(pilot);
  CsiEstimate est;
  est.taps.assign(static_cast<std::size_t>(taps), cplx{});
  std::vector<Eigen::VectorXcd> per_rep;
  double residual = 0.0;
  for (int r = 0; r < pilot.repetitions; ++r) {
    const int start = r * pilot.period() + pilot.cyclic_prefix;
    Eigen::MatrixXcd a(p, taps);
    Eigen::VectorXcd y(p);
    for (int i = 0; i < p; ++i) {
      const int k = start + i;
      y(i) = received.samples[k];
      for (int l = 0; l < taps; ++l) a(i, l) = k - l >= 0 ? sent.samples[k - l] : cplx{};
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXcd> qr(a);
    qr.setThreshold(1e-9);
    if (qr.rank() < taps) throw std::invalid_argument("estimate_csi: pilot gives singular normal equations");
    Eigen::VectorXcd h = qr.solve(y);
    residual += (y - a * h).squaredNorm();
    per_rep.push_back(h);
    for (int l = 0; l < taps; ++l) est.taps[l] += h(l) / static_cast<double>(pilot.repetitions);
  }
  est.noise_var = residual / (static_cast<double>(pilot.repetitions) * (p - taps));
  est.est_snr_db = snr_from_noise(est.noise_var);

  for (std::size_t r = 0; r + 1 < per_rep.size(); ++r)
    est.phase_drifts.push_back(std::arg(per_rep[r].dot(per_rep[r + 1])));  // dot conjugates its first argument
  est.drift_spacing = pilot.period();
  est.drift_window = p;
  drift_statistics(est);
  est.tap_var = est.noise_var / (static_cast<double>(pilot.repetitions) * p);
  detect_paths(est);
  return est;
}

CsiEstimate combine(const std::vector<CsiEstimate>& parts) {
  if (parts.empty()) throw std::invalid_argument("combine: no estimates");
  CsiEstimate out;
  out.taps.assign(parts.front().taps.size(), cplx{});
  out.drift_spacing = parts.front().drift_spacing;
  out.drift_window = parts.front().drift_window;
  const double k = static_cast<double>(parts.size());
  for (const auto& e : parts) {
    if (e.taps.size() != out.taps.size()) throw std::invalid_argument("combine: tap windows differ");
    for (std::size_t l = 0; l < e.taps.size(); ++l) out.taps[l] += e.taps[l] / k;
    out.noise_var += e.noise_var / k;
    out.tap_var += e.tap_var / (k * k);
    out.phase_drifts.insert(out.phase_drifts.end(), e.phase_drifts.begin(), e.phase_drifts.end());
  }
  out.est_snr_db = snr_from_noise(out.noise_var);
  drift_statistics(out);
  detect_paths(out);
  return out;
}

CsiEstimate known_csi(const channel::ChannelRealization& ch, std::size_t t) {
  CsiEstimate est;
  est.taps = channel::impulse_response(ch, t);
  est.noise_var = ch.noise_variance();
  est.est_snr_db = snr_from_noise(est.noise_var);
  double power = 0.0, weighted = 0.0;
  for (const auto& p : ch.paths) {
    power += std::norm(p.amplitude);
    weighted += std::norm(p.amplitude) * p.doppler;
  }
  est.doppler = power > 0.0 ? weighted / power : 0.0;
  if (ch.phase_noise.size() >= 3) {
    std::vector<double> inc(ch.phase_noise.size() - 1);
    for (std::size_t k = 1; k < ch.phase_noise.size(); ++k) inc[k - 1] = ch.phase_noise[k] - ch.phase_noise[k - 1];
    double m = 0.0, ss = 0.0;
    for (double v : inc) m += v;
    m /= static_cast<double>(inc.size());
    for (double v : inc) ss += (v - m) * (v - m);
    est.phase_step_var = ss / static_cast<double>(inc.size() - 1);
  }
  detect_paths(est);
  return est;
}

std::array<double, 3> conditioning_vector(double snr_db, double doppler, double phase_dev) {
  const double snr = std::clamp(snr_db, -5.0, 30.0);
  return {(snr + 5.0) / 35.0, std::min(std::abs(doppler) / 0.5, 1.0), std::min(std::abs(phase_dev) / 0.2, 1.0)};
}

AdaptedParams update_parameters(const CsiEstimate& csi) {
  AdaptedParams out;
  std::size_t len = std::max<std::size_t>(csi.taps.size(), 1);
  for (int d : csi.delays) len = std::max(len, static_cast<std::size_t>(d) + 1);
  out.impulse_response.assign(len, cplx{});
  for (std::size_t i = 0; i < csi.gains.size(); ++i) out.impulse_response[csi.delays[i]] += csi.gains[i];
  out.conditioning = conditioning_vector(csi.est_snr_db, csi.doppler, std::sqrt(csi.phase_step_var));
  return out;
}

std::vector<cplx> mmse_weights(const std::vector<cplx>& taps, double noise_var, int n) {
  if (n < static_cast<int>(taps.size())) throw std::invalid_argument("mmse_weights: block shorter than the tap window");
  std::vector<cplx> h = taps;
  h.resize(static_cast<std::size_t>(n));
  std::vector<cplx> w = dsp::fft(h);
  for (auto& v : w) {
    const double den = std::norm(v) + noise_var;
    v = den > 0.0 ? std::conj(v) / den : cplx{};
  }
  return w;
}

std::vector<cplx> apply_weights(const std::vector<cplx>& block, const std::vector<cplx>& weights, bool adjoint) {
  if (block.size() != weights.size()) throw std::invalid_argument("apply_weights: size mismatch");
  std::vector<cplx> f = dsp::fft(block);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] *= adjoint ? std::conj(weights[i]) : weights[i];
  return dsp::ifft(f);
}

ComplexSequence equalize(const ComplexSequence& received, const CsiEstimate& csi) {
  const int n = static_cast<int>(received.size());
  if (n == 0) return received;
  return ComplexSequence(apply_weights(received.samples, mmse_weights(csi.taps, csi.noise_var, n), false),
                         received.sample_interval);
}

double effective_nsr(const CsiEstimate& csi, int n, int pilot_spacing) {
  constexpr double kMax = 1e6;
  std::vector<cplx> h = csi.taps;
  h.resize(static_cast<std::size_t>(std::max<int>(n, static_cast<int>(h.size()))));
  const std::vector<cplx> spec = dsp::fft(h);
  double e = 0.0;
  for (const auto& v : spec) {
    const double den = std::norm(v) + csi.noise_var;
    e += den > 0.0 ? csi.noise_var / den : 1.0;
  }
  e /= static_cast<double>(spec.size());
  double nsr = e < 1.0 ? e / (1.0 - e) : kMax;
  const double s = static_cast<double>(pilot_spacing);
  const double w = kTwoPi * csi.doppler;
  nsr += w * w * s * s / 12.0 + csi.phase_step_var * s / 4.0;
  return std::min(nsr, kMax);
}

ComplexSequence add_cyclic_prefix(const ComplexSequence& x, int cp) {
  if (cp < 0 || cp > static_cast<int>(x.size())) throw std::invalid_argument("cyclic prefix longer than the block");
  std::vector<cplx> out(x.samples.end() - cp, x.samples.end());
  out.insert(out.end(), x.samples.begin(), x.samples.end());
  return ComplexSequence(std::move(out), x.sample_interval);
}

ComplexSequence remove_cyclic_prefix(const ComplexSequence& y, int cp) {
  if (cp < 0 || cp > static_cast<int>(y.size())) throw std::invalid_argument("cyclic prefix longer than the block");
  return ComplexSequence(std::vector<cplx>(y.samples.begin() + cp, y.samples.end()), y.sample_interval);
}

}  // namespace clear::csi
