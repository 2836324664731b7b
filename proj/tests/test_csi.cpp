#include <cmath>
#include <numbers>

#include "clear/channel/fft.hpp"
#include "clear/csi/csi.hpp"
#include "clear/numerics/rng.hpp"
#include "doctest.h"

using namespace clear;
using namespace clear::csi;
using channel::ChannelConfig;
using channel::ChannelRealization;
using channel::PathSpec;
using channel::Profile;

namespace {

constexpr int kPilotLen = 16;
constexpr int kMaxDelay = 3;

ChannelRealization fixed_channel(std::vector<PathSpec> paths, std::size_t n, double snr_db) {
  ChannelRealization ch;
  ch.paths = std::move(paths);
  ch.phase_noise.assign(n, 0.0);
  ch.length = n;
  ch.snr_db = snr_db;
  ch.profile = Profile::rayleigh;
  return ch;
}

CsiEstimate sound(const PilotBlock& pilot, const ChannelRealization& ch, std::uint64_t noise_seed) {
  return estimate_csi(pilot, channel::apply_channel(pilot_waveform(pilot), ch, noise_seed), kMaxDelay);
}

ComplexSequence random_symbols(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<cplx> s(n);
  for (auto& v : s) v = rng.complex_normal(1.0);
  return ComplexSequence(std::move(s));
}

// Sends x with a cyclic prefix through `ch` and returns the equalized block.
double equalized_mse(const ComplexSequence& x, const ChannelRealization& ch, const CsiEstimate& est,
                     std::uint64_t noise_seed) {
  const auto tx = add_cyclic_prefix(x, kMaxDelay);
  const auto rx = remove_cyclic_prefix(channel::apply_channel(tx, ch, noise_seed), kMaxDelay);
  const auto eq = equalize(rx, est);
  double err = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) err += std::norm(eq.samples[k] - x.samples[k]);
  return err / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("make_pilot") {
  const auto p = make_pilot(64, 3);
  REQUIRE(p.symbols.size() == 64);
  for (const auto& s : p.symbols.samples) CHECK(std::abs(std::abs(s) - 1.0) < 1e-14);
  CHECK(p.symbols.average_power() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(make_pilot(64, 3).symbols.samples == p.symbols.samples);
  CHECK(make_pilot(64, 4).symbols.samples != p.symbols.samples);
  CHECK_THROWS_AS(make_pilot(7, 1), std::invalid_argument);

  // Periodic autocorrelation: mainlobe 64, largest sidelobe measured for seed 3.
  double side = 0.0;
  for (int lag = 1; lag < 64; ++lag) {
    cplx acc = 0.0;
    for (int k = 0; k < 64; ++k) acc += p.symbols.samples[(k + lag) % 64] * std::conj(p.symbols.samples[k]);
    side = std::max(side, std::abs(acc));
  }
  CHECK(side == doctest::Approx(13.905049308232718).epsilon(1e-12));
  CHECK(side < 64.0);
}

TEST_CASE("pilot waveform layout") {
  const auto p = make_pilot(8, 1, 3, 2);
  const auto w = pilot_waveform(p);
  REQUIRE(w.size() == 30);
  for (int r = 0; r < 3; ++r) {
    CHECK(w.samples[r * 10] == p.symbols.samples[6]);
    CHECK(w.samples[r * 10 + 1] == p.symbols.samples[7]);
    for (int i = 0; i < 8; ++i) CHECK(w.samples[r * 10 + 2 + i] == p.symbols.samples[i]);
  }
}

TEST_CASE("estimate_csi: noiseless identity and two-path channels") {
  const auto pilot = make_pilot(kPilotLen, 7, 2, kMaxDelay);
  const std::size_t n = pilot.waveform_length();

  const auto id = sound(pilot, fixed_channel({PathSpec{}}, n, INFINITY), 0);
  REQUIRE(id.gains.size() == 1);
  CHECK(std::abs(id.gains[0] - 1.0) < 1e-9);
  CHECK(id.delays == std::vector<int>{0});
  CHECK(id.noise_var < 1e-18);
  CHECK(id.est_snr_db == kSnrCapDb);

  const double a = 1.0 / std::sqrt(2.0);
  const auto two = sound(pilot, fixed_channel({PathSpec{a, 0, 0, 0}, PathSpec{a, 2, 0, 0}}, n, INFINITY), 0);
  REQUIRE(two.taps.size() == 4);
  CHECK(std::abs(two.taps[0] - a) < 1e-6);
  CHECK(std::abs(two.taps[1]) < 1e-6);
  CHECK(std::abs(two.taps[2] - a) < 1e-6);
  CHECK(std::abs(two.taps[3]) < 1e-6);
  CHECK(two.delays == std::vector<int>{0, 2});
}

TEST_CASE("estimate_csi recovers planted on-grid channels without noise") {
  const auto pilot = make_pilot(kPilotLen, 9, 2, kMaxDelay);
  ChannelConfig cfg;
  cfg.profile = Profile::rayleigh;
  cfg.max_delay = kMaxDelay;
  cfg.snr_db = INFINITY;
  for (int paths = 1; paths <= kMaxDelay; ++paths)
    for (std::uint64_t s = 0; s < 30; ++s) {
      cfg.paths = paths;
      const auto ch = channel::realize_channel(cfg, pilot.waveform_length(), s);
      const auto est = sound(pilot, ch, 0);
      const auto truth = channel::impulse_response(ch, 0);
      for (std::size_t l = 0; l < truth.size(); ++l) CHECK(std::abs(est.taps[l] - truth[l]) < 1e-6);
      for (std::size_t l = truth.size(); l < est.taps.size(); ++l) CHECK(std::abs(est.taps[l]) < 1e-6);
      double power = 0.0, planted = 0.0;
      for (const auto& g : est.gains) power += std::norm(g);
      for (const auto& h : truth) planted += std::norm(h);
      CHECK(std::abs(power - planted) < 1e-6);
    }
}

TEST_CASE("estimation MSE is monotone in pilot SNR") {
  const auto pilot = make_pilot(kPilotLen, 11, 2, kMaxDelay);
  ChannelConfig cfg;
  cfg.profile = Profile::rayleigh;
  cfg.paths = 3;
  cfg.max_delay = kMaxDelay;
  std::vector<double> mse;
  for (double snr : {0.0, 10.0, 20.0, 30.0}) {
    cfg.snr_db = snr;
    double acc = 0.0;
    for (std::uint64_t s = 0; s < 100; ++s) {
      const auto ch = channel::realize_channel(cfg, pilot.waveform_length(), derive_seed(1, "mse", s));
      const auto est = sound(pilot, ch, derive_seed(2, "mse", s));
      const auto truth = channel::impulse_response(ch, 0);
      for (std::size_t l = 0; l < est.taps.size(); ++l)
        acc += std::norm(est.taps[l] - (l < truth.size() ? truth[l] : cplx{}));
    }
    mse.push_back(acc / 100.0);
  }
  CAPTURE(mse[0]);
  CAPTURE(mse[3]);
  for (std::size_t i = 1; i < mse.size(); ++i) CHECK(mse[i] < mse[i - 1]);
}

TEST_CASE("estimate_csi rejects degenerate input") {
  PilotBlock flat{ComplexSequence(std::vector<cplx>(kPilotLen, 1.0)), 1, kMaxDelay};
  const auto rx = pilot_waveform(flat);
  CHECK_THROWS_AS(estimate_csi(flat, rx, kMaxDelay), std::invalid_argument);
  const auto pilot = make_pilot(8, 1, 1, kMaxDelay);
  CHECK_THROWS_AS(estimate_csi(pilot, ComplexSequence(std::vector<cplx>(5)), kMaxDelay), std::invalid_argument);
  CHECK_THROWS_AS(estimate_csi(pilot, pilot_waveform(pilot), 8), std::invalid_argument);
}

TEST_CASE("estimate_csi: snr, Doppler and phase-noise statistics") {
  const auto pilot = make_pilot(kPilotLen, 13, 400, kMaxDelay);
  const std::size_t n = pilot.waveform_length();

  const auto noisy = sound(pilot, fixed_channel({PathSpec{}}, n, 10.0), 5);
  CHECK(noisy.est_snr_db == doctest::Approx(10.0).epsilon(0.03));

  auto rot = fixed_channel({PathSpec{cplx(0.6, 0.8), 1, 0.004, 0.3}}, n, INFINITY);
  const auto est_rot = sound(pilot, rot, 0);
  CHECK(est_rot.doppler == doctest::Approx(0.004).epsilon(1e-6));
  CHECK(est_rot.phase_step_var < 1e-12);

  auto wander = fixed_channel({PathSpec{}}, n, INFINITY);
  wander.phase_noise = channel::phase_noise_trajectory(0.05, n, 17);
  const auto est_pn = sound(pilot, wander, 0);
  CHECK(std::sqrt(est_pn.phase_step_var) == doctest::Approx(0.05).epsilon(0.1));
}

TEST_CASE("combine pools slot estimates") {
  const auto pilot = make_pilot(kPilotLen, 13, 2, kMaxDelay);
  const std::size_t n = pilot.waveform_length();
  const auto a = sound(pilot, fixed_channel({PathSpec{}}, n, 10.0), 1);
  const auto b = sound(pilot, fixed_channel({PathSpec{}}, n, 10.0), 2);
  const auto c = combine({a, b});
  for (std::size_t l = 0; l < c.taps.size(); ++l) CHECK(std::abs(c.taps[l] - 0.5 * (a.taps[l] + b.taps[l])) < 1e-15);
  CHECK(c.noise_var == doctest::Approx(0.5 * (a.noise_var + b.noise_var)));
  CHECK(c.phase_drifts.size() == 2);
  CHECK_THROWS_AS(combine({}), std::invalid_argument);
}

TEST_CASE("update_parameters") {
  const CsiEstimate zero;
  const auto z = update_parameters(zero);
  for (const auto& h : z.impulse_response) CHECK(h == cplx{});
  CHECK(z.conditioning[0] == doctest::Approx(5.0 / 35.0));
  CHECK(z.conditioning[1] == 0.0);
  CHECK(z.conditioning[2] == 0.0);

  CsiEstimate unit;
  unit.taps = {1.0, 0.0, 0.0};
  unit.gains = {1.0};
  unit.delays = {0};
  unit.est_snr_db = 100.0;
  const auto u = update_parameters(unit);
  CHECK(u.impulse_response == std::vector<cplx>{1.0, 0.0, 0.0});
  CHECK(u.conditioning[0] == 1.0);

  CsiEstimate medium;
  medium.est_snr_db = 15.0;
  medium.doppler = 0.05;
  medium.phase_step_var = 0.05 * 0.05;
  const auto m = update_parameters(medium);
  CHECK(m.conditioning[0] == doctest::Approx(20.0 / 35.0).epsilon(1e-14));
  CHECK(m.conditioning[1] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(m.conditioning[2] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(update_parameters(medium).conditioning == m.conditioning);

  const auto hi = conditioning_vector(80.0, -3.0, 9.0);
  CHECK(hi == std::array<double, 3>{1.0, 1.0, 1.0});
  CHECK(conditioning_vector(-40.0, 0.0, 0.0)[0] == 0.0);
}

TEST_CASE("equalize: identity, known two-path at 40 dB, zero-snr shrinkage") {
  const auto x = random_symbols(512, 1);
  CsiEstimate id;
  id.taps = {1.0, 0.0};
  id.noise_var = 0.0;
  const auto same = equalize(x, id);
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(same.samples[k] - x.samples[k]) < 1e-12);

  // Spectrum bounded away from zero: |H|^2 >= (0.8 - 0.6)^2.
  const auto ch = fixed_channel({PathSpec{0.8, 0, 0, 0}, PathSpec{0.6, 2, 0, 0}}, 512 + kMaxDelay, 40.0);
  CsiEstimate known = known_csi(ch, 0);
  known.taps.resize(kMaxDelay + 1);
  CHECK(equalized_mse(x, ch, known, 3) < 1e-3);

  CsiEstimate deaf = id;
  deaf.noise_var = 1.0;
  CHECK(equalize(x, deaf).average_power() < x.average_power());
}

TEST_CASE("equalize after a random channel is near identity at 40 dB") {
  ChannelConfig cfg;
  cfg.profile = Profile::rayleigh;
  cfg.paths = 4;
  cfg.max_delay = kMaxDelay;
  cfg.snr_db = 40.0;
  double acc = 0.0;
  const int draws = 200;
  for (int s = 0; s < draws; ++s) {
    const auto x = random_symbols(256, derive_seed(3, "eqx", s));
    const auto ch = channel::realize_channel(cfg, 256 + kMaxDelay, derive_seed(3, "eqc", s));
    acc += equalized_mse(x, ch, known_csi(ch, 0), derive_seed(3, "eqn", s));
  }
  CHECK(acc / draws < 1e-3);
}

TEST_CASE("weights adjoint and effective NSR") {
  Rng rng(4);
  std::vector<cplx> taps{rng.complex_normal(), rng.complex_normal(), rng.complex_normal()};
  const auto w = mmse_weights(taps, 0.1, 32);
  const auto a = random_symbols(32, 5), b = random_symbols(32, 6);
  const auto wa = apply_weights(a.samples, w, false), wtb = apply_weights(b.samples, w, true);
  cplx lhs = 0.0, rhs = 0.0;
  for (int k = 0; k < 32; ++k) {
    lhs += std::conj(b.samples[k]) * wa[k];
    rhs += std::conj(wtb[k]) * a.samples[k];
  }
  CHECK(std::abs(lhs - rhs) < 1e-12);

  CsiEstimate id;
  id.taps = {1.0};
  id.noise_var = 0.05;
  CHECK(effective_nsr(id, 64, 0) == doctest::Approx(0.05).epsilon(1e-12));
  id.doppler = 0.01;
  CHECK(effective_nsr(id, 64, 40) > 0.05);
}

TEST_CASE("cyclic prefix round trip") {
  const auto x = random_symbols(10, 2);
  const auto with = add_cyclic_prefix(x, 3);
  REQUIRE(with.size() == 13);
  CHECK(with.samples[0] == x.samples[7]);
  CHECK(remove_cyclic_prefix(with, 3).samples == x.samples);
  CHECK_THROWS_AS(add_cyclic_prefix(x, 11), std::invalid_argument);
}
