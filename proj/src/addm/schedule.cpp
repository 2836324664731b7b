#include <cmath>
#include <sstream>
#include <stdexcept>

#include "clear/addm/addm.hpp"

namespace clear::addm {

namespace {
double final_alpha_bar(int T, double beta_1, double beta_T) {
  double ab = 1.0;
  for (int t = 1; t <= T; ++t) ab *= 1.0 - (beta_1 + (beta_T - beta_1) * (t - 1) / (T - 1));
  return ab;
}

std::vector<double> linear_betas(int T, double beta_1, double beta_T) {
  std::vector<double> b(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) b[t - 1] = beta_1 + (beta_T - beta_1) * (t - 1) / (T - 1);
  return b;
}
}  // namespace

NoiseSchedule schedule_from_betas(const std::vector<double>& betas) {
  if (betas.empty()) throw std::invalid_argument("schedule: need at least one step");
  NoiseSchedule s;
  s.T = static_cast<int>(betas.size());
  s.beta.assign(1, 0.0);
  s.alpha.assign(1, 1.0);
  s.alpha_bar.assign(1, 1.0);
  s.sigma.assign(1, 0.0);
  for (int t = 1; t <= s.T; ++t) {
    const double b = betas[t - 1];
    if (!(b >= 0.0 && b < 1.0)) throw std::invalid_argument("schedule: beta must lie in [0, 1)");
    s.beta.push_back(b);
    s.alpha.push_back(1.0 - b);
    s.alpha_bar.push_back(s.alpha_bar.back() * (1.0 - b));
    s.sigma.push_back(t == 1 ? 0.0 : std::sqrt(b));
  }
  return s;
}

NoiseSchedule make_schedule(int T, double alpha_bar_T_target) {
  if (T < 2) throw std::invalid_argument("make_schedule: T must be >= 2");
  if (!(alpha_bar_T_target > 0.0 && alpha_bar_T_target < 1.0))
    throw std::invalid_argument("make_schedule: target must lie in (0, 1)");
  constexpr double kBetaMax = 0.999;
  const double beta_1 = 0.1 / T;
  const double best = final_alpha_bar(T, beta_1, kBetaMax);
  if (best > alpha_bar_T_target) {
    std::ostringstream msg;
    msg << "make_schedule: alpha_bar_T target " << alpha_bar_T_target << " unreachable with T=" << T
        << "; smallest achievable is " << best;
    throw std::invalid_argument(msg.str());
  }
  // alpha_bar_T falls monotonically in beta_T; keep beta_T above beta_1 so the
  // per-step alphas strictly decrease.
  double lo = beta_1, hi = kBetaMax;
  if (final_alpha_bar(T, beta_1, beta_1 * (1.0 + 1e-6)) <= alpha_bar_T_target) hi = beta_1 * (1.0 + 1e-6);
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    (final_alpha_bar(T, beta_1, mid) <= alpha_bar_T_target ? hi : lo) = mid;
  }
  return schedule_from_betas(linear_betas(T, beta_1, hi));
}

NoiseSchedule subsample(const NoiseSchedule& base, int stride) {
  if (stride < 1 || base.T % stride != 0) throw std::invalid_argument("subsample: stride must divide T");
  std::vector<double> betas;
  for (int t = stride; t <= base.T; t += stride)
    betas.push_back(1.0 - base.alpha_bar[t] / base.alpha_bar[t - stride]);
  return schedule_from_betas(betas);
}

int start_step(const NoiseSchedule& sched, double nsr) {
  if (!(nsr > 1e-10)) return 0;
  for (int t = 1; t <= sched.T; ++t)
    if (sched.noise_to_signal(t) >= nsr) return t;
  return sched.T;
}

}  // namespace clear::addm
