#include <cmath>
#include <stdexcept>

#include "clear/addm/addm.hpp"

namespace clear::addm {

namespace {
void require_step(const NoiseSchedule& sched, int t) {
  if (t < 1 || t > sched.T)
    throw std::invalid_argument("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(sched.T) + "]");
}

Tensor channel_term(const Tensor& x0, const ChannelOp& channel) {
  if (!channel) return x0;
  Tensor c = channel(x0);
  nn::require_same_shape(c, x0, "channel term");
  return c;
}
}  // namespace

Diffused forward_diffuse(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched, int t,
                         std::uint64_t seed) {
  require_step(sched, t);
  Rng rng(seed);
  Diffused out;
  out.eps = rng.normal_tensor(x0.shape());
  out.x_t = channel_term(x0, channel);
  out.x_t *= std::sqrt(sched.alpha_bar[t]);
  const double s = std::sqrt(1.0 - sched.alpha_bar[t]);
  for (std::size_t i = 0; i < out.x_t.numel(); ++i) out.x_t[i] += s * out.eps[i];
  return out;
}

std::vector<Tensor> diffuse_sequence(const Tensor& x0, const ChannelOp& channel, const NoiseSchedule& sched,
                                     std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> seq;
  seq.reserve(static_cast<std::size_t>(sched.T));
  Tensor x = channel_term(x0, channel);
  for (int t = 1; t <= sched.T; ++t) {
    const double a = std::sqrt(sched.alpha[t]), s = std::sqrt(1.0 - sched.alpha[t]);
    for (double& v : x.data()) v = a * v + s * rng.normal();
    seq.push_back(x);
  }
  return seq;
}

}  // namespace clear::addm
