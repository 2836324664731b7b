#include "clear/channel/fft.hpp"

#include <unsupported/Eigen/FFT>

namespace clear::dsp {

std::vector<cplx> fft(const std::vector<cplx>& x) {
  if (x.empty()) return {};
  Eigen::FFT<double> engine;
  std::vector<cplx> out;
  engine.fwd(out, x);
  return out;
}

std::vector<cplx> ifft(const std::vector<cplx>& x) {
  if (x.empty()) return {};
  Eigen::FFT<double> engine;
  std::vector<cplx> out;
  engine.inv(out, x);
  return out;
}

}  // namespace clear::dsp
