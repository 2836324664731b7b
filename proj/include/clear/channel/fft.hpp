#pragma once

#include <complex>
#include <vector>

namespace clear::dsp {

using cplx = std::complex<double>;

/// Forward DFT, X[f] = sum_k x[k] exp(-j 2 pi f k / n). Any length.
std::vector<cplx> fft(const std::vector<cplx>& x);
/// Inverse DFT with 1/n scaling.
std::vector<cplx> ifft(const std::vector<cplx>& x);

}  // namespace clear::dsp
