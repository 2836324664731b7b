#include "clear/numerics/layers.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace clear::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct ConvGeom {
  int n, in_c, in_h, in_w;
  int out_c, k, stride, pad;
  int out_h, out_w;
};

// Unfolds one image (C, H, W) into (C*k*k, out_h*out_w).
void im2col(const double* img, const ConvGeom& g, double* cols) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < g.in_c; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = cols + ((c * g.k + ky) * g.k + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[oy * g.out_w + ox] = (iy >= 0 && iy < g.in_h && ix >= 0 && ix < g.in_w)
                                         ? img[(c * g.in_h + iy) * g.in_w + ix]
                                         : 0.0;
          }
        }
      }
}

// Adjoint of im2col: scatters columns back and accumulates into the image.
void col2im(const double* cols, const ConvGeom& g, double* img) {
  const int out_hw = g.out_h * g.out_w;
  for (int c = 0; c < g.in_c; ++c)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = cols + ((c * g.k + ky) * g.k + kx) * out_hw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) img[(c * g.in_h + iy) * g.in_w + ix] += row[oy * g.out_w + ox];
          }
        }
      }
}

bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

// y (N, O, oh, ow) = conv(x (N, I, H, W), w)
Tensor conv_forward(const Tensor& x, const Tensor& w, const ConvGeom& g) {
  Tensor y(Shape{g.n, g.out_c, g.out_h, g.out_w});
  const int ckk = g.in_c * g.k * g.k, ohw = g.out_h * g.out_w, ihw = g.in_h * g.in_w;
  CMapMat W(w.data().data(), g.out_c, ckk);
  std::vector<double> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(ckk) * ohw);
  for (int i = 0; i < g.n; ++i) {
    const double* xi = x.data().data() + static_cast<std::size_t>(i) * g.in_c * ihw;
    if (!is_pointwise(g)) im2col(xi, g, cols.data());
    MapMat(y.data().data() + static_cast<std::size_t>(i) * g.out_c * ohw, g.out_c, ohw).noalias() =
        W * CMapMat(is_pointwise(g) ? xi : cols.data(), ckk, ohw);
  }
  return y;
}

// Adjoint of conv_forward with respect to the input.
Tensor conv_input_adjoint(const Tensor& gy, const Tensor& w, const ConvGeom& g) {
  Tensor gx(Shape{g.n, g.in_c, g.in_h, g.in_w});
  const int ckk = g.in_c * g.k * g.k, ohw = g.out_h * g.out_w, ihw = g.in_h * g.in_w;
  CMapMat W(w.data().data(), g.out_c, ckk);
  std::vector<double> cols(static_cast<std::size_t>(ckk) * ohw);
  for (int i = 0; i < g.n; ++i) {
    double* gxi = gx.data().data() + static_cast<std::size_t>(i) * g.in_c * ihw;
    CMapMat G(gy.data().data() + static_cast<std::size_t>(i) * g.out_c * ohw, g.out_c, ohw);
    if (is_pointwise(g)) {
      MapMat(gxi, ckk, ohw).noalias() = W.transpose() * G;
    } else {
      MapMat(cols.data(), ckk, ohw).noalias() = W.transpose() * G;
      col2im(cols.data(), g, gxi);
    }
  }
  return gx;
}

// Gradient of <conv_forward(x, w), gy> with respect to w.
Tensor conv_weight_grad(const Tensor& x, const Tensor& gy, const ConvGeom& g) {
  Tensor gw(Shape{g.out_c, g.in_c, g.k, g.k});
  const int ckk = g.in_c * g.k * g.k, ohw = g.out_h * g.out_w, ihw = g.in_h * g.in_w;
  MapMat GW(gw.data().data(), g.out_c, ckk);
  std::vector<double> cols(is_pointwise(g) ? 0 : static_cast<std::size_t>(ckk) * ohw);
  for (int i = 0; i < g.n; ++i) {
    const double* xi = x.data().data() + static_cast<std::size_t>(i) * g.in_c * ihw;
    if (!is_pointwise(g)) im2col(xi, g, cols.data());
    GW.noalias() += CMapMat(gy.data().data() + static_cast<std::size_t>(i) * g.out_c * ohw, g.out_c, ohw) *
                    CMapMat(is_pointwise(g) ? xi : cols.data(), ckk, ohw).transpose();
  }
  return gw;
}

void check_conv_args(const Var& input, const Var& kernels, int stride, int padding, const char* what) {
  if (input.shape().size() != 4 || kernels.shape().size() != 4)
    throw std::invalid_argument(std::string(what) + ": expected NCHW input and OIkk kernels, got " +
                                shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
  if (kernels.dim(2) != kernels.dim(3))
    throw std::invalid_argument(std::string(what) + ": non-square kernel " + shape_str(kernels.shape()));
  if (stride < 1 || padding < 0)
    throw std::invalid_argument(std::string(what) + ": stride must be >= 1 and padding >= 0");
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

int transpose_conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in - 1) * stride - 2 * padding + kernel;
}

Var conv2d(const Var& input, const Var& kernels, const Var& bias, int stride, int padding) {
  check_conv_args(input, kernels, stride, padding, "conv2d");
  if (kernels.dim(2) % 2 == 0)
    throw std::invalid_argument("conv2d: kernel extent must be odd, got " + shape_str(kernels.shape()));
  if (input.dim(1) != kernels.dim(1))
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " channel count does not match kernels " +
                                shape_str(kernels.shape()));
  ConvGeom g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernels.dim(0), kernels.dim(2), stride, padding, 0, 0};
  g.out_h = conv_out_extent(g.in_h, g.k, stride, padding);
  g.out_w = conv_out_extent(g.in_w, g.k, stride, padding);
  if (g.in_h + 2 * padding < g.k || g.in_w + 2 * padding < g.k)
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " too small for kernels " +
                                shape_str(kernels.shape()));
  Var out = record(conv_forward(input.value(), kernels.value(), g), {input, kernels},
                   [g](const Tensor& gy, const std::vector<Node*>& in) {
                     if (in[0]->requires_grad) in[0]->accumulate(conv_input_adjoint(gy, in[1]->value, g));
                     if (in[1]->requires_grad) in[1]->accumulate(conv_weight_grad(in[0]->value, gy, g));
                   });
  return bias.defined() ? add_channel_bias(out, bias) : out;
}

Var transpose_conv2d(const Var& input, const Var& kernels, const Var& bias, int stride, int padding) {
  check_conv_args(input, kernels, stride, padding, "transpose_conv2d");
  if (input.dim(1) != kernels.dim(0))
    throw std::invalid_argument("transpose_conv2d: input " + shape_str(input.shape()) +
                                " channel count does not match kernels " + shape_str(kernels.shape()));
  // Geometry of the forward convolution this operator is the adjoint of.
  ConvGeom g{input.dim(0), kernels.dim(1), 0, 0, kernels.dim(0), kernels.dim(2), stride, padding, input.dim(2), input.dim(3)};
  g.in_h = transpose_conv_out_extent(g.out_h, g.k, stride, padding);
  g.in_w = transpose_conv_out_extent(g.out_w, g.k, stride, padding);
  if (g.in_h < 1 || g.in_w < 1)
    throw std::invalid_argument("transpose_conv2d: input " + shape_str(input.shape()) + " too small for kernels " +
                                shape_str(kernels.shape()));
  Var out = record(conv_input_adjoint(input.value(), kernels.value(), g), {input, kernels},
                   [g](const Tensor& gy, const std::vector<Node*>& in) {
                     if (in[0]->requires_grad) in[0]->accumulate(conv_forward(gy, in[1]->value, g));
                     if (in[1]->requires_grad) in[1]->accumulate(conv_weight_grad(gy, in[0]->value, g));
                   });
  return bias.defined() ? add_channel_bias(out, bias) : out;
}

Var batch_norm(const Var& input, const Var& gamma, const Var& beta, BatchNormStats& stats, double epsilon,
               double momentum, bool training) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("batch_norm: expected NCHW input, got " + shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1);
  const int hw = input.dim(2) * input.dim(3);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw std::invalid_argument("batch_norm: affine params " + shape_str(gamma.shape()) + " vs input " +
                                shape_str(input.shape()));
  if (!(epsilon > 0.0)) throw std::invalid_argument("batch_norm: epsilon must be positive");
  if (stats.running_mean.empty()) stats.running_mean = Tensor::zeros({c});
  if (stats.running_var.empty()) stats.running_var = Tensor::full({c}, 1.0);

  const double count = static_cast<double>(n) * hw;
  const Tensor& x = input.value();
  Tensor mu(Shape{c}), inv_std(Shape{c});
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < hw; ++k) s += x[(static_cast<std::size_t>(i) * c + ch) * hw + k];
      const double m = s / count;
      double v = 0.0;
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < hw; ++k) {
          const double d = x[(static_cast<std::size_t>(i) * c + ch) * hw + k] - m;
          v += d * d;
        }
      v /= count;
      mu[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + epsilon);
      const double unbiased = count > 1.0 ? v * count / (count - 1.0) : v;
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * m;
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mu[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + epsilon);
    }
  }

  Tensor xhat(x.shape()), y(x.shape());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < hw; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * hw + k;
        xhat[idx] = (x[idx] - mu[ch]) * inv_std[ch];
        y[idx] = gamma.value()[ch] * xhat[idx] + beta.value()[ch];
      }

  return record(std::move(y), {input, gamma, beta},
                [xhat = std::move(xhat), inv_std, n, c, hw, count, training](const Tensor& g,
                                                                             const std::vector<Node*>& in) {
                  Tensor sum_g(Shape{c}), sum_gx(Shape{c});
                  for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch)
                      for (int k = 0; k < hw; ++k) {
                        const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * hw + k;
                        sum_g[ch] += g[idx];
                        sum_gx[ch] += g[idx] * xhat[idx];
                      }
                  if (in[0]->requires_grad) {
                    Tensor gx(g.shape());
                    for (int i = 0; i < n; ++i)
                      for (int ch = 0; ch < c; ++ch) {
                        const double gam = in[1]->value[ch];
                        for (int k = 0; k < hw; ++k) {
                          const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * hw + k;
                          gx[idx] = training ? gam * inv_std[ch] / count *
                                                   (count * g[idx] - sum_g[ch] - xhat[idx] * sum_gx[ch])
                                             : gam * inv_std[ch] * g[idx];
                        }
                      }
                    in[0]->accumulate(gx);
                  }
                  if (in[1]->requires_grad) in[1]->accumulate(sum_gx);
                  if (in[2]->requires_grad) in[2]->accumulate(sum_g);
                });
}

Var max_pool2d(const Var& input) {
  if (input.shape().size() != 4 || input.dim(2) % 2 || input.dim(3) % 2)
    throw std::invalid_argument("max_pool2d: expected NCHW input with even spatial extents, got " +
                                shape_str(input.shape()));
  const int nc = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = h / 2, ow = w / 2;
  Tensor out(Shape{input.dim(0), input.dim(1), oh, ow});
  std::vector<std::size_t> argmax(out.numel());
  const Tensor& x = input.value();
  for (int p = 0; p < nc; ++p)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = (static_cast<std::size_t>(p) * h + 2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (static_cast<std::size_t>(p) * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + oy) * ow + ox;
        out[o] = x[best];
        argmax[o] = best;
      }
  return record(std::move(out), {input}, [argmax = std::move(argmax)](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gx(in[0]->value.shape());
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += g[o];
    in[0]->accumulate(gx);
  });
}

AttentionResult self_attention(const Var& input, const AttentionParams& p) {
  if (input.shape().size() != 4)
    throw std::invalid_argument("self_attention: expected NCHW input, got " + shape_str(input.shape()));
  const int n = input.dim(0), c = input.dim(1), pos = input.dim(2) * input.dim(3);
  if (p.wv.dim(0) != c)
    throw std::invalid_argument("self_attention: value projection " + shape_str(p.wv.shape()) + " vs input " +
                                shape_str(input.shape()));
  const int d = p.wq.dim(0);
  Var q = reshape(conv2d(input, p.wq, p.bq, 1, 0), {n, d, pos});
  Var k = reshape(conv2d(input, p.wk, p.bk, 1, 0), {n, d, pos});
  Var v = reshape(conv2d(input, p.wv, p.bv, 1, 0), {n, c, pos});
  Var scores = scale(bmm(transpose12(q), k), 1.0 / std::sqrt(static_cast<double>(d)));
  Var weights = softmax_last(scores);
  Var attended = bmm(v, transpose12(weights));
  return {add(input, reshape(attended, input.shape())), weights};
}

Tensor sine_time_embedding(double t, int dim) {
  if (dim <= 0 || dim % 2) throw std::invalid_argument("sine_time_embedding: dim must be positive and even");
  const int half = dim / 2;
  Tensor e(Shape{dim});
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

Tensor sine_time_embedding(const std::vector<int>& steps, int dim) {
  Tensor out(Shape{static_cast<int>(steps.size()), dim});
  for (std::size_t i = 0; i < steps.size(); ++i) {
    Tensor e = sine_time_embedding(static_cast<double>(steps[i]), dim);
    std::copy(e.vec().begin(), e.vec().end(), out.vec().begin() + i * dim);
  }
  return out;
}

}  // namespace clear::nn
