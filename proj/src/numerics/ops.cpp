#include "clear/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clear::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

template <typename F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

std::size_t inner_size(const Shape& s, std::size_t from) {
  std::size_t n = 1;
  for (std::size_t i = from; i < s.size(); ++i) n *= static_cast<std::size_t>(s[i]);
  return n;
}

void require_rank_at_least(const Var& x, std::size_t r, const char* what) {
  if (x.shape().size() < r)
    throw std::invalid_argument(std::string(what) + ": rank " + std::to_string(r) + "+ required, got " +
                                shape_str(x.shape()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  return record(a.value() + b.value(), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) in[1]->accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  return record(a.value() - b.value(), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) in[1]->accumulate(g * -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return record(std::move(out), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor ga(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] = g[i] * in[1]->value[i];
      in[0]->accumulate(ga);
    }
    if (in[1]->requires_grad) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] = g[i] * in[0]->value[i];
      in[1]->accumulate(gb);
    }
  });
}

Var scale(const Var& a, double s) {
  return record(a.value() * s, {a}, [s](const Tensor& g, const std::vector<Node*>& in) { in[0]->accumulate(g * s); });
}

Var add_scalar(const Var& a, double s) {
  return record(map_values(a.value(), [s](double v) { return v + s; }), {a},
                [](const Tensor& g, const std::vector<Node*>& in) { in[0]->accumulate(g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var relu(const Var& a) {
  return record(map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                [](const Tensor& g, const std::vector<Node*>& in) {
                  Tensor gi(g.shape());
                  for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = in[0]->value[i] > 0.0 ? g[i] : 0.0;
                  in[0]->accumulate(gi);
                });
}

Var sigmoid(const Var& a) {
  Tensor out = map_values(a.value(), [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  Tensor saved = out;
  return record(std::move(out), {a}, [saved](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gi(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = g[i] * saved[i] * (1.0 - saved[i]);
    in[0]->accumulate(gi);
  });
}

Var square(const Var& a) {
  return record(map_values(a.value(), [](double v) { return v * v; }), {a},
                [](const Tensor& g, const std::vector<Node*>& in) {
                  Tensor gi(g.shape());
                  for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = 2.0 * in[0]->value[i] * g[i];
                  in[0]->accumulate(gi);
                });
}

Var sqrt(const Var& a) {
  Tensor out = map_values(a.value(), [](double v) { return std::sqrt(v); });
  Tensor saved = out;
  return record(std::move(out), {a}, [saved](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gi(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = g[i] * 0.5 / saved[i];
    in[0]->accumulate(gi);
  });
}

Var reciprocal(const Var& a) {
  Tensor out = map_values(a.value(), [](double v) { return 1.0 / v; });
  Tensor saved = out;
  return record(std::move(out), {a}, [saved](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gi(g.shape());
    for (std::size_t i = 0; i < g.numel(); ++i) gi[i] = -g[i] * saved[i] * saved[i];
    in[0]->accumulate(gi);
  });
}

Var clamp01(const Var& a) {
  return record(map_values(a.value(), [](double v) { return std::clamp(v, 0.0, 1.0); }), {a},
                [](const Tensor& g, const std::vector<Node*>& in) {
                  Tensor gi(g.shape());
                  for (std::size_t i = 0; i < g.numel(); ++i) {
                    const double v = in[0]->value[i];
                    gi[i] = (v >= 0.0 && v <= 1.0) ? g[i] : 0.0;
                  }
                  in[0]->accumulate(gi);
                });
}

Var detach(const Var& a) { return constant(a.value()); }

Var sum(const Var& a) {
  return record(Tensor::scalar(a.value().sum()), {a}, [](const Tensor& g, const std::vector<Node*>& in) {
    in[0]->accumulate(Tensor::full(in[0]->value.shape(), g[0]));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.numel());
  return record(Tensor::scalar(a.value().mean()), {a}, [n](const Tensor& g, const std::vector<Node*>& in) {
    in[0]->accumulate(Tensor::full(in[0]->value.shape(), g[0] / n));
  });
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var reshape(const Var& a, Shape shape) {
  return record(a.value().reshaped(shape), {a}, [](const Tensor& g, const std::vector<Node*>& in) {
    in[0]->accumulate(g.reshaped(in[0]->value.shape()));
  });
}

Var concat1(const Var& a, const Var& b) {
  require_rank_at_least(a, 2, "concat1");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa[0] != sb[0] || inner_size(sa, 2) != inner_size(sb, 2) ||
      !std::equal(sa.begin() + 2, sa.end(), sb.begin() + 2))
    throw std::invalid_argument("concat1: incompatible shapes " + shape_str(sa) + " vs " + shape_str(sb));
  const int n = sa[0];
  const std::size_t ca = inner_size(sa, 1), cb = inner_size(sb, 1);
  Shape so = sa;
  so[1] = sa[1] + sb[1];
  Tensor out(so);
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().vec().begin() + i * ca, ca, out.vec().begin() + i * (ca + cb));
    std::copy_n(b.value().vec().begin() + i * cb, cb, out.vec().begin() + i * (ca + cb) + ca);
  }
  return record(std::move(out), {a, b}, [n, ca, cb](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor ga(in[0]->value.shape());
      for (int i = 0; i < n; ++i) std::copy_n(g.vec().begin() + i * (ca + cb), ca, ga.vec().begin() + i * ca);
      in[0]->accumulate(ga);
    }
    if (in[1]->requires_grad) {
      Tensor gb(in[1]->value.shape());
      for (int i = 0; i < n; ++i)
        std::copy_n(g.vec().begin() + i * (ca + cb) + ca, cb, gb.vec().begin() + i * cb);
      in[1]->accumulate(gb);
    }
  });
}

Var slice1(const Var& a, int start, int len) {
  require_rank_at_least(a, 2, "slice1");
  const Shape& sa = a.shape();
  if (start < 0 || len <= 0 || start + len > sa[1])
    throw std::invalid_argument("slice1: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                                ") outside " + shape_str(sa));
  const int n = sa[0];
  const std::size_t inner = inner_size(sa, 2);
  const std::size_t row = sa[1] * inner, take = len * inner, off = start * inner;
  Shape so = sa;
  so[1] = len;
  Tensor out(so);
  for (int i = 0; i < n; ++i) std::copy_n(a.value().vec().begin() + i * row + off, take, out.vec().begin() + i * take);
  return record(std::move(out), {a}, [n, row, take, off](const Tensor& g, const std::vector<Node*>& in) {
    Tensor ga(in[0]->value.shape());
    for (int i = 0; i < n; ++i) std::copy_n(g.vec().begin() + i * take, take, ga.vec().begin() + i * row + off);
    in[0]->accumulate(ga);
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  require_rank_at_least(x, 2, "add_channel_bias");
  const int n = x.dim(0), c = x.dim(1);
  if (bias.shape() != Shape{c})
    throw std::invalid_argument("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " +
                                shape_str(x.shape()));
  const std::size_t inner = inner_size(x.shape(), 2);
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      double* p = out.data().data() + (static_cast<std::size_t>(i) * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) p[k] += bias.value()[ch];
    }
  return record(std::move(out), {x, bias}, [n, c, inner](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) {
      Tensor gb(Shape{c});
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double* p = g.data().data() + (static_cast<std::size_t>(i) * c + ch) * inner;
          double acc = 0.0;
          for (std::size_t k = 0; k < inner; ++k) acc += p[k];
          gb[ch] += acc;
        }
      in[1]->accumulate(gb);
    }
  });
}

Var mul_nc(const Var& x, const Var& s) {
  require_rank_at_least(x, 2, "mul_nc");
  const int n = x.dim(0), c = x.dim(1);
  if (s.shape() != Shape{n, c})
    throw std::invalid_argument("mul_nc: scale " + shape_str(s.shape()) + " vs input " + shape_str(x.shape()));
  const std::size_t inner = inner_size(x.shape(), 2);
  Tensor out = x.value();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc)
    for (std::size_t k = 0; k < inner; ++k) out[nc * inner + k] *= s.value()[nc];
  return record(std::move(out), {x, s}, [n, c, inner](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor gx(g.shape());
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc)
        for (std::size_t k = 0; k < inner; ++k) gx[nc * inner + k] = g[nc * inner + k] * in[1]->value[nc];
      in[0]->accumulate(gx);
    }
    if (in[1]->requires_grad) {
      Tensor gs(Shape{n, c});
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += g[nc * inner + k] * in[0]->value[nc * inner + k];
        gs[nc] = acc;
      }
      in[1]->accumulate(gs);
    }
  });
}

Var add_nc(const Var& x, const Var& b) {
  require_rank_at_least(x, 2, "add_nc");
  const int n = x.dim(0), c = x.dim(1);
  if (b.shape() != Shape{n, c})
    throw std::invalid_argument("add_nc: shift " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
  const std::size_t inner = inner_size(x.shape(), 2);
  Tensor out = x.value();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc)
    for (std::size_t k = 0; k < inner; ++k) out[nc * inner + k] += b.value()[nc];
  return record(std::move(out), {x, b}, [n, c, inner](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) {
      Tensor gb(Shape{n, c});
      for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += g[nc * inner + k];
        gb[nc] = acc;
      }
      in[1]->accumulate(gb);
    }
  });
}

Var mean_spatial(const Var& x) {
  require_rank_at_least(x, 3, "mean_spatial");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t inner = inner_size(x.shape(), 2);
  Tensor out(Shape{n, c});
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += x.value()[nc * inner + k];
    out[nc] = acc / static_cast<double>(inner);
  }
  return record(std::move(out), {x}, [n, c, inner](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gx(in[0]->value.shape());
    for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * c; ++nc)
      for (std::size_t k = 0; k < inner; ++k) gx[nc * inner + k] = g[nc] / static_cast<double>(inner);
    in[0]->accumulate(gx);
  });
}

Var sum_per_sample(const Var& x) {
  require_rank_at_least(x, 1, "sum_per_sample");
  const int n = x.dim(0);
  const std::size_t inner = inner_size(x.shape(), 1);
  Tensor out(Shape{n});
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += x.value()[i * inner + k];
    out[i] = acc;
  }
  return record(std::move(out), {x}, [n, inner](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gx(in[0]->value.shape());
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < inner; ++k) gx[i * inner + k] = g[i];
    in[0]->accumulate(gx);
  });
}

Var mul_per_sample(const Var& x, const Var& s) {
  require_rank_at_least(x, 1, "mul_per_sample");
  const int n = x.dim(0);
  if (s.shape() != Shape{n})
    throw std::invalid_argument("mul_per_sample: scale " + shape_str(s.shape()) + " vs input " +
                                shape_str(x.shape()));
  const std::size_t inner = inner_size(x.shape(), 1);
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < inner; ++k) out[i * inner + k] *= s.value()[i];
  return record(std::move(out), {x, s}, [n, inner](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor gx(g.shape());
      for (int i = 0; i < n; ++i)
        for (std::size_t k = 0; k < inner; ++k) gx[i * inner + k] = g[i * inner + k] * in[1]->value[i];
      in[0]->accumulate(gx);
    }
    if (in[1]->requires_grad) {
      Tensor gs(Shape{n});
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) acc += g[i * inner + k] * in[0]->value[i * inner + k];
        gs[i] = acc;
      }
      in[1]->accumulate(gs);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || x.dim(1) != weight.dim(1))
    throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()));
  const int n = x.dim(0), in_f = x.dim(1), out_f = weight.dim(0);
  Tensor out(Shape{n, out_f});
  MapMat(out.data().data(), n, out_f).noalias() =
      CMapMat(x.value().data().data(), n, in_f) * CMapMat(weight.value().data().data(), out_f, in_f).transpose();
  std::vector<Var> inputs{x, weight};
  const bool has_bias = bias.defined();
  if (has_bias) {
    if (bias.shape() != Shape{out_f})
      throw std::invalid_argument("linear: bias " + shape_str(bias.shape()) + " vs weight " +
                                  shape_str(weight.shape()));
    for (int i = 0; i < n; ++i)
      for (int o = 0; o < out_f; ++o) out[i * out_f + o] += bias.value()[o];
    inputs.push_back(bias);
  }
  return record(std::move(out), inputs, [n, in_f, out_f, has_bias](const Tensor& g, const std::vector<Node*>& in) {
    CMapMat G(g.data().data(), n, out_f);
    if (in[0]->requires_grad) {
      Tensor gx(Shape{n, in_f});
      MapMat(gx.data().data(), n, in_f).noalias() = G * CMapMat(in[1]->value.data().data(), out_f, in_f);
      in[0]->accumulate(gx);
    }
    if (in[1]->requires_grad) {
      Tensor gw(Shape{out_f, in_f});
      MapMat(gw.data().data(), out_f, in_f).noalias() = G.transpose() * CMapMat(in[0]->value.data().data(), n, in_f);
      in[1]->accumulate(gw);
    }
    if (has_bias && in[2]->requires_grad) {
      Tensor gb(Shape{out_f});
      for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_f; ++o) gb[o] += g[i * out_f + o];
      in[2]->accumulate(gb);
    }
  });
}

Var bmm(const Var& a, const Var& b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw std::invalid_argument("bmm: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  Tensor out(Shape{bs, m, n});
  for (int i = 0; i < bs; ++i)
    MapMat(out.data().data() + i * m * n, m, n).noalias() =
        CMapMat(a.value().data().data() + i * m * k, m, k) * CMapMat(b.value().data().data() + i * k * n, k, n);
  return record(std::move(out), {a, b}, [bs, m, k, n](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor ga(Shape{bs, m, k});
      for (int i = 0; i < bs; ++i)
        MapMat(ga.data().data() + i * m * k, m, k).noalias() =
            CMapMat(g.data().data() + i * m * n, m, n) *
            CMapMat(in[1]->value.data().data() + i * k * n, k, n).transpose();
      in[0]->accumulate(ga);
    }
    if (in[1]->requires_grad) {
      Tensor gb(Shape{bs, k, n});
      for (int i = 0; i < bs; ++i)
        MapMat(gb.data().data() + i * k * n, k, n).noalias() =
            CMapMat(in[0]->value.data().data() + i * m * k, m, k).transpose() *
            CMapMat(g.data().data() + i * m * n, m, n);
      in[1]->accumulate(gb);
    }
  });
}

Var transpose12(const Var& a) {
  if (a.shape().size() != 3) throw std::invalid_argument("transpose12: rank 3 required, got " + shape_str(a.shape()));
  const int bs = a.dim(0), m = a.dim(1), n = a.dim(2);
  auto tr = [](const Tensor& src, int bs, int m, int n) {
    Tensor dst(Shape{bs, n, m});
    for (int i = 0; i < bs; ++i)
      MapMat(dst.data().data() + i * m * n, n, m) = CMapMat(src.data().data() + i * m * n, m, n).transpose();
    return dst;
  };
  return record(tr(a.value(), bs, m, n), {a}, [bs, m, n, tr](const Tensor& g, const std::vector<Node*>& in) {
    in[0]->accumulate(tr(g, bs, n, m));
  });
}

Var softmax_last(const Var& a) {
  require_rank_at_least(a, 1, "softmax_last");
  const int cols = a.shape().back();
  const std::size_t rows = a.numel() / cols;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data().data() + r * cols;
    double* y = out.data().data() + r * cols;
    const double mx = *std::max_element(x, x + cols);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (int j = 0; j < cols; ++j) y[j] /= z;
  }
  Tensor saved = out;
  return record(std::move(out), {a}, [saved, rows, cols](const Tensor& g, const std::vector<Node*>& in) {
    Tensor gx(saved.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = saved.data().data() + r * cols;
      const double* gy = g.data().data() + r * cols;
      double dotp = 0.0;
      for (int j = 0; j < cols; ++j) dotp += y[j] * gy[j];
      for (int j = 0; j < cols; ++j) gx[r * cols + j] = y[j] * (gy[j] - dotp);
    }
    in[0]->accumulate(gx);
  });
}

Var linear_map(const Var& x, std::function<Tensor(const Tensor&)> forward,
               std::function<Tensor(const Tensor&)> adjoint) {
  Tensor out = forward(x.value());
  require_same_shape(out, x.value(), "linear_map");
  return record(std::move(out), {x}, [adjoint = std::move(adjoint)](const Tensor& g, const std::vector<Node*>& in) {
    in[0]->accumulate(adjoint(g));
  });
}

}  // namespace clear::nn
