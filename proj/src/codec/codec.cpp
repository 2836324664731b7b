#include "clear/codec/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "clear/numerics/init.hpp"
#include "clear/numerics/layers.hpp"
#include "clear/numerics/ops.hpp"

namespace clear::codec {

using namespace nn;

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

int afb_hidden(int c) { return std::max(8, c / 2); }

int kept_pairs(int pairs, double rate) {
  // Guard against R * pairs landing a hair above an integer.
  return static_cast<int>(std::ceil(rate * pairs - 1e-9));
}
}  // namespace

int CodecConfig::kept_symbols() const { return kept_pairs(feature_count() / 2, compression_rate); }

void CodecConfig::validate() const {
  if (stages < 1 || stages > 4) throw std::invalid_argument("codec: stages must lie in [1, 4]");
  if (base_filters < 2 || base_filters % 2)
    throw std::invalid_argument("codec: base_filters must be even and at least 2");
  if (height < 1 || width < 1 || height % (1 << stages) || width % (1 << stages))
    throw std::invalid_argument("codec: image extents " + std::to_string(height) + "x" + std::to_string(width) +
                                " not divisible by 2^stages = " + std::to_string(1 << stages));
  if (!(compression_rate > 0.0 && compression_rate <= 1.0))
    throw std::invalid_argument("codec: compression_rate must lie in (0, 1]");
  if (kept_symbols() < 1) throw std::invalid_argument("codec: compression_rate keeps no symbols");
}

double normalized_snr(double snr_db) { return (std::clamp(snr_db, -5.0, 30.0) + 5.0) / 35.0; }

SemanticFeatures rate_select(const Var& features, double rate) {
  if (!(rate > 0.0 && rate <= 1.0)) throw std::invalid_argument("rate_select: rate must lie in (0, 1]");
  const Tensor& x = features.value();
  if (x.rank() != 4 || x.dim(1) % 2) throw std::invalid_argument("rate_select: expected (N, 2K, H, W) features");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const int pairs = static_cast<int>(plane) * c / 2;
  const int keep = kept_pairs(pairs, rate);
  if (keep < 1) throw std::invalid_argument("rate_select: rate keeps no symbols");

  SemanticFeatures out;
  out.mask = Tensor::zeros(x.shape());
  std::vector<double> energy(static_cast<std::size_t>(pairs));
  std::vector<int> order(static_cast<std::size_t>(pairs));
  for (int b = 0; b < n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * c * plane;
    auto re = [&](int p) { return base + (p / plane) * 2 * plane + p % plane; };
    for (int p = 0; p < pairs; ++p) {
      const double a = x[re(p)], q = x[re(p) + plane];
      energy[p] = a * a + q * q;
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int i, int j) { return energy[i] > energy[j]; });
    for (int r = 0; r < keep; ++r) {
      out.mask[re(order[r])] = 1.0;
      out.mask[re(order[r]) + plane] = 1.0;
    }
  }
  out.x = mul(features, constant(out.mask));
  return out;
}

SemanticFeatures normalize_power(SemanticFeatures f) {
  const Tensor& x = f.x.value();
  const int n = x.dim(0);
  const std::size_t per = x.numel() / n;
  Tensor symbols({n});
  for (int b = 0; b < n; ++b) {
    double active = static_cast<double>(per);
    if (!f.mask.empty()) active = std::accumulate(f.mask.vec().begin() + b * per, f.mask.vec().begin() + (b + 1) * per, 0.0);
    double ss = 0.0;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) ss += x[i] * x[i];
    if (ss == 0.0) throw std::invalid_argument("normalize_power: sample " + std::to_string(b) + " has zero power");
    symbols[b] = active / 2.0;
  }
  f.gain = sqrt(mul(reciprocal(sum_per_sample(square(f.x))), constant(symbols)));
  f.x = mul_per_sample(f.x, f.gain);
  return f;
}

Var denormalize(const Var& x, const Var& gain) {
  if (gain.shape() != Shape{x.dim(0)}) throw std::invalid_argument("denormalize: one gain per sample required");
  return mul_per_sample(x, reciprocal(gain));
}

std::vector<channel::ComplexSequence> to_symbols(const Tensor& x, const Tensor& mask) {
  if (!mask.empty()) require_same_shape(x, mask, "to_symbols mask");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  std::vector<channel::ComplexSequence> out(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * c * plane;
    for (int k = 0; k < c / 2; ++k)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = base + 2 * k * plane + p;
        if (mask.empty() || mask[i] != 0.0) out[b].samples.emplace_back(x[i], x[i + plane]);
      }
  }
  return out;
}

Tensor from_symbols(const std::vector<channel::ComplexSequence>& symbols, const Tensor& mask, const Shape& shape) {
  Tensor x(shape);
  if (!mask.empty()) require_same_shape(x, mask, "from_symbols mask");
  const int n = x.dim(0), c = x.dim(1);
  if (static_cast<int>(symbols.size()) != n) throw std::invalid_argument("from_symbols: one sequence per sample required");
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * c * plane;
    std::size_t s = 0;
    for (int k = 0; k < c / 2; ++k)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = base + 2 * k * plane + p;
        if (!mask.empty() && mask[i] == 0.0) continue;
        if (s >= symbols[b].size()) throw std::invalid_argument("from_symbols: too few symbols for the mask");
        x[i] = symbols[b].samples[s].real();
        x[i + plane] = symbols[b].samples[s].imag();
        ++s;
      }
    if (s != symbols[b].size()) throw std::invalid_argument("from_symbols: symbol count does not match the mask");
  }
  return x;
}

Codec::Codec(CodecConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void Codec::init(ParamSet& ps, Rng& rng) const {
  auto conv = [&](const std::string& name, int out, int in, int k, double gain = 1.0) {
    ps.add(name + ".w", he_kernel(rng, out, in, k, gain));
    ps.add(name + ".b", Tensor::zeros({out}));
  };
  auto bn = [&](const std::string& name, int c) {
    ps.add(name + ".gamma", Tensor::full({c}, 1.0));
    ps.add(name + ".beta", Tensor::zeros({c}));
    ps.add_stats(name, c);
  };
  auto conv_bn = [&](const std::string& name, int out, int in) {
    conv(name, out, in, 3);
    bn(name + ".bn", out);
  };
  auto residual = [&](const std::string& name, int c) {
    conv_bn(name + ".conv1", c, c);
    conv_bn(name + ".conv2", c, c);
  };
  auto attention = [&](const std::string& name, int c) {
    const int d = std::max(4, c / 4);
    conv(name + ".q", d, c, 1);
    conv(name + ".k", d, c, 1);
    conv(name + ".v", c, c, 1, 0.5);
  };
  auto afb = [&](const std::string& name, int c) {
    const int h = afb_hidden(c);
    ps.add(name + ".w1", dense_weight(rng, h, c + 1));
    ps.add(name + ".b1", Tensor::zeros({h}));
    ps.add(name + ".w2", dense_weight(rng, c, h, 0.1));
    ps.add(name + ".b2", Tensor::full({c}, 2.0));
  };

  const int cf = cfg_.feature_channels();
  int c_in = 3;
  for (int i = 0; i < cfg_.stages; ++i) {
    const std::string s = "enc.s" + std::to_string(i);
    conv_bn(s + ".conv", stage_channels(i), c_in);
    residual(s + ".res", stage_channels(i));
    attention(s + ".attn", stage_channels(i));
    c_in = stage_channels(i);
  }
  conv("enc.out", cf, cf, 1);
  if (cfg_.snr_conditioning) afb("enc.afb", cf);

  if (cfg_.snr_conditioning) afb("dec.afb", cf);
  conv_bn("dec.in", cf, cf);
  for (int i = cfg_.stages - 1; i >= 0; --i) {
    const std::string s = "dec.s" + std::to_string(i);
    const int c = stage_channels(i), c_out = i > 0 ? stage_channels(i - 1) : cfg_.base_filters;
    residual(s + ".res", c);
    attention(s + ".attn", c);
    ps.add(s + ".up.w", rng.normal_tensor({c, c_out, 2, 2}, std::sqrt(2.0 / (4.0 * c))));
    ps.add(s + ".up.b", Tensor::zeros({c_out}));
    bn(s + ".up.bn", c_out);
  }
  conv("dec.out", 3, cfg_.base_filters, 3, 0.1);
  ps.get("dec.out.b").mutable_value().fill(0.5);
}

Var Codec::conv_bn_relu(ParamSet& ps, const Var& x, const std::string& name, bool training) const {
  const Var h = conv2d(x, ps.get(name + ".w"), ps.get(name + ".b"), 1, 1);
  return relu(batch_norm(h, ps.get(name + ".bn.gamma"), ps.get(name + ".bn.beta"), ps.stats().at(name + ".bn"), kBnEps,
                         kBnMomentum, training));
}

Var Codec::residual(ParamSet& ps, const Var& x, const std::string& name, bool training) const {
  const Var a = conv_bn_relu(ps, x, name + ".conv1", training);
  const Var b = conv2d(a, ps.get(name + ".conv2.w"), ps.get(name + ".conv2.b"), 1, 1);
  const Var bn = batch_norm(b, ps.get(name + ".conv2.bn.gamma"), ps.get(name + ".conv2.bn.beta"),
                            ps.stats().at(name + ".conv2.bn"), kBnEps, kBnMomentum, training);
  return relu(add(bn, x));
}

Var Codec::attention(ParamSet& ps, const Var& x, const std::string& name) const {
  AttentionParams ap{ps.get(name + ".q.w"), ps.get(name + ".q.b"), ps.get(name + ".k.w"),
                     ps.get(name + ".k.b"), ps.get(name + ".v.w"), ps.get(name + ".v.b")};
  return self_attention(x, ap).output;
}

Var Codec::afb_gains(ParamSet& ps, const Var& features, double snr_db, const std::string& site) const {
  const int n = features.dim(0);
  const Var in = concat1(mean_spatial(features), constant(Tensor::full({n, 1}, normalized_snr(snr_db))));
  const Var h = relu(linear(in, ps.get(site + ".w1"), ps.get(site + ".b1")));
  return sigmoid(linear(h, ps.get(site + ".w2"), ps.get(site + ".b2")));
}

Var Codec::afb_modulate(ParamSet& ps, const Var& features, double snr_db, const std::string& site) const {
  if (!cfg_.snr_conditioning) return features;
  return mul_nc(features, afb_gains(ps, features, snr_db, site));
}

Var Codec::encode_features(ParamSet& ps, const Var& image, double snr_db, bool training) const {
  const Shape want{image.dim(0), 3, cfg_.height, cfg_.width};
  if (image.shape() != want)
    throw std::invalid_argument("encode: expected image shape " + shape_str(want) + ", got " + shape_str(image.shape()));
  Var h = image;
  for (int i = 0; i < cfg_.stages; ++i) {
    const std::string s = "enc.s" + std::to_string(i);
    h = conv_bn_relu(ps, h, s + ".conv", training);
    h = residual(ps, h, s + ".res", training);
    h = attention(ps, h, s + ".attn");
    h = max_pool2d(h);
  }
  h = conv2d(h, ps.get("enc.out.w"), ps.get("enc.out.b"), 1, 0);
  return afb_modulate(ps, h, snr_db, "enc.afb");
}

SemanticFeatures Codec::encode(ParamSet& ps, const Var& image, double snr_db, bool training, double rate) const {
  return normalize_power(
      rate_select(encode_features(ps, image, snr_db, training), rate < 0.0 ? cfg_.compression_rate : rate));
}

Var Codec::decode(ParamSet& ps, const SemanticFeatures& received, double snr_db, bool training) const {
  const Shape want{received.x.dim(0), cfg_.feature_channels(), cfg_.feature_height(), cfg_.feature_width()};
  if (received.x.shape() != want)
    throw std::invalid_argument("decode: expected features " + shape_str(want) + ", got " +
                                shape_str(received.x.shape()));
  if (!received.mask.empty() && received.mask.shape() != want)
    throw std::invalid_argument("decode: mask shape " + shape_str(received.mask.shape()) + " does not match features");
  Var h = received.mask.empty() ? received.x : mul(received.x, constant(received.mask));
  if (received.gain.defined()) h = denormalize(h, received.gain);
  h = afb_modulate(ps, h, snr_db, "dec.afb");
  h = conv_bn_relu(ps, h, "dec.in", training);
  for (int i = cfg_.stages - 1; i >= 0; --i) {
    const std::string s = "dec.s" + std::to_string(i);
    h = residual(ps, h, s + ".res", training);
    h = attention(ps, h, s + ".attn");
    h = transpose_conv2d(h, ps.get(s + ".up.w"), ps.get(s + ".up.b"), 2, 0);
    h = relu(batch_norm(h, ps.get(s + ".up.bn.gamma"), ps.get(s + ".up.bn.beta"), ps.stats().at(s + ".up.bn"), kBnEps,
                        kBnMomentum, training));
  }
  return clamp01(conv2d(h, ps.get("dec.out.w"), ps.get("dec.out.b"), 1, 1));
}

}  // namespace clear::codec
