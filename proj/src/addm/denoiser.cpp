#include <cmath>
#include <stdexcept>

#include "clear/addm/addm.hpp"
#include "clear/numerics/init.hpp"

namespace clear::addm {

using namespace nn;

namespace {
int level_width(const DenoiserConfig& c, int level) { return c.width << level; }
}  // namespace

Denoiser::Denoiser(DenoiserConfig cfg, std::string prefix) : cfg_(cfg), prefix_(std::move(prefix)) {
  if (cfg_.channels < 1 || cfg_.width < 1) throw std::invalid_argument("denoiser: channels and width must be positive");
  if (cfg_.depth < 1 || cfg_.depth > 4) throw std::invalid_argument("denoiser: depth must lie in [1, 4]");
  if (cfg_.time_dim % 2) throw std::invalid_argument("denoiser: time_dim must be even");
}

void Denoiser::init(ParamSet& ps, Rng& rng) const {
  const int e_in = cfg_.time_dim + cfg_.cond_dim;
  ps.add(p("embed.w1"), dense_weight(rng, cfg_.embed_dim, e_in));
  ps.add(p("embed.b1"), Tensor::zeros({cfg_.embed_dim}));
  ps.add(p("embed.w2"), dense_weight(rng, cfg_.embed_dim, cfg_.embed_dim));
  ps.add(p("embed.b2"), Tensor::zeros({cfg_.embed_dim}));

  auto add_conv = [&](const std::string& name, int out, int in, int k, double gain = 1.0) {
    ps.add(p(name + ".w"), he_kernel(rng, out, in, k, gain));
    ps.add(p(name + ".b"), Tensor::zeros({out}));
  };
  auto add_film = [&](const std::string& name, int c) {
    ps.add(p(name + ".w"), dense_weight(rng, 2 * c, cfg_.embed_dim, 0.1));
    ps.add(p(name + ".b"), Tensor::zeros({2 * c}));
  };
  auto add_block = [&](const std::string& name, int in, int out) {
    add_conv(name + ".conv1", out, in, 3);
    add_film(name + ".film1", out);
    add_conv(name + ".conv2", out, out, 3);
    add_film(name + ".film2", out);
    if (in != out) add_conv(name + ".skip", out, in, 1);
  };

  add_conv("in", cfg_.width, cfg_.channels, 3);
  int c_in = cfg_.width;
  for (int i = 0; i < cfg_.depth; ++i) {
    add_block("down" + std::to_string(i), c_in, level_width(cfg_, i));
    c_in = level_width(cfg_, i);
  }
  if (cfg_.attention) {
    const int c = level_width(cfg_, cfg_.depth - 1), d = std::max(4, c / 4);
    add_conv("attn.q", d, c, 1);
    add_conv("attn.k", d, c, 1);
    add_conv("attn.v", c, c, 1, 0.5);
  }
  for (int i = cfg_.depth - 2; i >= 0; --i) {
    const int c = level_width(cfg_, i);
    ps.add(p("up" + std::to_string(i) + ".t.w"), he_kernel(rng, 2 * c, c, 2));
    ps.add(p("up" + std::to_string(i) + ".t.b"), Tensor::zeros({c}));
    add_block("up" + std::to_string(i), 2 * c, c);
  }
  add_conv("out", cfg_.channels, cfg_.width, 3, 0.1);
}

Var Denoiser::film(ParamSet& ps, const Var& h, const Var& embed, const std::string& site) const {
  const int c = h.dim(1);
  const Var gb = linear(embed, ps.get(p(site + ".w")), ps.get(p(site + ".b")));
  return add_nc(mul_nc(h, add_scalar(slice1(gb, 0, c), 1.0)), slice1(gb, c, c));
}

Var Denoiser::forward(ParamSet& ps, const Var& x_t, const std::vector<int>& steps, const Tensor& cond) const {
  const int n = x_t.dim(0);
  if (x_t.shape().size() != 4 || x_t.dim(1) != cfg_.channels)
    throw std::invalid_argument("denoiser: expected (N, " + std::to_string(cfg_.channels) + ", H, W), got " +
                                shape_str(x_t.shape()));
  if (static_cast<int>(steps.size()) != n) throw std::invalid_argument("denoiser: one step per sample required");
  if (cond.rank() != 2 || cond.dim(0) != n || cond.dim(1) != cfg_.cond_dim)
    throw std::invalid_argument("denoiser: conditioning must be (" + std::to_string(n) + ", " +
                                std::to_string(cfg_.cond_dim) + "), got " + shape_str(cond.shape()));
  const int scale = 1 << (cfg_.depth - 1);
  if (x_t.dim(2) % scale || x_t.dim(3) % scale)
    throw std::invalid_argument("denoiser: spatial extent must be divisible by " + std::to_string(scale));

  auto conv = [&](const Var& x, const std::string& name, int pad) {
    return conv2d(x, ps.get(p(name + ".w")), ps.get(p(name + ".b")), 1, pad);
  };
  Var embed;
  auto block = [&](const Var& x, const std::string& name) {
    Var a = relu(film(ps, conv(x, name + ".conv1", 1), embed, name + ".film1"));
    Var b = film(ps, conv(a, name + ".conv2", 1), embed, name + ".film2");
    const Var skip = ps.contains(p(name + ".skip.w")) ? conv(x, name + ".skip", 0) : x;
    return relu(add(b, skip));
  };

  const Var e0 = concat1(constant(sine_time_embedding(steps, cfg_.time_dim)), constant(cond));
  Var e = relu(linear(e0, ps.get(p("embed.w1")), ps.get(p("embed.b1"))));
  embed = relu(linear(e, ps.get(p("embed.w2")), ps.get(p("embed.b2"))));

  Var h = conv(x_t, "in", 1);
  std::vector<Var> skips;
  for (int i = 0; i < cfg_.depth; ++i) {
    if (i > 0) h = max_pool2d(h);
    h = block(h, "down" + std::to_string(i));
    if (i < cfg_.depth - 1) skips.push_back(h);
  }
  if (cfg_.attention) {
    AttentionParams ap{ps.get(p("attn.q.w")), ps.get(p("attn.q.b")), ps.get(p("attn.k.w")),
                       ps.get(p("attn.k.b")), ps.get(p("attn.v.w")), ps.get(p("attn.v.b"))};
    h = self_attention(h, ap).output;
  }
  for (int i = cfg_.depth - 2; i >= 0; --i) {
    const std::string up = "up" + std::to_string(i);
    h = transpose_conv2d(h, ps.get(p(up + ".t.w")), ps.get(p(up + ".t.b")), 2, 0);
    h = block(concat1(h, skips[i]), up);
  }
  return conv(h, "out", 1);
}

}  // namespace clear::addm
