#include "clear/pipeline/link.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

#include "clear/codec/codec.hpp"
#include "clear/numerics/ops.hpp"

namespace clear::pipeline {

using channel::ComplexSequence;
using channel::cplx;

void LinkConfig::validate() const {
  channel.validate();
  if (pilot_length < 8) throw std::invalid_argument("link: pilot_length must be at least 8");
  if (pilot_repetitions < 1) throw std::invalid_argument("link: pilot_repetitions must be positive");
  if (chunk_length < 1) throw std::invalid_argument("link: chunk_length must be positive");
}

Link::Link(const LinkConfig& cfg, const Tensor& mask, const nn::Shape& shape, std::uint64_t seed)
    : cfg_(cfg), mask_(mask), shape_(shape) {
  cfg_.validate();
  const int cp = cfg_.channel.max_delay;
  pilot_ = csi::make_pilot(cfg_.pilot_length, cfg_.pilot_seed, cfg_.pilot_repetitions, cp);
  pilot_wave_ = csi::pilot_waveform(pilot_);

  const int n = shape_.at(0);
  const Tensor probe(shape_);
  const auto counts = codec::to_symbols(probe, mask_);
  symbols_ = static_cast<int>(counts.front().size());
  for (const auto& c : counts)
    if (static_cast<int>(c.size()) != symbols_) throw std::invalid_argument("link: every sample must keep the same symbol count");
  chunks_ = (symbols_ + cfg_.chunk_length - 1) / cfg_.chunk_length;
  frame_length_ = slot_offset(chunks_) + pilot_.waveform_length();

  const double nv = channel::noise_variance_for_snr(cfg_.channel.snr_db);
  states_.resize(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    LinkState& st = states_[b];
    st.realization = channel::realize_channel(cfg_.channel, frame_length_, derive_seed(seed, "channel", b));
    Rng rng(derive_seed(seed, "noise", b));
    st.noise.resize(static_cast<std::size_t>(frame_length_));
    if (nv > 0.0)
      for (auto& z : st.noise) z = rng.complex_normal(nv);

    // Data-free frame: the pilots see no interference thanks to their prefixes.
    const auto rx = transmit_one(ComplexSequence{}, static_cast<std::size_t>(b));
    std::vector<csi::CsiEstimate> slots;
    for (int j = 0; j <= chunks_; ++j) {
      ComplexSequence seg;
      seg.samples.assign(rx.begin() + slot_offset(j), rx.begin() + slot_offset(j) + pilot_.waveform_length());
      slots.push_back(csi::estimate_csi(pilot_, seg, cp));
    }
    st.csi = csi::combine(slots);
    st.conditioning = csi::update_parameters(st.csi).conditioning;
    st.nsr = csi::effective_nsr(st.csi, cfg_.chunk_length, pilot_spacing());
    // Tap change between neighbouring pilots beyond estimation noise is treated
    // as extra noise, so stale taps are inverted less aggressively.
    double change = 0.0, est_noise = 0.0;
    for (std::size_t j = 0; j + 1 < slots.size(); ++j) {
      for (std::size_t k = 0; k < slots[j].taps.size(); ++k) change += std::norm(slots[j + 1].taps[k] - slots[j].taps[k]);
      est_noise += static_cast<double>(slots[j].taps.size()) * (slots[j].tap_var + slots[j + 1].tap_var);
    }
    const double pairs = std::max<double>(1.0, static_cast<double>(slots.size()) - 1.0);
    const double regularizer = st.csi.noise_var + std::max(0.0, change - est_noise) / (2.0 * pairs);
    for (int j = 0; j < chunks_; ++j) {
      std::vector<cplx> taps(slots[j].taps.size());
      for (std::size_t k = 0; k < taps.size(); ++k) taps[k] = 0.5 * (slots[j].taps[k] + slots[j + 1].taps[k]);
      st.weights.push_back(csi::mmse_weights(taps, regularizer, cfg_.chunk_length));
    }
  }
}

int Link::pilot_spacing() const { return pilot_.waveform_length() + cfg_.channel.max_delay + cfg_.chunk_length; }

int Link::slot_offset(int j) const { return j * pilot_spacing(); }

std::vector<cplx> Link::transmit_one(const ComplexSequence& symbols, std::size_t n) const {
  const int cp = cfg_.channel.max_delay, len = cfg_.chunk_length;
  ComplexSequence frame;
  frame.samples.assign(static_cast<std::size_t>(frame_length_), cplx{});
  for (int j = 0; j <= chunks_; ++j)
    std::copy(pilot_wave_.samples.begin(), pilot_wave_.samples.end(), frame.samples.begin() + slot_offset(j));
  for (std::size_t s = 0; s < symbols.size(); ++s) {
    const int j = static_cast<int>(s) / len, i = static_cast<int>(s) % len;
    frame.samples[chunk_offset(j) + cp + i] = symbols.samples[s];
    if (i >= len - cp) frame.samples[chunk_offset(j) + i - (len - cp)] = symbols.samples[s];
  }
  auto rx = channel::apply_channel_noiseless(frame, states_[n].realization).samples;
  for (std::size_t k = 0; k < rx.size(); ++k) rx[k] += states_[n].noise[k];
  return rx;
}

Tensor Link::forward(const Tensor& x) const {
  nn::require_same_shape(x, Tensor(shape_), "link input");
  const auto tx = codec::to_symbols(x, mask_);
  const int cp = cfg_.channel.max_delay, len = cfg_.chunk_length;
  std::vector<ComplexSequence> out(tx.size());
  for (std::size_t b = 0; b < tx.size(); ++b) {
    const auto rx = transmit_one(tx[b], b);
    for (int j = 0; j < chunks_; ++j) {
      const std::vector<cplx> seg(rx.begin() + chunk_offset(j) + cp, rx.begin() + chunk_offset(j) + cp + len);
      const auto eq = csi::apply_weights(seg, states_[b].weights[j], false);
      const int count = std::min(len, symbols_ - j * len);
      out[b].samples.insert(out[b].samples.end(), eq.begin(), eq.begin() + count);
    }
  }
  return codec::from_symbols(out, mask_, shape_);
}

Tensor Link::adjoint(const Tensor& g) const {
  nn::require_same_shape(g, Tensor(shape_), "link adjoint input");
  const auto gs = codec::to_symbols(g, mask_);
  const int cp = cfg_.channel.max_delay, len = cfg_.chunk_length;
  std::vector<ComplexSequence> out(gs.size());
  for (std::size_t b = 0; b < gs.size(); ++b) {
    ComplexSequence r;
    r.samples.assign(static_cast<std::size_t>(frame_length_), cplx{});
    for (int j = 0; j < chunks_; ++j) {
      const int count = std::min(len, symbols_ - j * len);
      std::vector<cplx> seg(static_cast<std::size_t>(len));
      std::copy(gs[b].samples.begin() + j * len, gs[b].samples.begin() + j * len + count, seg.begin());
      const auto a = csi::apply_weights(seg, states_[b].weights[j], true);
      for (int i = 0; i < len; ++i) r.samples[chunk_offset(j) + cp + i] += a[i];
    }
    const auto u = channel::apply_channel_adjoint(r, states_[b].realization).samples;
    out[b].samples.resize(static_cast<std::size_t>(symbols_));
    for (int s = 0; s < symbols_; ++s) {
      const int j = s / len, i = s % len;
      cplx v = u[chunk_offset(j) + cp + i];
      if (i >= len - cp) v += u[chunk_offset(j) + i - (len - cp)];
      out[b].samples[s] = v;
    }
  }
  return codec::from_symbols(out, mask_, shape_);
}

Var Link::apply(const Var& x) const {
  // The tape may outlive this object, so the closures share a copy.
  auto self = std::make_shared<const Link>(*this);
  return nn::linear_map(
      x, [self](const Tensor& v) { return self->forward(v); }, [self](const Tensor& g) { return self->adjoint(g); });
}

Tensor Link::conditioning() const {
  Tensor c({static_cast<int>(states_.size()), 3});
  for (std::size_t b = 0; b < states_.size(); ++b)
    for (int k = 0; k < 3; ++k) c[b * 3 + k] = states_[b].conditioning[k];
  return c;
}

}  // namespace clear::pipeline
