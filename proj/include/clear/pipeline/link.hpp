#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "clear/channel/channel.hpp"
#include "clear/csi/csi.hpp"
#include "clear/numerics/autodiff.hpp"

namespace clear::pipeline {

using nn::Tensor;
using nn::Var;

/// Frame layout: slot 0, chunk 0, slot 1, chunk 1, ..., slot m. A slot is the
/// pilot block (each repetition behind a max_delay prefix); a chunk is
/// `chunk_length` data symbols behind their own max_delay cyclic prefix.
struct LinkConfig {
  channel::ChannelConfig channel;
  int pilot_length = 16;
  int pilot_repetitions = 2;
  int chunk_length = 32;
  std::uint64_t pilot_seed = 7;

  void validate() const;
};

/// Receiver-side view of one sample's transmission.
struct LinkState {
  channel::ChannelRealization realization;
  std::vector<channel::cplx> noise;
  std::vector<std::vector<channel::cplx>> weights;  // per chunk
  csi::CsiEstimate csi;                             // pooled over the frame's slots
  std::array<double, 3> conditioning{};
  double nsr = 0.0;  // residual noise-to-signal after equalization
};

/// One batch through pilots, channel, noise, CSI estimation and MMSE
/// equalization. Channel and noise are drawn at construction, so the map from
/// features to equalized features is affine and fixed for the object's lifetime.
class Link {
public:
  /// `mask` selects the transmitted coefficients of (N, C, H, W) features (empty = all).
  Link(const LinkConfig& cfg, const Tensor& mask, const nn::Shape& shape, std::uint64_t seed);

  Tensor forward(const Tensor& x) const;
  /// Transpose of the linear part of forward.
  Tensor adjoint(const Tensor& g) const;
  /// forward on the tape.
  Var apply(const Var& x) const;

  const std::vector<LinkState>& states() const { return states_; }
  /// (N, 3) conditioning rows for the denoiser.
  Tensor conditioning() const;
  int frame_length() const { return frame_length_; }
  int chunk_count() const { return chunks_; }
  int pilot_spacing() const;

private:
  int slot_offset(int j) const;
  int chunk_offset(int j) const { return slot_offset(j) + pilot_.waveform_length(); }
  std::vector<channel::cplx> transmit_one(const channel::ComplexSequence& symbols, std::size_t n) const;

  LinkConfig cfg_;
  Tensor mask_;
  nn::Shape shape_;
  csi::PilotBlock pilot_;
  channel::ComplexSequence pilot_wave_;
  int symbols_ = 0;
  int chunks_ = 0;
  int frame_length_ = 0;
  std::vector<LinkState> states_;
};

}  // namespace clear::pipeline
