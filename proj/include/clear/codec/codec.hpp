#pragma once

#include <string>
#include <vector>

#include "clear/channel/channel.hpp"
#include "clear/numerics/autodiff.hpp"
#include "clear/numerics/param_set.hpp"
#include "clear/numerics/rng.hpp"

namespace clear::codec {

using nn::ParamSet;
using nn::Tensor;
using nn::Var;

struct CodecConfig {
  int height = 16;
  int width = 16;
  int stages = 2;
  int base_filters = 16;
  double compression_rate = 0.6;
  bool snr_conditioning = true;

  /// Channels of the feature block: base_filters * 2^(stages-1).
  int feature_channels() const { return base_filters << (stages - 1); }
  int feature_height() const { return height >> stages; }
  int feature_width() const { return width >> stages; }
  /// Real coefficients per image.
  int feature_count() const { return feature_channels() * feature_height() * feature_width(); }
  /// Complex symbols kept per image after rate selection.
  int kept_symbols() const;
  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Encoder output. Planes (2k, 2k+1) carry the real and imaginary parts of
/// one complex feature map; `mask` and `scale` travel as side information.
struct SemanticFeatures {
  Var x;                      // (N, C, H', W')
  Tensor mask;                // same shape, entries 0 or 1; empty means all active
  Var gain;                   // (N) gain applied by normalize_power; undefined before it runs
};

/// Keeps the ceil(R * N / 2) complex symbols of largest magnitude per sample
/// (N real coefficients) and zeroes the rest.
SemanticFeatures rate_select(const Var& features, double rate);
/// Scales each sample so its active complex symbols have unit mean power.
SemanticFeatures normalize_power(SemanticFeatures f);
/// Undoes the recorded normalization gain.
Var denormalize(const Var& x, const Var& gain);

/// Complex symbol (k, i, j) of sample n is x[n, 2k, i, j] + i x[n, 2k+1, i, j].
/// Only masked-in symbols are emitted, in ascending (k, i, j) order.
std::vector<channel::ComplexSequence> to_symbols(const Tensor& x, const Tensor& mask);
/// Inverse of to_symbols; inactive positions are zero.
Tensor from_symbols(const std::vector<channel::ComplexSequence>& symbols, const Tensor& mask, const nn::Shape& shape);

/// SNR gate input: (clamp(snr, -5, 30) + 5) / 35.
double normalized_snr(double snr_db);

class Codec {
public:
  explicit Codec(CodecConfig cfg);

  void init(ParamSet& ps, Rng& rng) const;

  /// Pixels in [0, 1], shape (N, 3, H, W). Returns AFB-modulated features.
  Var encode_features(ParamSet& ps, const Var& image, double snr_db, bool training) const;
  /// encode_features, then rate selection and power normalization. A
  /// negative `rate` uses the configured compression rate.
  SemanticFeatures encode(ParamSet& ps, const Var& image, double snr_db, bool training, double rate = -1.0) const;
  /// Reconstruction in [0, 1] with the input image shape.
  Var decode(ParamSet& ps, const SemanticFeatures& received, double snr_db, bool training) const;

  /// Per-channel gate g in (0, 1]: sigmoid(MLP([pooled features, snr])).
  Var afb_gains(ParamSet& ps, const Var& features, double snr_db, const std::string& site) const;
  Var afb_modulate(ParamSet& ps, const Var& features, double snr_db, const std::string& site) const;

  const CodecConfig& config() const { return cfg_; }
  int stage_channels(int stage) const { return cfg_.base_filters << stage; }

private:
  Var conv_bn_relu(ParamSet& ps, const Var& x, const std::string& name, bool training) const;
  Var residual(ParamSet& ps, const Var& x, const std::string& name, bool training) const;
  Var attention(ParamSet& ps, const Var& x, const std::string& name) const;

  CodecConfig cfg_;
};

}  // namespace clear::codec
