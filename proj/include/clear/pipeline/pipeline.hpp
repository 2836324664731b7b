#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clear/addm/addm.hpp"
#include "clear/codec/codec.hpp"
#include "clear/pipeline/link.hpp"

namespace clear::pipeline {

using nn::ParamSet;

enum class TrainMode { joint, staged };

struct TrainConfig {
  int max_epochs = 100;
  int batch_size = 16;
  double learning_rate = 1e-3;
  int patience = 10;
  std::uint64_t seed = 1;
  double snr_train = 15.0;
  channel::ChannelConfig channel;  // snr_db is overridden by snr_train
  double compression_rate = 0.6;
  bool addm_enabled = true;
  TrainMode mode = TrainMode::joint;
  double eps_weight = 0.1;  // weight of the denoiser's noise-prediction loss
  int max_steps = 0;        // 0 = no cap beyond max_epochs

  void validate() const;
};

/// Everything needed to rebuild the networks from a ParamSet.
struct ModelConfig {
  codec::CodecConfig codec;
  addm::DenoiserConfig denoiser;  // channels are forced to the codec's feature channels
  int schedule_steps = 1000;
  int schedule_stride = 20;  // desk scale: T = 50
  double schedule_target = 1e-4;
  LinkConfig link;

  void validate() const;
};

/// Networks and schedule bound to one parameter set.
class ClearModel {
public:
  explicit ClearModel(ModelConfig cfg);

  void init(ParamSet& ps, std::uint64_t seed) const;

  const ModelConfig& config() const { return cfg_; }
  const codec::Codec& codec() const { return codec_; }
  const addm::Denoiser& denoiser() const { return den_; }
  const addm::NoiseSchedule& schedule() const { return sched_; }

private:
  ModelConfig cfg_;
  codec::Codec codec_;
  addm::Denoiser den_;
  addm::NoiseSchedule sched_;
};

/// Mean squared difference; rejects shape mismatch.
double mse_loss(const Tensor& s_hat, const Tensor& s);
constexpr double kPsnrCapDb = 100.0;
/// 10 log10(max_val^2 / mse), capped at kPsnrCapDb.
double psnr_from_mse(double mse, double max_val = 1.0);
double psnr(const Tensor& s_hat, const Tensor& s, double max_val = 1.0);

/// True once validation loss has gone `patience` consecutive epochs without
/// improving on its best by more than 1e-6.
bool early_stop_update(const std::vector<double>& history, int patience);
constexpr double kEarlyStopMinDelta = 1e-6;

struct TrainResult {
  std::vector<double> step_loss;    // joint loss per optimizer step
  std::vector<double> epoch_loss;   // mean training loss per epoch
  std::vector<double> val_loss;     // validation MSE per epoch
  int epochs_run = 0;
  bool early_stopped = false;
  std::size_t steps = 0;
};

/// Reconstruction MSE plus, with ADDM on, the weighted noise-prediction loss.
/// Channel, noise and diffusion draws are fixed by `seed`.
Var joint_loss(const ClearModel& model, ParamSet& ps, const Tensor& batch, const TrainConfig& cfg, std::uint64_t seed);
/// joint_loss followed by one Adam step over every parameter. Returns the loss;
/// a non-finite loss is returned without updating.
double train_batch(const ClearModel& model, ParamSet& ps, const Tensor& batch, const TrainConfig& cfg,
                   std::uint64_t seed);

/// Epoch loop with early stopping on `validation` (pass the training set again
/// when no split is available). Throws std::runtime_error naming the
/// batch index if the loss turns non-finite.
/// Called after every epoch with (epoch, mean training loss, validation MSE).
using EpochCallback = std::function<void(int, double, double)>;
TrainResult train_clear(const ClearModel& model, ParamSet& ps, const Tensor& train, const Tensor& validation,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

/// Inference path for one batch. Returns reconstructions in [0, 1].
struct InferenceOptions {
  double snr_db = 20.0;
  channel::ChannelConfig channel;  // snr_db is overridden
  double rate = -1.0;              // < 0: the codec's configured rate
  bool use_addm = true;
  addm::SamplerOptions sampler;
};
Tensor reconstruct(const ClearModel& model, ParamSet& ps, const Tensor& images, const InferenceOptions& opt,
                   std::uint64_t seed);

struct ChannelCondition {
  std::string name;  // awgn, rayleigh, or tv
  channel::Profile profile = channel::Profile::awgn;
  double ds = 0.0;
  double pn = 0.0;
};
/// AWGN, Rayleigh, and the low/medium/high time-varying pairings.
std::vector<ChannelCondition> standard_conditions();

struct EvalCell {
  double snr_db = 0.0;
  ChannelCondition condition;
  double rate = 0.0;
  int trials = 0;
  double mean_psnr_db = 0.0;
  double mean_mse = 0.0;
  std::vector<double> trial_psnr;  // per trial, for paired comparisons
};

struct EvalResult {
  std::vector<EvalCell> cells;
  std::uint64_t seed = 0;
};

/// Channel seeds depend on (seed, snr, condition, rate, trial) only, so two
/// models evaluated with the same arguments see identical channel draws.
/// Cells run on up to `threads` workers; results do not depend on the count.
EvalResult evaluate_grid(const ClearModel& model, ParamSet& ps, const Tensor& images, const std::vector<double>& snrs,
                         const std::vector<ChannelCondition>& conditions, const std::vector<double>& rates, int trials,
                         std::uint64_t seed, bool use_addm = true, int threads = 1);

}  // namespace clear::pipeline
