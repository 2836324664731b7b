#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

#include "clear/expcli/config.hpp"

namespace clear::expcli {

struct RunOptions {
  std::filesystem::path out;  // empty: the config's run.out
  bool force = false;         // replace an existing non-empty output directory
  bool ablate = false;        // also evaluate the checkpoint with ADDM switched off
  int threads = 1;            // evaluation workers
  std::ostream* log = nullptr;
};

struct DataSplit {
  Tensor train;
  Tensor validation;
  Tensor test;
  int skipped = 0;
};

struct RunSummary {
  std::filesystem::path out;
  pipeline::TrainResult train;
  pipeline::EvalResult eval;
  std::optional<pipeline::EvalResult> eval_no_addm;
  std::string config_hash;
  double wall_seconds = 0.0;
};

/// 64-bit FNV-1a, printed as 16 hex digits in manifests.
std::uint64_t fnv1a(std::string_view bytes);

/// Parallelism cap from CLEAR_THREADS (unset or invalid: 1).
int threads_from_env();

/// Training, validation and test images in that order from one generator or
/// directory listing.
DataSplit load_split(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Trains, checkpoints, reloads the checkpoint and evaluates. Writes
/// config.ini, run.log, checkpoint.clr, loss_steps.csv, loss_epochs.csv,
/// eval.csv and manifest.json; with ablation also eval_no_addm.csv and
/// ablation.csv, where the same checkpoint is evaluated on the same seed
/// stream with the reverse chain skipped, so paired cells share channel draws.
RunSummary run_experiment(const ExperimentConfig& cfg, const RunOptions& opts);

/// Rebuilds the model from `dir`/checkpoint.clr (using `cfg` when given,
/// else the configuration stored in the checkpoint), evaluates the test split
/// and writes `dir`/eval.csv.
pipeline::EvalResult run_evaluation(const std::filesystem::path& dir, const std::optional<ExperimentConfig>& cfg,
                                    int threads, std::ostream* log = nullptr);

/// 8x8 synthetic images, T = 50, 200 optimizer steps, a small grid.
ExperimentConfig smoke_config();

}  // namespace clear::expcli
