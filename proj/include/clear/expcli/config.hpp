#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "clear/expcli/dataset.hpp"
#include "clear/pipeline/pipeline.hpp"

namespace clear::expcli {

/// Resolved experiment settings. The [channel] section feeds both the training
/// link and the evaluation link; evaluation conditions override profile, ds, pn.
struct ExperimentConfig {
  std::string name = "clear";
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::string out = "runs/clear";

  DatasetSpec data;  // data.count is the training-set size
  int validation_count = 32;
  int test_count = 16;

  pipeline::ModelConfig model;
  pipeline::TrainConfig train;

  std::vector<double> eval_snrs{0, 5, 10, 15, 20, 25};
  std::vector<std::string> eval_conditions{"awgn", "rayleigh", "tv-low", "tv-medium", "tv-high"};
  std::vector<double> eval_rates{0.6};
  int eval_trials = 20;

  /// Copies run-level values (seed, channel, rate) into the nested configs.
  void resolve();
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

ExperimentConfig desk_defaults();
/// desk, cifar10 or div2k.
ExperimentConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

/// INI text: `[section]` headers, `key = value` lines, `;` or `#` comments.
/// Unknown sections or keys are rejected with the nearest valid key. A
/// `preset` in [run] is applied before the other keys.
ExperimentConfig parse_config(std::string_view text, std::string_view origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Every key in canonical order; parse_config(echo(c)) echoes identically.
std::string echo_config(const ExperimentConfig& cfg);

/// Every accepted "section.key".
std::vector<std::string> config_keys();

/// awgn, rayleigh, tv-low, tv-medium, tv-high, or tv:<ds>:<pn>.
pipeline::ChannelCondition parse_condition(std::string_view label);
/// Label of a channel setting: the named condition when (profile, ds, pn)
/// matches one, else tv:<ds>:<pn>.
std::string condition_label(const channel::ChannelConfig& ch);

/// Levenshtein distance, used for key suggestions.
std::size_t edit_distance(std::string_view a, std::string_view b);

/// Shortest round-trip decimal form; "inf" for +infinity.
std::string format_double(double v);

}  // namespace clear::expcli
