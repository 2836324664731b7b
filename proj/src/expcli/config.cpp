#include "clear/expcli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace clear::expcli {

namespace pt = boost::property_tree;
using channel::Profile;

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s) {
  s = trim(s);
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw std::invalid_argument("'" + std::string(s) + "' is not a valid " +
                                (std::is_floating_point_v<T> ? "number" : "integer"));
  return v;
}

bool parse_bool(std::string_view s) {
  s = trim(s);
  if (s == "true") return true;
  if (s == "false") return false;
  throw std::invalid_argument("'" + std::string(s) + "' is not true or false");
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? ", " : "") + parts[i];
  return out;
}

struct Key {
  std::string section;
  std::string name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

template <class Acc>
Key int_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n), [acc](const ExperimentConfig& c) { return std::to_string(acc(c)); },
          [acc](ExperimentConfig& c, std::string_view v) { acc(c) = parse_number<int>(v); }};
}
template <class Acc>
Key u64_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n), [acc](const ExperimentConfig& c) { return std::to_string(acc(c)); },
          [acc](ExperimentConfig& c, std::string_view v) { acc(c) = parse_number<std::uint64_t>(v); }};
}
template <class Acc>
Key real_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n), [acc](const ExperimentConfig& c) { return format_double(acc(c)); },
          [acc](ExperimentConfig& c, std::string_view v) { acc(c) = parse_number<double>(v); }};
}
template <class Acc>
Key bool_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n), [acc](const ExperimentConfig& c) { return std::string(acc(c) ? "true" : "false"); },
          [acc](ExperimentConfig& c, std::string_view v) { acc(c) = parse_bool(v); }};
}
template <class Acc>
Key text_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n), [acc](const ExperimentConfig& c) { return std::string(acc(c)); },
          [acc](ExperimentConfig& c, std::string_view v) { acc(c) = std::string(trim(v)); }};
}
template <class Acc>
Key reals_key(std::string s, std::string n, Acc acc) {
  return {std::move(s), std::move(n),
          [acc](const ExperimentConfig& c) {
            std::vector<std::string> parts;
            for (double v : acc(c)) parts.push_back(format_double(v));
            return join(parts);
          },
          [acc](ExperimentConfig& c, std::string_view v) {
            acc(c).clear();
            for (auto p : split_list(v)) acc(c).push_back(parse_number<double>(p));
          }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(text_key("run", "name", FIELD(name)));
    k.push_back(text_key("run", "preset", FIELD(preset)));
    k.push_back(u64_key("run", "seed", FIELD(seed)));
    k.push_back(text_key("run", "out", FIELD(out)));

    k.push_back(text_key("data", "path", FIELD(data.path)));
    k.push_back({"data", "synthetic", [](const ExperimentConfig& c) { return synthetic_name(c.data.synthetic); },
                 [](ExperimentConfig& c, std::string_view v) { c.data.synthetic = parse_synthetic(trim(v)); }});
    k.push_back(int_key("data", "train_count", FIELD(data.count)));
    k.push_back(int_key("data", "validation_count", FIELD(validation_count)));
    k.push_back(int_key("data", "test_count", FIELD(test_count)));
    k.push_back(int_key("data", "height", FIELD(data.height)));
    k.push_back(int_key("data", "width", FIELD(data.width)));
    k.push_back(bool_key("data", "crop", FIELD(data.crop)));

    k.push_back(int_key("codec", "stages", FIELD(model.codec.stages)));
    k.push_back(int_key("codec", "base_filters", FIELD(model.codec.base_filters)));
    k.push_back(real_key("codec", "compression_rate", FIELD(model.codec.compression_rate)));
    k.push_back(bool_key("codec", "snr_conditioning", FIELD(model.codec.snr_conditioning)));

    k.push_back(bool_key("addm", "enabled", FIELD(train.addm_enabled)));
    k.push_back(int_key("addm", "schedule_steps", FIELD(model.schedule_steps)));
    k.push_back(int_key("addm", "schedule_stride", FIELD(model.schedule_stride)));
    k.push_back(real_key("addm", "schedule_target", FIELD(model.schedule_target)));
    k.push_back(int_key("addm", "width", FIELD(model.denoiser.width)));
    k.push_back(int_key("addm", "depth", FIELD(model.denoiser.depth)));
    k.push_back(int_key("addm", "time_dim", FIELD(model.denoiser.time_dim)));
    k.push_back(int_key("addm", "embed_dim", FIELD(model.denoiser.embed_dim)));
    k.push_back(bool_key("addm", "attention", FIELD(model.denoiser.attention)));
    k.push_back(real_key("addm", "eps_weight", FIELD(train.eps_weight)));

    k.push_back({"channel", "profile",
                 [](const ExperimentConfig& c) { return std::string(channel::profile_name(c.train.channel.profile)); },
                 [](ExperimentConfig& c, std::string_view v) { c.train.channel.profile = channel::parse_profile(trim(v)); }});
    k.push_back(int_key("channel", "paths", FIELD(train.channel.paths)));
    k.push_back(int_key("channel", "max_delay", FIELD(train.channel.max_delay)));
    k.push_back(real_key("channel", "ds", FIELD(train.channel.ds)));
    k.push_back(real_key("channel", "pn", FIELD(train.channel.pn)));
    k.push_back({"channel", "phase_noise",
                 [](const ExperimentConfig& c) {
                   return std::string(c.train.channel.phase_noise_mode == channel::PhaseNoiseMode::common ? "common"
                                                                                                          : "per_path");
                 },
                 [](ExperimentConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "common")
                     c.train.channel.phase_noise_mode = channel::PhaseNoiseMode::common;
                   else if (v == "per_path")
                     c.train.channel.phase_noise_mode = channel::PhaseNoiseMode::per_path;
                   else
                     throw std::invalid_argument("'" + std::string(v) + "' is not common or per_path");
                 }});
    k.push_back(int_key("channel", "pilot_length", FIELD(model.link.pilot_length)));
    k.push_back(int_key("channel", "pilot_repetitions", FIELD(model.link.pilot_repetitions)));
    k.push_back(int_key("channel", "chunk_length", FIELD(model.link.chunk_length)));
    k.push_back(u64_key("channel", "pilot_seed", FIELD(model.link.pilot_seed)));

    k.push_back(int_key("train", "max_epochs", FIELD(train.max_epochs)));
    k.push_back(int_key("train", "batch_size", FIELD(train.batch_size)));
    k.push_back(real_key("train", "learning_rate", FIELD(train.learning_rate)));
    k.push_back(int_key("train", "patience", FIELD(train.patience)));
    k.push_back(real_key("train", "snr_train", FIELD(train.snr_train)));
    k.push_back({"train", "mode",
                 [](const ExperimentConfig& c) {
                   return std::string(c.train.mode == pipeline::TrainMode::joint ? "joint" : "staged");
                 },
                 [](ExperimentConfig& c, std::string_view v) {
                   v = trim(v);
                   if (v == "joint")
                     c.train.mode = pipeline::TrainMode::joint;
                   else if (v == "staged")
                     c.train.mode = pipeline::TrainMode::staged;
                   else
                     throw std::invalid_argument("'" + std::string(v) + "' is not joint or staged");
                 }});
    k.push_back(int_key("train", "max_steps", FIELD(train.max_steps)));

    k.push_back(reals_key("eval", "snrs", FIELD(eval_snrs)));
    k.push_back({"eval", "conditions", [](const ExperimentConfig& c) { return join(c.eval_conditions); },
                 [](ExperimentConfig& c, std::string_view v) {
                   c.eval_conditions.clear();
                   for (auto p : split_list(v)) c.eval_conditions.emplace_back(p);
                 }});
    k.push_back(reals_key("eval", "rates", FIELD(eval_rates)));
    k.push_back(int_key("eval", "trials", FIELD(eval_trials)));
    return k;
  }();
  return table;
}

#undef FIELD

const Key* find_key(std::string_view section, std::string_view name) {
  for (const auto& k : key_table())
    if (k.section == section && k.name == name) return &k;
  return nullptr;
}

std::string nearest_key(std::string_view section, std::string_view name) {
  const std::string wanted = std::string(section) + "." + std::string(name);
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : key_table()) {
    // Prefer keys in the named section by scoring the bare name there.
    const std::size_t d = k.section == section ? edit_distance(name, k.name)
                                               : edit_distance(wanted, k.section + "." + k.name);
    if (d < best_d) {
      best_d = d;
      best = k.section + "." + k.name;
    }
  }
  return best;
}

// 1-based line of `key` inside `[section]`, or 0 when not found.
int line_of(std::string_view text, std::string_view section, std::string_view key) {
  std::istringstream in{std::string(text)};
  std::string line, current;
  for (int n = 1; std::getline(in, line); ++n) {
    const std::string_view t = trim(line);
    if (t.empty() || t[0] == ';' || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      current = std::string(trim(t.substr(1, t.size() - 2)));
      if (key.empty() && current == section) return n;
      continue;
    }
    const auto eq = t.find('=');
    if (!key.empty() && current == section && trim(t.substr(0, eq)) == key) return n;
  }
  return 0;
}

std::string where(std::string_view origin, int line) {
  return std::string(origin) + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": ";
}

const std::vector<std::string> kSections{"run", "data", "codec", "addm", "channel", "train", "eval"};

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.section + "." + k.name);
  return out;
}

void ExperimentConfig::resolve() {
  model.codec.height = data.height;
  model.codec.width = data.width;
  model.denoiser.channels = model.codec.feature_channels();
  train.compression_rate = model.codec.compression_rate;
  train.seed = seed;
  data.seed = seed;
  model.link.channel = train.channel;
  model.link.channel.snr_db = train.snr_train;
  train.channel.snr_db = train.snr_train;
}

void ExperimentConfig::validate() const {
  if (name.empty() || name.find_first_of("/\\") != std::string::npos)
    throw std::invalid_argument("run.name must be a non-empty file name");
  const auto presets = preset_names();
  if (std::find(presets.begin(), presets.end(), preset) == presets.end())
    throw std::invalid_argument("run.preset '" + preset + "' is not one of " + join(presets));
  if (out.empty()) throw std::invalid_argument("run.out must not be empty");
  if (!data.path.empty() && !std::filesystem::is_directory(data.path))
    throw std::invalid_argument("data.path '" + data.path + "' is not an existing directory");
  if (data.count < 2) throw std::invalid_argument("data.train_count must be at least 2");
  if (validation_count < 1) throw std::invalid_argument("data.validation_count must be at least 1");
  if (test_count < 1) throw std::invalid_argument("data.test_count must be at least 1");
  if (data.height < 1 || data.width < 1) throw std::invalid_argument("data.height and data.width must be positive");
  model.validate();
  train.validate();
  if (eval_snrs.empty()) throw std::invalid_argument("eval.snrs must list at least one value");
  if (eval_conditions.empty()) throw std::invalid_argument("eval.conditions must list at least one condition");
  for (const auto& c : eval_conditions) parse_condition(c);
  if (eval_rates.empty()) throw std::invalid_argument("eval.rates must list at least one value");
  for (double r : eval_rates)
    if (!(r > 0.0 && r <= 1.0)) throw std::invalid_argument("eval.rates entries must lie in (0, 1]");
  if (eval_trials < 1) throw std::invalid_argument("eval.trials must be at least 1");
}

ExperimentConfig desk_defaults() {
  ExperimentConfig c;
  c.data.count = 256;
  c.data.height = c.data.width = 16;
  c.train.channel.profile = Profile::time_varying;
  c.train.channel.ds = 0.2;
  c.train.channel.pn = 0.2;
  c.train.snr_train = 15.0;
  c.train.batch_size = 16;
  c.train.learning_rate = 1e-3;
  c.resolve();
  return c;
}

std::vector<std::string> preset_names() { return {"desk", "cifar10", "div2k"}; }

ExperimentConfig preset_config(std::string_view name) {
  ExperimentConfig c = desk_defaults();
  c.preset = std::string(name);
  if (name == "desk") return c;
  c.model.schedule_stride = 1;
  if (name == "cifar10") {
    c.data.height = c.data.width = 32;
    c.data.count = 50000;
    c.validation_count = 10000;
    c.test_count = 10000;
    c.train.batch_size = 128;
    c.train.learning_rate = 1e-4;
  } else if (name == "div2k") {
    c.data.height = c.data.width = 256;
    c.data.crop = true;
    c.data.count = 800;
    c.validation_count = 100;
    c.test_count = 100;
    c.train.batch_size = 32;
    c.train.learning_rate = 1e-3;
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected " + join(preset_names()) + ")");
  }
  c.resolve();
  return c;
}

ExperimentConfig parse_config(std::string_view text, std::string_view origin) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(text)};
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(where(origin, static_cast<int>(e.line())) + e.message());
  }

  for (const auto& [section, body] : tree) {
    if (!body.data().empty() || std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
      const bool stray = !body.data().empty();
      throw std::invalid_argument(where(origin, line_of(text, stray ? "" : section, stray ? section : "")) +
                                  (stray ? "key '" + section + "' outside any section"
                                         : "unknown section [" + section + "] (expected one of " + join(kSections) +
                                               ")"));
    }
    for (const auto& [key, value] : body)
      if (!find_key(section, key))
        throw std::invalid_argument(where(origin, line_of(text, section, key)) + "unknown key '" + key + "' in [" +
                                    section + "]; did you mean '" + nearest_key(section, key) + "'?");
  }

  ExperimentConfig cfg;
  const std::string preset = tree.get<std::string>("run.preset", "desk");
  try {
    cfg = preset_config(trim(preset));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(where(origin, line_of(text, "run", "preset")) + "run.preset: " + e.what());
  }
  for (const auto& [section, body] : tree)
    for (const auto& [key, value] : body) {
      try {
        find_key(section, key)->set(cfg, value.data());
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where(origin, line_of(text, section, key)) + section + "." + key + ": " + e.what());
      }
    }
  cfg.resolve();
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string(origin) + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.string());
}

std::string echo_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& k : key_table()) {
    if (k.section != section) {
      if (!section.empty()) out += '\n';
      section = k.section;
      out += "[" + section + "]\n";
    }
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

pipeline::ChannelCondition parse_condition(std::string_view label) {
  label = trim(label);
  if (label == "awgn") return {"awgn", Profile::awgn, 0.0, 0.0};
  if (label == "rayleigh") return {"rayleigh", Profile::rayleigh, 0.0, 0.0};
  if (label == "tv-low") return {"tv", Profile::time_varying, 0.01, 0.01};
  if (label == "tv-medium") return {"tv", Profile::time_varying, 0.05, 0.05};
  if (label == "tv-high") return {"tv", Profile::time_varying, 0.5, 0.2};
  if (label.starts_with("tv:")) {
    const auto rest = label.substr(3);
    const auto colon = rest.find(':');
    if (colon != std::string_view::npos) {
      const double ds = parse_number<double>(rest.substr(0, colon));
      const double pn = parse_number<double>(rest.substr(colon + 1));
      if (ds >= 0.0 && pn >= 0.0) return {"tv", Profile::time_varying, ds, pn};
    }
  }
  throw std::invalid_argument("unknown channel condition '" + std::string(label) +
                              "' (expected awgn, rayleigh, tv-low, tv-medium, tv-high or tv:<ds>:<pn>)");
}

std::string condition_label(const channel::ChannelConfig& ch) {
  if (ch.profile == Profile::awgn) return "awgn";
  if (ch.profile == Profile::rayleigh) return "rayleigh";
  for (const char* name : {"tv-low", "tv-medium", "tv-high"}) {
    const auto c = parse_condition(name);
    if (c.ds == ch.ds && c.pn == ch.pn) return name;
  }
  return "tv:" + format_double(ch.ds) + ":" + format_double(ch.pn);
}

}  // namespace clear::expcli
