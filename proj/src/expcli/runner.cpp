#include "clear/expcli/runner.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "clear/expcli/checkpoint.hpp"
#include "clear/expcli/results.hpp"
#include "json.hpp"

namespace clear::expcli {

namespace fs = std::filesystem;
using pipeline::ClearModel;
using pipeline::EvalResult;
using pipeline::TrainResult;

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

int threads_from_env() {
  const char* v = std::getenv("CLEAR_THREADS");
  if (!v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  return end != v && *end == '\0' && n >= 1 ? static_cast<int>(std::min(n, 256L)) : 1;
}

namespace {

class RunLog {
public:
  RunLog(const fs::path& path, std::ostream* echo) : file_(path), echo_(echo) {
    if (!file_) throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  void line(const std::string& s) {
    file_ << s << '\n';
    file_.flush();
    if (echo_) *echo_ << s << '\n' << std::flush;
  }

private:
  std::ofstream file_;
  std::ostream* echo_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Tensor slice(const Tensor& x, int begin, int end) {
  nn::Shape shape = x.shape();
  const std::size_t per = x.numel() / shape[0];
  shape[0] = end - begin;
  Tensor out(shape);
  std::copy_n(x.vec().begin() + begin * per, (end - begin) * per, out.vec().begin());
  return out;
}

std::vector<pipeline::ChannelCondition> conditions_of(const ExperimentConfig& cfg) {
  std::vector<pipeline::ChannelCondition> out;
  for (const auto& label : cfg.eval_conditions) out.push_back(parse_condition(label));
  return out;
}

EvalResult evaluate(const ClearModel& model, nn::ParamSet& ps, const ExperimentConfig& cfg, const Tensor& test,
                    bool use_addm, int threads) {
  return pipeline::evaluate_grid(model, ps, test, cfg.eval_snrs, conditions_of(cfg), cfg.eval_rates, cfg.eval_trials,
                                 derive_seed(cfg.seed, "eval"), use_addm, threads);
}

void prepare_dir(const fs::path& out, bool force) {
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw std::runtime_error("output path " + out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!force) throw std::runtime_error("output directory " + out.string() + " is not empty; pass --force to replace it");
      fs::remove_all(out);
    }
  }
  fs::create_directories(out);
}

struct Trained {
  TrainResult train;
  nn::ParamSet params;  // reloaded from the checkpoint
};

// Trains, checkpoints, and reloads the checkpoint into a fresh set.
Trained train_and_checkpoint(const ClearModel& model, const ExperimentConfig& cfg, const DataSplit& data,
                             const fs::path& out, RunLog& log) {
  nn::ParamSet ps;
  model.init(ps, cfg.seed);
  log.line("training: " + std::to_string(ps.scalar_count()) + " parameters, " + std::to_string(data.train.dim(0)) +
           " images");
  Trained t;
  t.train = pipeline::train_clear(model, ps, data.train, data.validation, cfg.train,
                                  [&](int epoch, double loss, double val) {
                                    char buf[96];
                                    std::snprintf(buf, sizeof buf, "epoch %3d  train %.6g  val %.6g", epoch, loss, val);
                                    log.line(buf);
                                  });
  log.line("stopped after " + std::to_string(t.train.epochs_run) + " epochs, " + std::to_string(t.train.steps) +
           " steps" + (t.train.early_stopped ? " (early stop)" : ""));
  write_text(out / "loss_steps.csv", step_loss_csv(t.train));
  write_text(out / "loss_epochs.csv", epoch_loss_csv(t.train));
  save_checkpoint(out / "checkpoint.clr", ps, {echo_config(cfg), cfg.seed, t.train.steps});
  load_checkpoint(out / "checkpoint.clr", t.params);
  return t;
}

}  // namespace

DataSplit load_split(const ExperimentConfig& cfg, std::ostream* log) {
  DatasetSpec spec = cfg.data;
  const int total = cfg.data.count + cfg.validation_count + cfg.test_count;
  spec.count = total;
  Dataset ds = load_dataset(spec, log);
  const int n = ds.images.dim(0);
  if (n < total)
    throw std::runtime_error("dataset " + cfg.data.path + " has " + std::to_string(n) + " usable images; " +
                             std::to_string(total) + " needed for the train/validation/test split");
  DataSplit split;
  const int a = cfg.data.count, b = a + cfg.validation_count;
  split.train = slice(ds.images, 0, a);
  split.validation = slice(ds.images, a, b);
  split.test = slice(ds.images, b, total);
  split.skipped = ds.skipped;
  return split;
}

RunSummary run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  ExperimentConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  RunSummary sum;
  sum.out = opts.out.empty() ? fs::path(cfg.out) : opts.out;
  prepare_dir(sum.out, opts.force);

  const std::string echo = echo_config(cfg);
  sum.config_hash = hex64(fnv1a(echo));
  write_text(sum.out / "config.ini", echo);
  RunLog log(sum.out / "run.log", opts.log);
  log.line("run " + cfg.name + "  seed " + std::to_string(cfg.seed) + "  config " + sum.config_hash);
  std::istringstream lines(echo);
  for (std::string l; std::getline(lines, l);) log.line("  " + l);

  std::ostringstream warnings;
  const DataSplit data = load_split(cfg, &warnings);
  if (!warnings.str().empty()) {
    std::istringstream w(warnings.str());
    for (std::string l; std::getline(w, l);) log.line(l);
  }

  const ClearModel model(cfg.model);
  Trained trained = train_and_checkpoint(model, cfg, data, sum.out, log);
  sum.train = trained.train;
  sum.eval = evaluate(model, trained.params, cfg, data.test, cfg.train.addm_enabled, opts.threads);
  emit_csv(sum.eval, sum.out / "eval.csv");
  nlohmann::ordered_json artifacts = {"config.ini", "run.log", "checkpoint.clr", "loss_steps.csv", "loss_epochs.csv",
                                      "eval.csv"};
  if (opts.ablate) {
    if (!cfg.train.addm_enabled) throw std::invalid_argument("ablation needs addm.enabled = true");
    // Same checkpoint and evaluation seed, so both arms see identical channel draws.
    sum.eval_no_addm = evaluate(model, trained.params, cfg, data.test, false, opts.threads);
    emit_csv(*sum.eval_no_addm, sum.out / "eval_no_addm.csv");
    write_text(sum.out / "ablation.csv", ablation_csv(sum.eval, *sum.eval_no_addm));
    log.line("ablation: " + std::to_string(sum.eval.cells.size()) + " paired cells");
    for (const char* a : {"eval_no_addm.csv", "ablation.csv"}) artifacts.push_back(a);
  }

  sum.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::ordered_json manifest;
  manifest["name"] = cfg.name;
  manifest["config_hash"] = sum.config_hash;
  manifest["seed"] = cfg.seed;
  manifest["wall_time_seconds"] = sum.wall_seconds;
  manifest["epochs_run"] = sum.train.epochs_run;
  manifest["early_stopped"] = sum.train.early_stopped;
  manifest["steps"] = sum.train.steps;
  manifest["dataset"] = {{"train", data.train.dim(0)},
                         {"validation", data.validation.dim(0)},
                         {"test", data.test.dim(0)},
                         {"skipped", data.skipped}};
  manifest["artifacts"] = artifacts;
  write_text(sum.out / "manifest.json", manifest.dump(2) + "\n");
  char buf[64];
  std::snprintf(buf, sizeof buf, "done in %.1f s", sum.wall_seconds);
  log.line(buf);
  return sum;
}

EvalResult run_evaluation(const fs::path& dir, const std::optional<ExperimentConfig>& cfg_in, int threads,
                          std::ostream* log) {
  const fs::path ckpt = dir / "checkpoint.clr";
  nn::ParamSet ps;
  const CheckpointMeta meta = load_checkpoint(ckpt, ps);
  const ExperimentConfig cfg = cfg_in ? *cfg_in : parse_config(meta.config, ckpt.string() + " (meta.config)");
  const ClearModel model(cfg.model);
  // Shape-checks the checkpoint against the model described by cfg.
  nn::ParamSet fresh;
  model.init(fresh, cfg.seed);
  load_checkpoint(ckpt, fresh);
  const DataSplit data = load_split(cfg, log);
  const EvalResult res = evaluate(model, fresh, cfg, data.test, cfg.train.addm_enabled, threads);
  emit_csv(res, dir / "eval.csv");
  if (log) *log << "wrote " << (dir / "eval.csv").string() << " (" << res.cells.size() << " cells)\n";
  return res;
}

ExperimentConfig smoke_config() {
  ExperimentConfig c = desk_defaults();
  c.name = "smoke";
  c.out = "runs/smoke";
  c.data.height = c.data.width = 8;
  c.data.count = 64;
  c.validation_count = 16;
  c.test_count = 8;
  c.model.codec.base_filters = 8;
  c.model.denoiser.width = 16;
  c.model.denoiser.time_dim = 16;
  c.model.denoiser.embed_dim = 32;
  c.train.max_steps = 200;
  c.eval_snrs = {0, 10, 20};
  c.eval_conditions = {"awgn", "rayleigh", "tv-high"};
  c.eval_trials = 3;
  c.resolve();
  return c;
}

}  // namespace clear::expcli
