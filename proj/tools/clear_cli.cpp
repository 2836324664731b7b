// Command-line front end: train, eval, ablate, smoke.

#include <cstdio>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "clear/expcli/checkpoint.hpp"
#include "clear/expcli/runner.hpp"

using namespace clear::expcli;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool ablate = false;
};

void add_common(CLI::App* cmd, Flags& f, bool with_ablate) {
  cmd->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Override run.seed");
  cmd->add_option("--out", f.out, "Output directory (default: run.out)");
  cmd->add_flag("--force", f.force, "Replace a non-empty output directory");
  if (with_ablate) cmd->add_flag("--ablate", f.ablate, "Also evaluate with ADDM off on paired channel draws");
}

ExperimentConfig resolve(const Flags& f, ExperimentConfig base) {
  ExperimentConfig cfg = f.config.empty() ? std::move(base) : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  cfg.resolve();
  cfg.validate();
  return cfg;
}

void print_summary(const RunSummary& s) {
  std::printf("artifacts in %s (config %s, %.1f s)\n", s.out.string().c_str(), s.config_hash.c_str(), s.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic image transmission with channel-adaptive diffusion denoising"};
  app.require_subcommand(1);
  Flags train_f, eval_f, ablate_f, smoke_f;
  auto* train = app.add_subcommand("train", "Train, checkpoint and evaluate one configuration");
  add_common(train, train_f, true);
  auto* eval = app.add_subcommand("eval", "Re-evaluate the checkpoint in --out");
  add_common(eval, eval_f, false);
  auto* ablate = app.add_subcommand("ablate", "train --ablate");
  add_common(ablate, ablate_f, false);
  auto* smoke = app.add_subcommand("smoke", "Small end-to-end run (8x8 synthetic, 200 steps)");
  add_common(smoke, smoke_f, true);

  CLI11_PARSE(app, argc, argv);
  const int threads = threads_from_env();
  try {
    if (*train || *ablate || *smoke) {
      Flags& f = *train ? train_f : (*ablate ? ablate_f : smoke_f);
      const ExperimentConfig cfg = resolve(f, *smoke ? smoke_config() : desk_defaults());
      RunOptions opts;
      opts.force = f.force;
      opts.ablate = f.ablate || *ablate;
      opts.threads = threads;
      opts.log = &std::cout;
      print_summary(run_experiment(cfg, opts));
    } else if (*eval) {
      if (eval_f.out.empty()) throw std::invalid_argument("eval needs --out pointing at a run directory");
      std::optional<ExperimentConfig> cfg;
      if (!eval_f.config.empty()) {
        cfg = resolve(eval_f, desk_defaults());
      } else if (eval_f.seed) {
        clear::nn::ParamSet scratch;
        const auto ckpt = std::filesystem::path(eval_f.out) / "checkpoint.clr";
        cfg = resolve(eval_f, parse_config(load_checkpoint(ckpt, scratch).config, ckpt.string()));
      }
      run_evaluation(eval_f.out, cfg, threads, &std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
