// Command-line driver for the fault-diagnosis pipeline.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "faultdx/error.hpp"
#include "faultdx/pipeline.hpp"

namespace {

using faultdx::pipeline::RunConfig;
using faultdx::pipeline::Stage;

struct Overrides {
  std::string config_path;
  std::string artifact_dir;
  std::optional<std::size_t> budget, n_initial, parallelism, epochs;
  std::optional<double> early_stop, subsample_frac;
  std::optional<std::uint64_t> seed;
  bool no_hpo = false;
  faultdx::pipeline::StageOptions stage;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("-o,--artifact-dir", o.artifact_dir, "Artifact directory (overrides the config)");
  cmd->add_option("--budget", o.budget, "HPO trial budget");
  cmd->add_option("--n-initial", o.n_initial, "HPO initial design size");
  cmd->add_option("--parallelism", o.parallelism, "Concurrent HPO evaluators");
  cmd->add_option("--early-stop", o.early_stop, "Stop HPO once a trial reaches this objective");
  cmd->add_option("--seed", o.seed, "HPO seed");
  cmd->add_option("--subsample-frac", o.subsample_frac, "Share of the training set used by HPO");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_flag("--no-hpo", o.no_hpo, "Skip the search and train with the configured regime");
  cmd->add_flag("--resume", o.stage.resume, "Skip stages whose outputs are up to date");
  cmd->add_flag("--force", o.stage.force, "Overwrite artifacts produced by a different config");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config_path.empty() ? RunConfig{} : faultdx::pipeline::load_run_config(o.config_path);
  if (!o.artifact_dir.empty()) cfg.artifact_dir = o.artifact_dir;
  if (o.budget) cfg.hpo.budget = *o.budget;
  if (o.n_initial) cfg.hpo.n_initial = *o.n_initial;
  if (o.parallelism) cfg.hpo.parallelism = *o.parallelism;
  if (o.early_stop) cfg.hpo.early_stop = *o.early_stop;
  if (o.seed) cfg.hpo.seed = *o.seed;
  if (o.subsample_frac) cfg.hpo.subsample_frac = *o.subsample_frac;
  if (o.epochs) cfg.train.train.epochs = *o.epochs;
  if (o.no_hpo) cfg.hpo.enabled = false;
  if (const char* env = std::getenv("FAULTDX_SEED"); env != nullptr && *env != '\0') {
    std::uint64_t seed = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, seed);
    if (ec != std::errc() || ptr != end) throw faultdx::InvalidArgument("FAULTDX_SEED must be an unsigned integer");
    cfg.override_seeds(seed);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"faultdx: composite fault diagnosis from plant snapshots"};
  app.require_subcommand(1);
  Overrides o;

  struct Command {
    const char* name;
    const char* help;
    std::optional<Stage> stage;
  };
  const Command commands[] = {
      {"synth", "Generate (or ingest) the dataset", Stage::synth},
      {"encode", "Normalize, split and encode frames as grayscale images", Stage::encode},
      {"hpo", "Bayesian search over training hyperparameters", Stage::hpo},
      {"train", "Train the classifier", Stage::train},
      {"eval", "Evaluate on the test split and write the report", Stage::eval},
      {"pipeline", "Run every stage in order", std::nullopt},
  };
  for (const auto& c : commands) add_common(app.add_subcommand(c.name, c.help), o);
  auto* show = app.add_subcommand("config", "Print the effective run config as JSON");
  add_common(show, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(faultdx::ErrorKind::usage);
  }

  try {
    const RunConfig cfg = resolve(o);
    if (show->parsed()) {
      std::cout << faultdx::pipeline::to_json(cfg).dump(2) << "\n";
      return 0;
    }
    for (const auto& c : commands) {
      if (!app.got_subcommand(c.name)) continue;
      if (c.stage) {
        faultdx::pipeline::run_stage(*c.stage, cfg, o.stage);
      } else {
        faultdx::pipeline::run_pipeline(cfg, o.stage);
      }
    }
  } catch (const faultdx::Error& e) {
    std::cerr << "faultdx: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "faultdx: " << e.what() << "\n";
    return static_cast<int>(faultdx::ErrorKind::data);
  }
  return 0;
}
