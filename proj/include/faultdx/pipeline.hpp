#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultdx/bayesopt/hpo.hpp"
#include "faultdx/classifier/scaling.hpp"
#include "faultdx/classifier/train.hpp"
#include "faultdx/dataset.hpp"

namespace faultdx::pipeline {

struct CsvSource {
  std::filesystem::path path;
  dataset::CsvSchema schema;
};

struct SplitConfig {
  double train_frac = 0.8;
  std::uint64_t seed = 17;
};

struct EncodeConfig {
  /// Write one example image per class under images/.
  bool gallery = true;
  preprocess::ImageFormat gallery_format = preprocess::ImageFormat::pgm;
};

struct HpoStageConfig {
  bool enabled = true;
  std::size_t budget = 12;
  std::size_t n_initial = 10;
  std::size_t parallelism = 5;
  double early_stop = 0.90;
  double subsample_frac = 0.7;
  std::uint64_t seed = 29;
  bayesopt::ParallelMode mode = bayesopt::ParallelMode::shared;
  /// Epochs per trial and the validation share carved from the subsample.
  std::size_t trial_epochs = 3;
  double val_frac = 0.2;
  /// Replaces dimensions of the default space by name.
  std::vector<bayesopt::Dim> space_overrides;
};

struct PretrainConfig {
  bool enabled = false;
  std::size_t epochs = 5;
};

struct TrainStageConfig {
  classifier::TrainConfig train;
  classifier::ScalingConfig scaling;
  double val_frac = 0.1;
  PretrainConfig pretrain;
};

struct EvalConfig {
  std::string model_name = "BayesEffNet-phi0";
  /// Comparison table renderings: "text" (report.txt) and/or "json" (report.json).
  std::vector<std::string> formats = {"text"};
  /// Extra comparison rows rendered alongside this run (e.g. published results).
  std::vector<std::pair<std::string, std::vector<double>>> reference_rows;
};

struct RunConfig {
  std::filesystem::path artifact_dir = "artifacts";
  std::optional<dataset::ScenarioSpec> synthetic = dataset::ScenarioSpec{};
  std::optional<CsvSource> csv;
  SplitConfig split;
  EncodeConfig encode;
  HpoStageConfig hpo;
  TrainStageConfig train;
  EvalConfig eval;

  /// Checks nested invariants; throws InvalidArgument.
  void validate() const;

  /// Sets every seed to `seed` (the FAULTDX_SEED override).
  void override_seeds(std::uint64_t seed);
};

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// SHA-256 of the canonical JSON form, artifact_dir excluded.
std::string config_hash(const RunConfig& cfg);

/// Searchable training hyperparameters: learning rate, momentum, weight
/// decay coefficient, batch size and warm-up steps.
bayesopt::SearchSpace default_search_space();
bayesopt::SearchSpace search_space(const HpoStageConfig& cfg);

/// Applies a config drawn from `space` to a base training regime.
classifier::TrainConfig apply_config(const bayesopt::SearchSpace& space, const bayesopt::Config& config,
                                     classifier::TrainConfig base);

struct StageOptions {
  bool resume = false;
  bool force = false;
};

enum class Stage { synth, encode, hpo, train, eval };

std::string to_string(Stage stage);

/// Output files of each stage, relative to the artifact directory.
std::vector<std::string> stage_outputs(Stage stage);

/// Runs one stage. Each stage records its outputs and their hashes in
/// manifest.json and takes the artifact-directory lock for its duration.
void run_stage(Stage stage, const RunConfig& cfg, const StageOptions& options = {});

/// All stages in order. With `resume`, stages whose outputs already exist
/// under a matching config hash are skipped.
void run_pipeline(const RunConfig& cfg, const StageOptions& options = {});

}  // namespace faultdx::pipeline
