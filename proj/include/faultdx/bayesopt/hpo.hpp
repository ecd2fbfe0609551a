#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faultdx/bayesopt/acquisition.hpp"
#include "faultdx/bayesopt/gaussian_process.hpp"
#include "faultdx/bayesopt/search_space.hpp"

namespace faultdx::bayesopt {

enum class TrialStatus { pending, done, failed };

struct Trial {
  std::size_t trial_id = 0;
  Config config;
  double objective = 0.0;
  TrialStatus status = TrialStatus::pending;
  double wall_seconds = 0.0;
  std::string error;
};

/// How the `parallelism` evaluators are organized.
enum class ParallelMode {
  /// One search, shared surrogate, constant-liar imputation for trials in flight.
  shared,
  /// `parallelism` independent serial searches with split budgets.
  replicas,
};

struct HpoConfig {
  std::size_t budget = 30;
  std::size_t n_initial = 10;
  std::size_t parallelism = 5;
  double early_stop_threshold = 0.90;
  std::uint64_t seed = 0;
  ParallelMode mode = ParallelMode::shared;
  GpFitOptions gp;
  ProposalOptions proposal;

  void validate() const;
};

enum class StopReason { early_stop, budget, failures };

struct HpoState {
  std::vector<Trial> history;
  std::optional<std::size_t> incumbent;  // index into history
  HpoConfig config;
  StopReason stop_reason = StopReason::budget;

  const Trial* best() const { return incumbent ? &history[*incumbent] : nullptr; }
  std::size_t count(TrialStatus status) const;
};

/// Objective to maximize. Receives the config and a per-trial seed; returns a
/// value in [0, 1]. Throwing, or returning a non-finite or out-of-range value,
/// marks the trial failed. Must be safe to call concurrently with itself.
using Objective = std::function<double(const Config&, std::uint64_t trial_seed)>;

/// Runs Bayesian optimization. In shared mode completions are folded into the
/// surrogate strictly in trial-id order, so the run is a deterministic
/// function of the seeds and objective values for any parallelism.
HpoState run_hpo(const Objective& objective, const SearchSpace& space, const HpoConfig& config);

/// Same budget and seeding, configs drawn uniformly at random. Serial.
HpoState run_random_search(const Objective& objective, const SearchSpace& space,
                           const HpoConfig& config);

std::string to_string(TrialStatus status);
std::string to_string(StopReason reason);

/// One JSON object per trial: trial_id, config, objective, status, wall-clock seconds.
nlohmann::json trial_to_json(const SearchSpace& space, const Trial& trial);
std::string trials_jsonl(const SearchSpace& space, const HpoState& state);

}  // namespace faultdx::bayesopt
