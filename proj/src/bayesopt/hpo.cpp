#include "faultdx/bayesopt/hpo.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <sstream>

#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::bayesopt {

using nlohmann::json;

void HpoConfig::validate() const {
  if (n_initial == 0) throw InvalidArgument("n_initial must be at least 1");
  if (budget < n_initial) throw InvalidArgument("budget must be >= n_initial");
  if (parallelism == 0) throw InvalidArgument("parallelism must be at least 1");
  if (std::isnan(early_stop_threshold)) throw InvalidArgument("early_stop threshold is NaN");
}

std::size_t HpoState::count(TrialStatus status) const {
  std::size_t n = 0;
  for (const auto& t : history) n += t.status == status ? 1 : 0;
  return n;
}

std::string to_string(TrialStatus status) {
  switch (status) {
    case TrialStatus::pending: return "pending";
    case TrialStatus::done: return "done";
    case TrialStatus::failed: return "failed";
  }
  return "unknown";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::early_stop: return "early_stop";
    case StopReason::budget: return "budget";
    case StopReason::failures: return "failures";
  }
  return "unknown";
}

namespace {

struct Outcome {
  TrialStatus status = TrialStatus::failed;
  double objective = 0.0;
  double seconds = 0.0;
  std::string error;
};

Outcome evaluate(const Objective& objective, const Config& config, std::uint64_t trial_seed) {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    const double v = objective(config, trial_seed);
    if (std::isfinite(v) && v >= 0.0 && v <= 1.0) {
      out.status = TrialStatus::done;
      out.objective = v;
    } else {
      out.error = "objective returned " + std::to_string(v);
    }
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::uint64_t trial_seed(std::uint64_t seed, std::size_t id) { return derive_seed(seed, 300000 + id); }

/// Surrogate over done trials, pending ones imputed with the incumbent value.
Config propose(const SearchSpace& space, const std::vector<Trial>& history, std::optional<std::size_t> incumbent,
               const HpoConfig& cfg, std::size_t id) {
  std::vector<Config> taken;
  for (const auto& t : history) taken.push_back(t.config);
  if (!incumbent) {
    Rng rng(derive_seed(cfg.seed, 200000 + id));
    std::vector<double> u(space.encoded_size());
    for (auto& v : u) v = rng.uniform();
    return space.from_unit(u);
  }
  const double liar = history[*incumbent].objective;
  std::vector<std::vector<double>> xs;
  std::vector<double> ys;
  for (const auto& t : history) {
    if (t.status == TrialStatus::failed) continue;
    xs.push_back(space.to_unit(t.config));
    ys.push_back(t.status == TrialStatus::done ? t.objective : liar);
  }
  GpFitOptions gp = cfg.gp;
  gp.seed = derive_seed(cfg.seed, 100000 + id);
  const Surrogate s = gp_fit(xs, ys, gp);
  return propose_next(space, s, liar, taken, derive_seed(cfg.seed, 200000 + id), cfg.proposal);
}

HpoState run_shared(const Objective& objective, const SearchSpace& space, const HpoConfig& cfg,
                    std::atomic<bool>* shared_stop) {
  cfg.validate();
  HpoState state;
  state.config = cfg;
  const auto initial = latin_hypercube(space, cfg.n_initial, derive_seed(cfg.seed, 1));
  std::map<std::size_t, std::future<Outcome>> in_flight;
  std::map<std::size_t, Outcome> ready;  // serial mode
  std::size_t failures = 0;
  bool stop = false;

  auto launch = [&] {
    const std::size_t id = state.history.size();
    Trial t;
    t.trial_id = id;
    t.config = id < initial.size() ? initial[id] : propose(space, state.history, state.incumbent, cfg, id);
    state.history.push_back(t);
    const auto seed = trial_seed(cfg.seed, id);
    if (cfg.parallelism == 1) {
      ready.emplace(id, evaluate(objective, t.config, seed));
    } else {
      in_flight.emplace(id, std::async(std::launch::async,
                                       [&objective, config = t.config, seed] { return evaluate(objective, config, seed); }));
    }
  };
  auto refill = [&](std::size_t processed) {
    if (shared_stop != nullptr && shared_stop->load()) {
      stop = true;
      state.stop_reason = StopReason::early_stop;
    }
    while (!stop && state.history.size() < cfg.budget && state.history.size() - processed < cfg.parallelism) launch();
  };

  std::size_t processed = 0;
  refill(processed);
  while (processed < state.history.size()) {
    Outcome out;
    if (auto it = ready.find(processed); it != ready.end()) {
      out = std::move(it->second);
      ready.erase(it);
    } else {
      auto f = in_flight.find(processed);
      out = f->second.get();
      in_flight.erase(f);
    }
    Trial& t = state.history[processed];
    t.status = out.status;
    t.objective = out.objective;
    t.wall_seconds = out.seconds;
    t.error = out.error;
    if (t.status == TrialStatus::done) {
      if (!state.incumbent || t.objective > state.history[*state.incumbent].objective) state.incumbent = processed;
      if (!stop && t.objective >= cfg.early_stop_threshold) {
        stop = true;
        state.stop_reason = StopReason::early_stop;
        if (shared_stop != nullptr) shared_stop->store(true);
      }
    } else {
      ++failures;
      if (!stop && failures > cfg.budget / 2) {
        stop = true;
        state.stop_reason = StopReason::failures;
      }
    }
    ++processed;
    refill(processed);
  }
  return state;
}

}  // namespace

HpoState run_hpo(const Objective& objective, const SearchSpace& space, const HpoConfig& config) {
  config.validate();
  if (config.mode == ParallelMode::shared || config.parallelism == 1) return run_shared(objective, space, config, nullptr);

  // Independent replicas. The shared stop flag makes the early-stop point
  // timing dependent, so this mode is not bit-reproducible.
  const std::size_t replicas = std::min(config.parallelism, config.budget);
  std::atomic<bool> stop_flag{false};
  std::vector<std::future<HpoState>> runs;
  for (std::size_t r = 0; r < replicas; ++r) {
    HpoConfig sub = config;
    sub.mode = ParallelMode::shared;
    sub.parallelism = 1;
    sub.budget = config.budget / replicas + (r < config.budget % replicas ? 1 : 0);
    sub.n_initial = std::min(config.n_initial, sub.budget);
    sub.seed = derive_seed(config.seed, 7000 + r);
    runs.push_back(std::async(std::launch::async,
                              [&objective, &space, sub, &stop_flag] { return run_shared(objective, space, sub, &stop_flag); }));
  }
  HpoState merged;
  merged.config = config;
  merged.stop_reason = StopReason::budget;
  for (auto& f : runs) {
    HpoState part = f.get();
    if (part.stop_reason == StopReason::early_stop) merged.stop_reason = StopReason::early_stop;
    if (part.stop_reason == StopReason::failures && merged.stop_reason == StopReason::budget) {
      merged.stop_reason = StopReason::failures;
    }
    for (auto& t : part.history) {
      t.trial_id = merged.history.size();
      merged.history.push_back(std::move(t));
      const auto& added = merged.history.back();
      if (added.status == TrialStatus::done &&
          (!merged.incumbent || added.objective > merged.history[*merged.incumbent].objective)) {
        merged.incumbent = added.trial_id;
      }
    }
  }
  return merged;
}

HpoState run_random_search(const Objective& objective, const SearchSpace& space, const HpoConfig& config) {
  config.validate();
  HpoState state;
  state.config = config;
  Rng rng(derive_seed(config.seed, 9));
  std::size_t failures = 0;
  for (std::size_t id = 0; id < config.budget; ++id) {
    std::vector<double> u(space.encoded_size(), 0.0);
    std::size_t pos = 0;
    for (const auto& d : space.dims()) {
      if (d.kind == DimKind::categorical) {
        u[pos + rng.below(d.options.size())] = 1.0;
        pos += d.options.size();
      } else {
        u[pos++] = rng.uniform();
      }
    }
    Trial t;
    t.trial_id = id;
    t.config = space.from_unit(u);
    const Outcome out = evaluate(objective, t.config, trial_seed(config.seed, id));
    t.status = out.status;
    t.objective = out.objective;
    t.wall_seconds = out.seconds;
    t.error = out.error;
    state.history.push_back(t);
    if (t.status == TrialStatus::done) {
      if (!state.incumbent || t.objective > state.history[*state.incumbent].objective) state.incumbent = id;
      if (t.objective >= config.early_stop_threshold) {
        state.stop_reason = StopReason::early_stop;
        break;
      }
    } else if (++failures > config.budget / 2) {
      state.stop_reason = StopReason::failures;
      break;
    }
  }
  return state;
}

json trial_to_json(const SearchSpace& space, const Trial& trial) {
  json j{{"trial_id", trial.trial_id},
         {"config", space.config_to_json(trial.config)},
         {"status", to_string(trial.status)},
         {"wall_seconds", trial.wall_seconds}};
  j["objective"] = trial.status == TrialStatus::done ? json(trial.objective) : json(nullptr);
  if (!trial.error.empty()) j["error"] = trial.error;
  return j;
}

std::string trials_jsonl(const SearchSpace& space, const HpoState& state) {
  std::ostringstream out;
  for (const auto& t : state.history) out << trial_to_json(space, t).dump() << '\n';
  return out.str();
}

}  // namespace faultdx::bayesopt
