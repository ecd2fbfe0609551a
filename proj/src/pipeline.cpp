#include "faultdx/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <unistd.h>

#include "faultdx/classifier/model_io.hpp"
#include "faultdx/detail/binary_io.hpp"
#include "faultdx/error.hpp"
#include "faultdx/hash.hpp"
#include "faultdx/metrics.hpp"
#include "faultdx/preprocess.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument("unknown key '" + key + "' in " + where);
  }
}

std::string format_name(preprocess::ImageFormat f) { return f == preprocess::ImageFormat::png ? "png" : "pgm"; }

preprocess::ImageFormat parse_format(const std::string& s) {
  if (s == "pgm") return preprocess::ImageFormat::pgm;
  if (s == "png") return preprocess::ImageFormat::png;
  throw InvalidArgument("unknown image format '" + s + "' (expected pgm or png)");
}

std::string mode_name(bayesopt::ParallelMode m) { return m == bayesopt::ParallelMode::replicas ? "replicas" : "shared"; }

bayesopt::ParallelMode parse_mode(const std::string& s) {
  if (s == "shared") return bayesopt::ParallelMode::shared;
  if (s == "replicas") return bayesopt::ParallelMode::replicas;
  throw InvalidArgument("unknown hpo mode '" + s + "' (expected shared or replicas)");
}

void log(const std::string& msg) { std::cerr << "[faultdx] " << msg << "\n"; }

}  // namespace

// ---------------------------------------------------------------------------
// Config

void RunConfig::validate() const {
  if (artifact_dir.empty()) throw InvalidArgument("artifact_dir must be set");
  if (synthetic.has_value() == csv.has_value()) {
    throw InvalidArgument("dataset must name exactly one of 'synthetic' or 'csv'");
  }
  if (synthetic) synthetic->validate();
  if (csv && csv->path.empty()) throw InvalidArgument("dataset.csv.path must be set");
  if (!(split.train_frac > 0.0 && split.train_frac < 1.0)) throw InvalidArgument("split.train_frac must lie in (0, 1)");
  if (hpo.enabled) {
    bayesopt::HpoConfig hc;
    hc.budget = hpo.budget;
    hc.n_initial = hpo.n_initial;
    hc.parallelism = hpo.parallelism;
    hc.early_stop_threshold = hpo.early_stop;
    hc.validate();
    if (!(hpo.subsample_frac > 0.0 && hpo.subsample_frac <= 1.0)) {
      throw InvalidArgument("hpo.subsample_frac must lie in (0, 1]");
    }
    if (!(hpo.val_frac > 0.0 && hpo.val_frac < 1.0)) throw InvalidArgument("hpo.val_frac must lie in (0, 1)");
    if (hpo.trial_epochs == 0) throw InvalidArgument("hpo.trial_epochs must be positive");
    const auto space = search_space(hpo);
    apply_config(space, space.from_unit(std::vector<double>(space.encoded_size(), 0.5)), train.train);
  }
  train.train.validate();
  train.scaling.validate();
  if (!(train.val_frac > 0.0 && train.val_frac < 1.0)) throw InvalidArgument("train.val_frac must lie in (0, 1)");
  if (train.pretrain.enabled && train.pretrain.epochs == 0) throw InvalidArgument("train.pretrain.epochs must be positive");
  for (const auto& f : eval.formats) {
    if (f != "text" && f != "json") throw InvalidArgument("unknown eval format '" + f + "' (expected text or json)");
  }
  for (const auto& [name, values] : eval.reference_rows) {
    if (values.size() != 4) throw InvalidArgument("reference row '" + name + "' needs 4 values");
  }
}

void RunConfig::override_seeds(std::uint64_t seed) {
  if (synthetic) synthetic->seed = seed;
  split.seed = seed;
  hpo.seed = seed;
  train.train.seed = seed;
}

json to_json(const RunConfig& cfg) {
  json j;
  j["artifact_dir"] = cfg.artifact_dir.string();
  if (cfg.synthetic) {
    j["dataset"] = {{"synthetic", *cfg.synthetic}};
  } else if (cfg.csv) {
    j["dataset"] = {{"csv",
                     {{"path", cfg.csv->path.string()},
                      {"label_column", cfg.csv->schema.label_column},
                      {"param_columns", cfg.csv->schema.param_columns},
                      {"has_header", cfg.csv->schema.has_header}}}};
  }
  j["split"] = {{"train_frac", cfg.split.train_frac}, {"seed", cfg.split.seed}};
  j["encode"] = {{"gallery", cfg.encode.gallery}, {"gallery_format", format_name(cfg.encode.gallery_format)}};
  j["hpo"] = {{"enabled", cfg.hpo.enabled},
              {"budget", cfg.hpo.budget},
              {"n_initial", cfg.hpo.n_initial},
              {"parallelism", cfg.hpo.parallelism},
              {"early_stop", cfg.hpo.early_stop},
              {"subsample_frac", cfg.hpo.subsample_frac},
              {"seed", cfg.hpo.seed},
              {"mode", mode_name(cfg.hpo.mode)},
              {"trial_epochs", cfg.hpo.trial_epochs},
              {"val_frac", cfg.hpo.val_frac},
              {"space_overrides", cfg.hpo.space_overrides}};
  j["train"] = {{"train", cfg.train.train},
                {"scaling", cfg.train.scaling},
                {"val_frac", cfg.train.val_frac},
                {"pretrain", {{"enabled", cfg.train.pretrain.enabled}, {"epochs", cfg.train.pretrain.epochs}}}};
  json rows = json::array();
  for (const auto& [name, v] : cfg.eval.reference_rows) {
    rows.push_back({{"model", name}, {"accuracy", v[0]}, {"f1", v[1]}, {"precision", v[2]}, {"recall", v[3]}});
  }
  j["eval"] = {{"model_name", cfg.eval.model_name}, {"formats", cfg.eval.formats}, {"reference_rows", rows}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, {"artifact_dir", "dataset", "split", "encode", "hpo", "train", "eval"}, "run config");
  RunConfig cfg;
  try {
    cfg.artifact_dir = j.value("artifact_dir", cfg.artifact_dir.string());
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      check_keys(d, {"synthetic", "csv"}, "dataset");
      cfg.synthetic.reset();
      if (d.contains("synthetic")) {
        check_keys(d.at("synthetic"), {"n_classes", "frames_per_class", "n_params", "signal_dims", "noise_sigma",
                                       "drift_amplitude", "scenario_length", "seed"},
                   "dataset.synthetic");
        cfg.synthetic = d.at("synthetic").get<dataset::ScenarioSpec>();
      }
      if (d.contains("csv")) {
        const auto& c = d.at("csv");
        check_keys(c, {"path", "label_column", "param_columns", "has_header"}, "dataset.csv");
        CsvSource src;
        src.path = c.at("path").get<std::string>();
        src.schema.label_column = c.at("label_column").get<std::string>();
        src.schema.param_columns = c.value("param_columns", std::vector<std::string>{});
        src.schema.has_header = c.value("has_header", true);
        cfg.csv = src;
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train_frac", "seed"}, "split");
      cfg.split.train_frac = s.value("train_frac", cfg.split.train_frac);
      cfg.split.seed = s.value("seed", cfg.split.seed);
    }
    if (j.contains("encode")) {
      const auto& e = j.at("encode");
      check_keys(e, {"gallery", "gallery_format"}, "encode");
      cfg.encode.gallery = e.value("gallery", cfg.encode.gallery);
      cfg.encode.gallery_format = parse_format(e.value("gallery_format", std::string("pgm")));
    }
    if (j.contains("hpo")) {
      const auto& h = j.at("hpo");
      check_keys(h, {"enabled", "budget", "n_initial", "parallelism", "early_stop", "subsample_frac", "seed", "mode",
                     "trial_epochs", "val_frac", "space_overrides"},
                 "hpo");
      auto& o = cfg.hpo;
      o.enabled = h.value("enabled", o.enabled);
      o.budget = h.value("budget", o.budget);
      o.n_initial = h.value("n_initial", o.n_initial);
      o.parallelism = h.value("parallelism", o.parallelism);
      o.early_stop = h.value("early_stop", o.early_stop);
      o.subsample_frac = h.value("subsample_frac", o.subsample_frac);
      o.seed = h.value("seed", o.seed);
      o.mode = parse_mode(h.value("mode", mode_name(o.mode)));
      o.trial_epochs = h.value("trial_epochs", o.trial_epochs);
      o.val_frac = h.value("val_frac", o.val_frac);
      if (h.contains("space_overrides")) o.space_overrides = h.at("space_overrides").get<std::vector<bayesopt::Dim>>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      check_keys(t, {"train", "scaling", "val_frac", "pretrain"}, "train");
      if (t.contains("train")) {
        check_keys(t.at("train"), {"batch_size", "epochs", "learning_rate", "momentum", "weight_decay",
                                   "weight_decay_coeff", "use_warmup", "warmup_steps", "seed", "anchor_ratio",
                                   "anchor_scale"},
                   "train.train");
        cfg.train.train = t.at("train").get<classifier::TrainConfig>();
      }
      if (t.contains("scaling")) {
        check_keys(t.at("scaling"), {"phi", "alpha", "beta", "gamma"}, "train.scaling");
        cfg.train.scaling = t.at("scaling").get<classifier::ScalingConfig>();
      }
      cfg.train.val_frac = t.value("val_frac", cfg.train.val_frac);
      if (t.contains("pretrain")) {
        const auto& p = t.at("pretrain");
        check_keys(p, {"enabled", "epochs"}, "train.pretrain");
        cfg.train.pretrain.enabled = p.value("enabled", cfg.train.pretrain.enabled);
        cfg.train.pretrain.epochs = p.value("epochs", cfg.train.pretrain.epochs);
      }
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      check_keys(e, {"model_name", "formats", "reference_rows"}, "eval");
      cfg.eval.model_name = e.value("model_name", cfg.eval.model_name);
      cfg.eval.formats = e.value("formats", cfg.eval.formats);
      if (e.contains("reference_rows")) {
        for (const auto& row : metrics::parse_report_table_json(json{{"rows", e.at("reference_rows")}})) {
          cfg.eval.reference_rows.push_back({row.model, {row.accuracy, row.f1, row.precision, row.recall}});
        }
      }
    }
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("malformed run config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const DataError&) {
    throw InvalidArgument("cannot read config file " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("artifact_dir");
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Search space

bayesopt::SearchSpace default_search_space() {
  using bayesopt::Dim;
  using bayesopt::Scale;
  return bayesopt::SearchSpace({
      Dim::continuous("learning_rate", 1e-5, 1e-1, Scale::log),
      Dim::continuous("momentum", 0.5, 0.99),
      Dim::continuous("weight_decay_coeff", 1e-6, 1e-2, Scale::log),
      Dim::integer("batch_size", 8, 64),
      Dim::integer("warmup_steps", 0, 1000),
  });
}

bayesopt::SearchSpace search_space(const HpoStageConfig& cfg) {
  auto dims = default_search_space().dims();
  for (const auto& o : cfg.space_overrides) {
    auto it = std::find_if(dims.begin(), dims.end(), [&](const bayesopt::Dim& d) { return d.name == o.name; });
    if (it == dims.end()) throw InvalidArgument("space override names unknown dimension '" + o.name + "'");
    *it = o;
  }
  return bayesopt::SearchSpace(std::move(dims));
}

classifier::TrainConfig apply_config(const bayesopt::SearchSpace& space, const bayesopt::Config& config,
                                     classifier::TrainConfig base) {
  space.check(config);
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& d = space.dims()[i];
    double v = config.values[i];
    if (d.kind == bayesopt::DimKind::categorical) {
      v = std::stod(d.options[static_cast<std::size_t>(v)]);
    }
    if (d.name == "learning_rate") {
      base.learning_rate = v;
    } else if (d.name == "momentum") {
      base.momentum = v;
    } else if (d.name == "weight_decay_coeff") {
      base.weight_decay_coeff = v;
    } else if (d.name == "batch_size") {
      base.batch_size = static_cast<std::size_t>(std::llround(v));
    } else if (d.name == "warmup_steps") {
      base.warmup_steps = static_cast<std::size_t>(std::llround(v));
    } else {
      throw InvalidArgument("no training field for search dimension '" + d.name + "'");
    }
  }
  base.validate();
  return base;
}

// ---------------------------------------------------------------------------
// Stages

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::synth: return "synth";
    case Stage::encode: return "encode";
    case Stage::hpo: return "hpo";
    case Stage::train: return "train";
    case Stage::eval: return "eval";
  }
  return "?";
}

std::vector<std::string> stage_outputs(Stage stage) {
  switch (stage) {
    case Stage::synth: return {"frames.bin", "labels.u16", "scenarios.u32", "classes.json"};
    case Stage::encode: return {"split.json", "stats.json", "images.bin"};
    case Stage::hpo: return {"trials.jsonl", "best.json"};
    case Stage::train: return {"model.bin", "history.csv"};
    case Stage::eval: return {"metrics.json", "confusion.csv"};
  }
  return {};
}

namespace {

constexpr Stage kAllStages[] = {Stage::synth, Stage::encode, Stage::hpo, Stage::train, Stage::eval};

/// Exclusive ownership of an artifact directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create artifact directory " + dir.string() + ": " + ec.message());
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (f == nullptr) {
      if (fs::exists(path_)) {
        throw DataError("artifact directory " + dir.string() + " is in use by another run (remove " + path_.string() +
                        " if it is stale)");
      }
      throw DataError("artifact directory " + dir.string() + " is not writable");
    }
    std::fprintf(f, "%ld\n", static_cast<long>(::getpid()));
    std::fclose(f);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

json seeds_json(const RunConfig& cfg) {
  json s{{"split", cfg.split.seed}, {"hpo", cfg.hpo.seed}, {"train", cfg.train.train.seed}};
  if (cfg.synthetic) s["synthetic"] = cfg.synthetic->seed;
  return s;
}

struct Context {
  const RunConfig& cfg;
  fs::path dir;
  std::string hash;
  json manifest;

  fs::path at(const std::string& name) const { return dir / name; }

  void save_manifest() const {
    const fs::path tmp = at("manifest.json.tmp");
    detail::write_file(tmp, manifest.dump(2) + "\n");
    fs::rename(tmp, at("manifest.json"));
  }

  /// Starts a stage record; removes the stage's previous record.
  json& begin(Stage stage) {
    json& rec = manifest["stages"][to_string(stage)];
    rec = json::object();
    rec["outputs"] = json::object();
    return rec;
  }

  void emit(json& rec, const std::string& name, std::string_view bytes) const {
    const fs::path p = at(name);
    fs::create_directories(p.parent_path());
    detail::write_file(p, bytes);
    rec["outputs"][name] = sha256_hex(bytes);
  }

  void record(json& rec, const std::string& name) const { rec["outputs"][name] = sha256_file(at(name)); }

  void require(const std::string& name, Stage producer) const {
    if (!fs::exists(at(name))) {
      throw DataError("missing " + at(name).string() + "; run `faultdx " + to_string(producer) + "` first");
    }
  }

  bool up_to_date(Stage stage) const {
    const auto stages = manifest.find("stages");
    if (stages == manifest.end()) return false;
    const auto rec = stages->find(to_string(stage));
    if (rec == stages->end()) return false;
    for (const auto& [name, digest] : rec->at("outputs").items()) {
      if (!fs::exists(at(name)) || sha256_file(at(name)) != digest.get<std::string>()) return false;
    }
    return true;
  }
};

struct SplitFile {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

SplitFile read_split(const Context& ctx) {
  const json j = json::parse(detail::read_file(ctx.at("split.json")));
  return {j.at("train").get<std::vector<std::size_t>>(), j.at("test").get<std::vector<std::size_t>>()};
}

std::vector<std::size_t> compose(const std::vector<std::size_t>& outer, const std::vector<std::size_t>& inner) {
  std::vector<std::size_t> out;
  out.reserve(inner.size());
  for (auto i : inner) out.push_back(outer[i]);
  return out;
}

void stage_synth(Context& ctx) {
  json& rec = ctx.begin(Stage::synth);
  std::error_code ec;
  fs::remove(ctx.at("spec.json"), ec);
  fs::remove(ctx.at("source.json"), ec);
  if (ctx.cfg.synthetic) {
    const auto ds = dataset::generate_synthetic(*ctx.cfg.synthetic);
    dataset::save(ds, ctx.dir, &*ctx.cfg.synthetic);
    ctx.record(rec, "spec.json");
    log("synth: " + std::to_string(ds.size()) + " frames, " + std::to_string(ds.n_params()) + " parameters, " +
        std::to_string(ds.n_classes()) + " classes");
  } else {
    const auto& src = *ctx.cfg.csv;
    const auto ds = dataset::ingest_csv(src.path, src.schema);
    dataset::save(ds, ctx.dir, nullptr);
    const json source{{"path", src.path.string()},
                      {"sha256", sha256_file(src.path)},
                      {"label_column", src.schema.label_column},
                      {"param_columns", src.schema.param_columns},
                      {"has_header", src.schema.has_header}};
    ctx.emit(rec, "source.json", source.dump(2) + "\n");
    log("synth: ingested " + std::to_string(ds.size()) + " frames from " + src.path.string());
  }
  for (const auto& name : stage_outputs(Stage::synth)) ctx.record(rec, name);
}

void stage_encode(Context& ctx) {
  for (const auto& name : stage_outputs(Stage::synth)) ctx.require(name, Stage::synth);
  const auto ds = dataset::load(ctx.dir);
  const auto sp = dataset::split_indices(ds, ctx.cfg.split.train_frac, ctx.cfg.split.seed);
  const auto stats = preprocess::fit_minmax(ds.select(sp.train));
  const auto images = preprocess::encode_dataset(ds, stats);

  json& rec = ctx.begin(Stage::encode);
  const json split{{"train_frac", ctx.cfg.split.train_frac}, {"seed", ctx.cfg.split.seed}, {"train", sp.train},
                   {"test", sp.test}};
  ctx.emit(rec, "split.json", split.dump() + "\n");
  ctx.emit(rec, "stats.json", json(stats).dump() + "\n");
  preprocess::save_images(images, ds.n_params(), ctx.at("images.bin"));
  ctx.record(rec, "images.bin");

  std::error_code ec;
  fs::remove_all(ctx.at("images"), ec);
  if (ctx.cfg.encode.gallery) {
    fs::create_directories(ctx.at("images"));
    std::set<std::uint32_t> seen;
    for (auto i : sp.train) {
      const auto label = images[i].label;
      if (!seen.insert(label).second) continue;
      char name[64];
      std::snprintf(name, sizeof name, "images/class_%02u.%s", label,
                    format_name(ctx.cfg.encode.gallery_format).c_str());
      preprocess::export_image(images[i], ctx.at(name), ctx.cfg.encode.gallery_format);
      ctx.record(rec, name);
    }
  }
  log("encode: " + std::to_string(images.size()) + " images of " + std::to_string(images.front().side) + "x" +
      std::to_string(images.front().side) + ", " + std::to_string(stats.constant_channels.size()) +
      " constant channels");
}

void stage_hpo(Context& ctx) {
  std::error_code ec;
  fs::remove(ctx.at("trials.jsonl"), ec);
  fs::remove(ctx.at("best.json"), ec);
  json& rec = ctx.begin(Stage::hpo);
  const auto& hc = ctx.cfg.hpo;
  if (!hc.enabled) {
    rec["skipped"] = true;
    log("hpo: disabled");
    return;
  }
  for (const auto& name : stage_outputs(Stage::synth)) ctx.require(name, Stage::synth);
  ctx.require("images.bin", Stage::encode);
  ctx.require("split.json", Stage::encode);

  const auto ds = dataset::load(ctx.dir);
  const auto split = read_split(ctx);
  const auto images = preprocess::load_images(ctx.at("images.bin"));
  const auto train_ds = ds.select(split.train);
  const auto sub = compose(split.train, dataset::subsample_indices(train_ds, hc.subsample_frac, hc.seed));
  const auto inner = dataset::split_indices(ds.select(sub), 1.0 - hc.val_frac, derive_seed(hc.seed, 2));

  const auto& scaling = ctx.cfg.train.scaling;
  const std::size_t n_classes = ds.n_classes();
  const std::size_t side = classifier::make_architecture(scaling, n_classes).input_side;
  const auto trial_train = classifier::make_image_set(images, compose(sub, inner.train), side);
  const auto trial_val = classifier::make_image_set(images, compose(sub, inner.test), side);

  const auto space = search_space(hc);
  const auto base = ctx.cfg.train.train;
  const std::size_t trial_epochs = hc.trial_epochs;
  const bayesopt::Objective objective = [&](const bayesopt::Config& config, std::uint64_t trial_seed) {
    auto tc = apply_config(space, config, base);
    tc.epochs = trial_epochs;
    tc.seed = trial_seed;
    auto model = classifier::build_model<float>(scaling, n_classes, derive_seed(trial_seed, 1));
    return classifier::train(std::move(model), trial_train, trial_val, tc).best_val_accuracy;
  };

  bayesopt::HpoConfig config;
  config.budget = hc.budget;
  config.n_initial = hc.n_initial;
  config.parallelism = hc.parallelism;
  config.early_stop_threshold = hc.early_stop;
  config.seed = hc.seed;
  config.mode = hc.mode;
  log("hpo: " + std::to_string(hc.budget) + " trials on " + std::to_string(trial_train.size()) + "/" +
      std::to_string(trial_val.size()) + " images, parallelism " + std::to_string(hc.parallelism));
  const auto state = bayesopt::run_hpo(objective, space, config);
  ctx.emit(rec, "trials.jsonl", bayesopt::trials_jsonl(space, state));
  const auto* best = state.best();
  if (best == nullptr) {
    ctx.save_manifest();
    throw NumericalError("every HPO trial failed; see " + ctx.at("trials.jsonl").string());
  }
  const json best_json{{"trial_id", best->trial_id},
                       {"objective", best->objective},
                       {"config", space.config_to_json(best->config)},
                       {"train", apply_config(space, best->config, base)},
                       {"stop_reason", bayesopt::to_string(state.stop_reason)},
                       {"trials", state.history.size()}};
  ctx.emit(rec, "best.json", best_json.dump(2) + "\n");
  rec["stop_reason"] = bayesopt::to_string(state.stop_reason);
  log("hpo: best trial " + std::to_string(best->trial_id) + " objective " + std::to_string(best->objective) + " (" +
      bayesopt::to_string(state.stop_reason) + ")");
}

void stage_train(Context& ctx) {
  for (const auto& name : stage_outputs(Stage::synth)) ctx.require(name, Stage::synth);
  ctx.require("images.bin", Stage::encode);
  ctx.require("split.json", Stage::encode);

  classifier::TrainConfig tc = ctx.cfg.train.train;
  std::string source = "defaults: table-II";
  if (ctx.cfg.hpo.enabled && fs::exists(ctx.at("best.json"))) {
    const json best = json::parse(detail::read_file(ctx.at("best.json")));
    tc = best.at("train").get<classifier::TrainConfig>();
    tc.epochs = ctx.cfg.train.train.epochs;
    tc.seed = ctx.cfg.train.train.seed;
    source = "best.json";
  }

  const auto ds = dataset::load(ctx.dir);
  const auto split = read_split(ctx);
  const auto images = preprocess::load_images(ctx.at("images.bin"));
  const auto inner = dataset::split_indices(ds.select(split.train), 1.0 - ctx.cfg.train.val_frac,
                                            derive_seed(tc.seed, 3));
  const auto& scaling = ctx.cfg.train.scaling;
  auto model = classifier::build_model<float>(scaling, ds.n_classes(), derive_seed(tc.seed, 1));
  const auto train_set = classifier::make_image_set(images, compose(split.train, inner.train), model.input_side());
  const auto val_set = classifier::make_image_set(images, compose(split.train, inner.test), model.input_side());

  json& rec = ctx.begin(Stage::train);
  rec["hyperparameters"] = source;
  rec["train_config"] = tc;
  std::error_code ec;
  fs::remove(ctx.at("pretrain_history.csv"), ec);
  if (ctx.cfg.train.pretrain.enabled) {
    auto pc = tc;
    pc.epochs = ctx.cfg.train.pretrain.epochs;
    pc.seed = derive_seed(tc.seed, 4);
    auto pre = classifier::pretrain_pretext(model, train_set, val_set, pc);
    model = std::move(pre.backbone);
    ctx.emit(rec, "pretrain_history.csv", classifier::history_csv(pre.history));
    rec["pretext_accuracy"] = pre.heldout_accuracy;
    log("train: pretext rotation accuracy " + std::to_string(pre.heldout_accuracy));
  }
  log("train: " + std::to_string(tc.epochs) + " epochs on " + std::to_string(train_set.size()) + " images (" +
      std::to_string(model.input_side()) + " px, " + source + ")");
  const auto result = classifier::train(std::move(model), train_set, val_set, tc);
  ctx.emit(rec, "model.bin", classifier::serialize_model(result.model));
  ctx.emit(rec, "history.csv", classifier::history_csv(result.history));
  rec["best_epoch"] = result.best_epoch;
  rec["best_val_accuracy"] = result.best_val_accuracy;
  log("train: best validation accuracy " + std::to_string(result.best_val_accuracy) + " at epoch " +
      std::to_string(result.best_epoch));
}

void stage_eval(Context& ctx) {
  ctx.require("classes.json", Stage::synth);
  ctx.require("images.bin", Stage::encode);
  ctx.require("split.json", Stage::encode);
  ctx.require("model.bin", Stage::train);

  const auto model = classifier::load_model(ctx.at("model.bin"));
  const auto split = read_split(ctx);
  const auto images = preprocess::load_images(ctx.at("images.bin"));
  const auto test = classifier::make_image_set(images, split.test, model.input_side());
  const auto pred = classifier::predict_labels(model, std::span<const float>(test.pixels), test.size());
  const auto cm = metrics::confusion(test.labels, pred, model.n_classes());
  const auto report = metrics::compute_metrics(cm);

  json& rec = ctx.begin(Stage::eval);
  json m = report;
  m["model"] = ctx.cfg.eval.model_name;
  m["n_test"] = test.size();
  ctx.emit(rec, "metrics.json", m.dump(2) + "\n");
  ctx.emit(rec, "confusion.csv", metrics::confusion_csv(cm));

  std::vector<metrics::TableRow> rows{metrics::table_row(ctx.cfg.eval.model_name, report)};
  for (const auto& [name, v] : ctx.cfg.eval.reference_rows) rows.push_back({name, v[0], v[1], v[2], v[3]});
  std::error_code ec;
  fs::remove(ctx.at("report.txt"), ec);
  fs::remove(ctx.at("report.json"), ec);
  for (const auto& f : ctx.cfg.eval.formats) {
    if (f == "text") ctx.emit(rec, "report.txt", metrics::report_table_text(rows));
    if (f == "json") ctx.emit(rec, "report.json", metrics::report_table_json(rows).dump(2) + "\n");
  }
  log("eval: test accuracy " + std::to_string(report.accuracy) + " on " + std::to_string(test.size()) + " images");
}

Context open_context(const RunConfig& cfg, const StageOptions& options) {
  cfg.validate();
  Context ctx{cfg, cfg.artifact_dir, config_hash(cfg), json::object()};
  const fs::path mpath = ctx.at("manifest.json");
  if (fs::exists(mpath)) {
    json old;
    try {
      old = json::parse(detail::read_file(mpath));
    } catch (const json::exception&) {
      if (!options.force) throw DataError(mpath.string() + " is corrupt; pass --force to start over");
    }
    const std::string old_hash = old.is_object() ? old.value("config_hash", std::string()) : std::string();
    if (old_hash == ctx.hash) {
      ctx.manifest = std::move(old);
    } else if (!options.force) {
      throw InvalidArgument("artifact directory " + ctx.dir.string() + " holds artifacts of config " +
                            old_hash.substr(0, 12) + " but the current config hashes to " + ctx.hash.substr(0, 12) +
                            "; pass --force to overwrite");
    }
  }
  ctx.manifest["config_hash"] = ctx.hash;
  ctx.manifest["config"] = to_json(cfg);
  ctx.manifest["seeds"] = seeds_json(cfg);
  if (!ctx.manifest.contains("stages")) ctx.manifest["stages"] = json::object();
  return ctx;
}

void run_one(Context& ctx, Stage stage, const StageOptions& options) {
  if (options.resume && ctx.up_to_date(stage)) {
    log(to_string(stage) + ": up to date, skipped");
    return;
  }
  switch (stage) {
    case Stage::synth: stage_synth(ctx); break;
    case Stage::encode: stage_encode(ctx); break;
    case Stage::hpo: stage_hpo(ctx); break;
    case Stage::train: stage_train(ctx); break;
    case Stage::eval: stage_eval(ctx); break;
  }
  ctx.save_manifest();
}

}  // namespace

void run_stage(Stage stage, const RunConfig& cfg, const StageOptions& options) {
  cfg.validate();
  DirLock lock(cfg.artifact_dir);
  auto ctx = open_context(cfg, options);
  run_one(ctx, stage, options);
}

void run_pipeline(const RunConfig& cfg, const StageOptions& options) {
  cfg.validate();
  DirLock lock(cfg.artifact_dir);
  auto ctx = open_context(cfg, options);
  for (Stage s : kAllStages) run_one(ctx, s, options);
}

}  // namespace faultdx::pipeline
