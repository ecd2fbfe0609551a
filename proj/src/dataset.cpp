#include "faultdx/dataset.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "faultdx/detail/binary_io.hpp"
#include "faultdx/error.hpp"
#include "faultdx/hash.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::dataset {

using nlohmann::json;

Dataset::Dataset(std::vector<SensorFrame> frames, std::vector<FaultClass> classes, Provenance provenance)
    : frames_(std::move(frames)), classes_(std::move(classes)), provenance_(std::move(provenance)) {
  if (frames_.empty()) throw DataError("dataset has no frames");
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].id != i) throw DataError("class ids must be dense and ordered");
    for (std::size_t j = 0; j < i; ++j) {
      if (classes_[j].name == classes_[i].name) throw DataError("duplicate class name " + classes_[i].name);
    }
  }
  const std::size_t p = frames_.front().values.size();
  if (p == 0) throw DataError("frames have no parameters");
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    const auto& f = frames_[i];
    if (f.values.size() != p) throw DataError("frame " + std::to_string(i) + " has inconsistent length");
    if (f.label >= classes_.size()) throw DataError("frame " + std::to_string(i) + " has unknown label");
    for (float v : f.values) {
      if (!std::isfinite(v)) throw DataError("frame " + std::to_string(i) + " has a non-finite value");
    }
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(classes_.size(), 0);
  for (const auto& f : frames_) ++counts[f.label];
  return counts;
}

Dataset Dataset::select(const std::vector<std::size_t>& indices) const {
  std::vector<SensorFrame> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(frames_.at(i));
  return Dataset(std::move(out), classes_, provenance_);
}

// ---------------------------------------------------------------------------
// Spec

void ScenarioSpec::validate() const {
  if (n_classes == 0) throw InvalidArgument("invalid spec: n_classes must be positive");
  if (frames_per_class == 0) throw InvalidArgument("invalid spec: frames_per_class must be positive");
  if (n_params == 0) throw InvalidArgument("invalid spec: n_params must be positive");
  if (signal_dims == 0 || signal_dims > n_params) {
    throw InvalidArgument("invalid spec: signal_dims must lie in [1, n_params]");
  }
  if (component_count(n_classes) * signal_dims > n_params) {
    throw InvalidArgument("invalid spec: components need " +
                          std::to_string(component_count(n_classes) * signal_dims) +
                          " exclusive channels but n_params is " + std::to_string(n_params));
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw InvalidArgument("invalid spec: noise_sigma must be >= 0");
  if (!(drift_amplitude >= 0.0) || !std::isfinite(drift_amplitude)) {
    throw InvalidArgument("invalid spec: drift_amplitude must be >= 0");
  }
  if (scenario_length == 0) throw InvalidArgument("invalid spec: scenario_length must be positive");
}

void to_json(json& j, const ScenarioSpec& s) {
  j = json{{"n_classes", s.n_classes},         {"frames_per_class", s.frames_per_class},
           {"n_params", s.n_params},           {"signal_dims", s.signal_dims},
           {"noise_sigma", s.noise_sigma},     {"drift_amplitude", s.drift_amplitude},
           {"scenario_length", s.scenario_length}, {"seed", s.seed}};
}

void from_json(const json& j, ScenarioSpec& s) {
  ScenarioSpec d;
  s.n_classes = j.value("n_classes", d.n_classes);
  s.frames_per_class = j.value("frames_per_class", d.frames_per_class);
  s.n_params = j.value("n_params", d.n_params);
  s.signal_dims = j.value("signal_dims", d.signal_dims);
  s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  s.drift_amplitude = j.value("drift_amplitude", d.drift_amplitude);
  s.scenario_length = j.value("scenario_length", d.scenario_length);
  s.seed = j.value("seed", d.seed);
}

// ---------------------------------------------------------------------------
// Fault layout

std::size_t component_count(std::size_t n_classes) {
  std::size_t k = 1;
  while (k + k * (k - 1) / 2 < n_classes) ++k;
  return k;
}

std::vector<std::vector<std::size_t>> class_components(std::size_t n_classes) {
  const std::size_t k = component_count(n_classes);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t c = 0; c < k && out.size() < n_classes; ++c) out.push_back({c});
  for (std::size_t a = 0; a < k && out.size() < n_classes; ++a) {
    for (std::size_t b = a + 1; b < k && out.size() < n_classes; ++b) out.push_back({a, b});
  }
  return out;
}

namespace {

constexpr const char* kComponentNames[] = {
    "coolant-pump-seal-leak", "steam-valve-stuck",     "feedwater-pipe-break",
    "condensate-pump-trip",   "sg-tube-rupture",       "spray-valve-fail",
};

std::string component_name(std::size_t k) {
  if (k < std::size(kComponentNames)) return kComponentNames[k];
  return "component-" + std::to_string(k);
}

std::vector<FaultClass> make_classes(std::size_t n_classes) {
  std::vector<FaultClass> classes;
  const auto comps = class_components(n_classes);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    std::string name;
    for (std::size_t k : comps[c]) {
      if (!name.empty()) name += "+";
      name += component_name(k);
    }
    classes.push_back({static_cast<std::uint32_t>(c), name});
  }
  return classes;
}

std::size_t ceil_sqrt(std::size_t p) {
  auto n = static_cast<std::size_t>(std::sqrt(static_cast<double>(p)));
  while (n * n < p) ++n;
  while (n > 1 && (n - 1) * (n - 1) >= p) --n;
  return n;
}

/// Shape of component k inside a tile, on a 16x16 reference grid scaled to
/// the tile. Shapes are isolated blobs so a bright (active) instance differs
/// from a dark (inactive) one under any translation.
bool motif_on(std::size_t k, std::size_t x, std::size_t y, std::size_t tile,
              const std::vector<std::uint16_t>& random_masks) {
  const std::size_t u = x * 16 / tile;
  const std::size_t v = y * 16 / tile;
  auto in = [](std::size_t a, std::size_t lo, std::size_t hi) { return a >= lo && a < hi; };
  switch (k) {
    case 0: return in(v, 5, 11) && in(u, 2, 14);                                  // horizontal bar
    case 1: return in(u, 5, 11) && in(v, 2, 14);                                  // vertical bar
    case 2: return (in(v, 6, 10) && in(u, 1, 15)) || (in(u, 6, 10) && in(v, 1, 15));  // cross
    case 3: return in(u, 2, 14) && in(v, 2, 14) && !(in(u, 5, 11) && in(v, 5, 11));   // ring
    case 4: return in(u, 4, 12) && in(v, 4, 12);                                  // square
    case 5: return (in(u, 1, 7) && in(v, 1, 7)) || (in(u, 9, 15) && in(v, 9, 15));    // two blocks
    default: {
      const std::uint16_t mask = random_masks[k - 6];
      return ((mask >> ((v / 4) * 4 + (u / 4))) & 1U) != 0;
    }
  }
}

}  // namespace

std::vector<std::vector<std::size_t>> component_channels(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t k_total = component_count(spec.n_classes);
  const std::size_t side = ceil_sqrt(spec.n_params);
  const std::size_t tile = std::min<std::size_t>(16, side);

  Rng rng(derive_seed(spec.seed, 1));
  std::vector<std::uint16_t> random_masks;
  for (std::size_t k = 6; k < k_total; ++k) {
    std::uint16_t m = 0;
    while (std::popcount(m) < 4 || std::popcount(m) > 12) m = static_cast<std::uint16_t>(rng.below(1U << 16));
    random_masks.push_back(m);
  }

  // Whole tiles that lie inside the valid channel range.
  std::vector<std::pair<std::size_t, std::size_t>> tiles;
  for (std::size_t ty = 0; ty + tile <= side; ty += tile) {
    for (std::size_t tx = 0; tx + tile <= side; tx += tile) {
      if ((ty + tile - 1) * side + tx + tile - 1 < spec.n_params) tiles.emplace_back(ty, tx);
    }
  }
  rng.shuffle(std::span(tiles));

  std::vector<std::vector<std::size_t>> owned(k_total);
  std::vector<bool> used(spec.n_params, false);
  std::size_t next_tile = 0;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t k = 0; k < k_total; ++k) {
      if (owned[k].size() >= spec.signal_dims || next_tile >= tiles.size()) continue;
      const auto [ty, tx] = tiles[next_tile++];
      for (std::size_t y = 0; y < tile && owned[k].size() < spec.signal_dims; ++y) {
        for (std::size_t x = 0; x < tile && owned[k].size() < spec.signal_dims; ++x) {
          if (!motif_on(k, x, y, tile, random_masks)) continue;
          const std::size_t ch = (ty + y) * side + tx + x;
          owned[k].push_back(ch);
          used[ch] = true;
        }
      }
      progress = true;
    }
  }
  // Out of tiles: top up from unused channels in seeded order.
  std::vector<std::size_t> free;
  for (std::size_t ch = 0; ch < spec.n_params; ++ch) {
    if (!used[ch]) free.push_back(ch);
  }
  rng.shuffle(std::span(free));
  std::size_t next_free = 0;
  for (auto& chans : owned) {
    while (chans.size() < spec.signal_dims) chans.push_back(free[next_free++]);
    std::sort(chans.begin(), chans.end());
  }
  return owned;
}

Dataset generate_synthetic(const ScenarioSpec& spec) {
  spec.validate();
  const std::size_t p = spec.n_params;
  const auto classes = make_classes(spec.n_classes);
  const auto comps = class_components(spec.n_classes);
  const auto channels = component_channels(spec);

  // Heterogeneous physical scales, offsets, drift periods and signal gains.
  Rng channel_rng(derive_seed(spec.seed, 2));
  std::vector<double> scale(p), offset(p), period(p);
  for (std::size_t i = 0; i < p; ++i) {
    scale[i] = std::pow(10.0, channel_rng.uniform(-1.0, 3.0));
    offset[i] = scale[i] * channel_rng.uniform(1.0, 5.0);
    period[i] = channel_rng.uniform(30.0, 90.0);
  }
  std::vector<double> signal_gain(p, 0.0);
  std::vector<int> owner(p, -1);
  for (std::size_t k = 0; k < channels.size(); ++k) {
    for (std::size_t ch : channels[k]) {
      owner[ch] = static_cast<int>(k);
      signal_gain[ch] = channel_rng.uniform(0.7, 1.3);
    }
  }

  const std::size_t per_class_scenarios = (spec.frames_per_class + spec.scenario_length - 1) / spec.scenario_length;
  std::vector<SensorFrame> frames;
  frames.reserve(spec.n_classes * spec.frames_per_class);
  std::vector<double> phase(p);
  std::vector<double> amp(channels.size());
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t s = 0; s < per_class_scenarios; ++s) {
      const std::size_t scenario = c * per_class_scenarios + s;
      Rng scen_rng(derive_seed(spec.seed, 1000 + scenario));
      for (std::size_t i = 0; i < p; ++i) phase[i] = scen_rng.uniform(0.0, 2.0 * std::numbers::pi);
      struct Transient {
        double level, boost, tau, omega, phi;
      };
      std::vector<Transient> transients;
      for (std::size_t k = 0; k < comps[c].size(); ++k) {
        transients.push_back({scen_rng.uniform(0.9, 1.1), scen_rng.uniform(0.1, 0.3), scen_rng.uniform(3.0, 10.0),
                              scen_rng.uniform(0.2, 0.8), scen_rng.uniform(0.0, 2.0 * std::numbers::pi)});
      }
      Rng noise_rng(derive_seed(spec.seed, 1'000'000 + scenario));
      const std::size_t first = s * spec.scenario_length;
      const std::size_t last = std::min(spec.frames_per_class, first + spec.scenario_length);
      for (std::size_t step = 0; step < last - first; ++step) {
        const double t = static_cast<double>(step);
        std::fill(amp.begin(), amp.end(), 0.0);
        for (std::size_t k = 0; k < comps[c].size(); ++k) {
          const auto& tr = transients[k];
          // Step onset, decaying overshoot and an oscillation on top.
          amp[comps[c][k]] = tr.level * (1.0 + tr.boost * std::exp(-t / tr.tau) + 0.1 * std::sin(tr.omega * t + tr.phi));
        }
        SensorFrame f;
        f.label = static_cast<std::uint32_t>(c);
        f.scenario_id = static_cast<std::uint32_t>(scenario);
        f.t = static_cast<std::uint32_t>(step);
        f.values.resize(p);
        for (std::size_t i = 0; i < p; ++i) {
          double u = spec.drift_amplitude * std::sin(2.0 * std::numbers::pi * t / period[i] + phase[i]) +
                     spec.noise_sigma * noise_rng.normal();
          if (owner[i] >= 0) u += signal_gain[i] * amp[static_cast<std::size_t>(owner[i])];
          f.values[i] = static_cast<float>(offset[i] + scale[i] * u);
        }
        frames.push_back(std::move(f));
      }
    }
  }
  return Dataset(std::move(frames), classes, SyntheticProvenance{spec.seed, sha256_hex(json(spec).dump())});
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

std::size_t resolve_column(const std::string& key, const std::vector<std::string>& header, bool has_header) {
  if (has_header) {
    const auto it = std::find(header.begin(), header.end(), key);
    if (it == header.end()) throw DataError("schema error: column '" + key + "' not in header");
    return static_cast<std::size_t>(it - header.begin());
  }
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
  if (ec != std::errc() || ptr != key.data() + key.size()) {
    throw DataError("schema error: column '" + key + "' must be an index when the file has no header");
  }
  return idx;
}

}  // namespace

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  const std::string content = detail::read_file(path);
  std::vector<std::string_view> lines;
  {
    std::string_view rest(content);
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      auto line = rest.substr(0, nl);
      if (!trim(line).empty()) lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }
  if (lines.empty()) throw DataError("CSV file " + path.string() + " is empty");

  std::vector<std::string> header;
  std::size_t first_row = 0;
  std::size_t n_cols = split_row(lines[0]).size();
  if (schema.has_header) {
    for (auto cell : split_row(lines[0])) header.emplace_back(cell);
    first_row = 1;
  }
  if (first_row >= lines.size()) throw DataError("CSV file " + path.string() + " has no data rows");
  if (schema.label_column.empty()) throw DataError("schema error: label column not declared");

  const std::size_t label_col = resolve_column(schema.label_column, header, schema.has_header);
  if (label_col >= n_cols) throw DataError("schema error: label column out of range");
  std::vector<std::size_t> param_cols;
  if (schema.param_columns.empty()) {
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (c != label_col) param_cols.push_back(c);
    }
  } else {
    for (const auto& key : schema.param_columns) {
      const std::size_t c = resolve_column(key, header, schema.has_header);
      if (c >= n_cols) throw DataError("schema error: column '" + key + "' out of range");
      param_cols.push_back(c);
    }
  }
  if (param_cols.empty()) throw DataError("schema error: no parameter columns");

  std::map<std::string, std::uint32_t> label_ids;
  std::vector<FaultClass> classes;
  std::vector<SensorFrame> frames;
  for (std::size_t r = first_row; r < lines.size(); ++r) {
    const std::size_t row_no = r + 1;  // 1-based file line
    const auto cells = split_row(lines[r]);
    if (cells.size() != n_cols) {
      throw DataError("row " + std::to_string(row_no) + ": expected " + std::to_string(n_cols) + " columns, found " +
                      std::to_string(cells.size()));
    }
    const std::string label(cells[label_col]);
    if (label.empty()) throw DataError("schema error: row " + std::to_string(row_no) + " has no label");
    auto [it, inserted] = label_ids.try_emplace(label, static_cast<std::uint32_t>(classes.size()));
    if (inserted) classes.push_back({it->second, label});

    SensorFrame f;
    f.label = it->second;
    f.t = static_cast<std::uint32_t>(frames.size());
    f.values.reserve(param_cols.size());
    for (std::size_t c : param_cols) {
      const auto cell = cells[c];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty() || !std::isfinite(v)) {
        const std::string col_name = header.empty() ? "" : " (" + header[c] + ")";
        throw DataError("parse error: row " + std::to_string(row_no) + ", column " + std::to_string(c + 1) + col_name +
                        ": '" + std::string(cell) + "' is not a finite number");
      }
      f.values.push_back(static_cast<float>(v));
    }
    frames.push_back(std::move(f));
  }
  return Dataset(std::move(frames), std::move(classes), IngestedProvenance{sha256_hex(content)});
}

// ---------------------------------------------------------------------------
// Splitting

namespace {

std::vector<std::vector<std::size_t>> by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> groups(ds.n_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) groups[ds.frames()[i].label].push_back(i);
  return groups;
}

}  // namespace

SplitIndices split_indices(const Dataset& ds, double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw InvalidArgument("train_frac must lie in (0, 1)");
  auto groups = by_class(ds);
  SplitIndices out;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    if (g.size() < 2) {
      throw DataError("stratification error: class '" + ds.classes()[c].name + "' has fewer than 2 frames");
    }
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span(g));
    // Tolerance guards products like 0.8 * 100 landing just below an integer.
    auto n_train = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(g.size()) + 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, g.size() - 1);
    out.train.insert(out.train.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.test.insert(out.test.end(), g.begin() + static_cast<std::ptrdiff_t>(n_train), g.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_frac, std::uint64_t seed) {
  const auto idx = split_indices(ds, train_frac, seed);
  return {ds.select(idx.train), ds.select(idx.test)};
}

std::vector<std::size_t> subsample_indices(const Dataset& ds, double frac, std::uint64_t seed) {
  if (!(frac > 0.0 && frac <= 1.0)) throw InvalidArgument("subsample fraction must lie in (0, 1]");
  std::vector<std::size_t> out;
  if (frac == 1.0) {
    out.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) out[i] = i;
    return out;
  }
  auto groups = by_class(ds);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto& g = groups[c];
    if (g.empty()) continue;
    Rng rng(derive_seed(seed, c));
    rng.shuffle(std::span(g));
    auto n = static_cast<std::size_t>(std::llround(frac * static_cast<double>(g.size())));
    n = std::clamp<std::size_t>(n, 1, g.size());
    out.insert(out.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset subsample(const Dataset& ds, double frac, std::uint64_t seed) {
  if (frac == 1.0) return ds;
  return ds.select(subsample_indices(ds, frac, seed));
}

// ---------------------------------------------------------------------------
// Persistence

void save(const Dataset& ds, const std::filesystem::path& dir, const ScenarioSpec* spec) {
  if (ds.n_classes() > 65535) throw DataError("labels.u16 cannot hold more than 65535 classes");
  std::filesystem::create_directories(dir);
  detail::ByteWriter frames, labels, scenarios;
  for (const auto& f : ds.frames()) {
    for (float v : f.values) frames.f32(v);
    labels.u16(static_cast<std::uint16_t>(f.label));
    scenarios.u32(f.scenario_id);
    scenarios.u32(f.t);
  }
  detail::write_file(dir / "frames.bin", frames.str());
  detail::write_file(dir / "labels.u16", labels.str());
  detail::write_file(dir / "scenarios.u32", scenarios.str());

  json classes = json::array();
  for (const auto& c : ds.classes()) classes.push_back({{"id", c.id}, {"name", c.name}});
  json meta{{"n_params", ds.n_params()}, {"n_frames", ds.size()}, {"classes", classes}};
  if (const auto* syn = std::get_if<SyntheticProvenance>(&ds.provenance())) {
    meta["provenance"] = {{"kind", "synthetic"}, {"seed", syn->seed}, {"spec_hash", syn->spec_hash}};
  } else {
    meta["provenance"] = {{"kind", "ingested"},
                          {"path_hash", std::get<IngestedProvenance>(ds.provenance()).path_hash}};
  }
  detail::write_file(dir / "classes.json", meta.dump(2) + "\n");
  if (spec != nullptr) detail::write_file(dir / "spec.json", json(*spec).dump(2) + "\n");
}

Dataset load(const std::filesystem::path& dir) {
  const json meta = json::parse(detail::read_file(dir / "classes.json"));
  const std::size_t p = meta.at("n_params").get<std::size_t>();
  const std::size_t n = meta.at("n_frames").get<std::size_t>();
  std::vector<FaultClass> classes;
  for (const auto& c : meta.at("classes")) classes.push_back({c.at("id").get<std::uint32_t>(), c.at("name").get<std::string>()});
  const auto& prov = meta.at("provenance");
  Provenance provenance;
  if (prov.at("kind") == "synthetic") {
    provenance = SyntheticProvenance{prov.at("seed").get<std::uint64_t>(), prov.at("spec_hash").get<std::string>()};
  } else {
    provenance = IngestedProvenance{prov.at("path_hash").get<std::string>()};
  }

  const std::string frames_bytes = detail::read_file(dir / "frames.bin");
  const std::string label_bytes = detail::read_file(dir / "labels.u16");
  const std::string scen_bytes = detail::read_file(dir / "scenarios.u32");
  if (frames_bytes.size() != n * p * 4 || label_bytes.size() != n * 2 || scen_bytes.size() != n * 8) {
    throw DataError("dataset files in " + dir.string() + " have inconsistent sizes");
  }
  detail::ByteReader fr(frames_bytes), lr(label_bytes), sr(scen_bytes);
  std::vector<SensorFrame> frames(n);
  for (auto& f : frames) {
    f.values.resize(p);
    for (auto& v : f.values) v = fr.f32();
    f.label = lr.u16();
    f.scenario_id = sr.u32();
    f.t = sr.u32();
  }
  return Dataset(std::move(frames), std::move(classes), std::move(provenance));
}

}  // namespace faultdx::dataset
