#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "faultdx/dataset.hpp"
#include "faultdx/error.hpp"
#include "support.hpp"

using namespace faultdx;
using namespace faultdx::dataset;

namespace {

ScenarioSpec small_spec() {
  ScenarioSpec s;
  s.n_classes = 5;
  s.frames_per_class = 12;
  s.n_params = 300;
  s.signal_dims = 20;
  s.scenario_length = 4;
  s.seed = 99;
  return s;
}

std::map<std::uint32_t, std::size_t> label_tally(const Dataset& ds) {
  std::map<std::uint32_t, std::size_t> out;
  for (const auto& f : ds.frames()) ++out[f.label];
  return out;
}

}  // namespace

TEST_CASE("default spec yields 2100 frames of 10725 parameters") {
  const ScenarioSpec spec;
  CHECK(spec.n_classes == 21);
  CHECK(spec.n_params == 10725);
  const auto ds = generate_synthetic(spec);
  CHECK(ds.size() == 2100);
  CHECK(ds.n_params() == 10725);
  CHECK(ds.n_classes() == 21);
  for (auto n : ds.class_counts()) CHECK(n == 100);
  for (const auto& f : ds.frames()) {
    REQUIRE(f.values.size() == 10725);
    REQUIRE(std::all_of(f.values.begin(), f.values.end(), [](float v) { return std::isfinite(v); }));
  }
}

TEST_CASE("21 classes are six single faults and fifteen pairwise composites") {
  CHECK(component_count(21) == 6);
  const auto comps = class_components(21);
  REQUIRE(comps.size() == 21);
  std::set<std::vector<std::size_t>> distinct(comps.begin(), comps.end());
  CHECK(distinct.size() == 21);
  for (std::size_t c = 0; c < 6; ++c) CHECK(comps[c].size() == 1);
  for (std::size_t c = 6; c < 21; ++c) CHECK(comps[c].size() == 2);

  const auto ds = generate_synthetic(small_spec());
  std::set<std::string> names;
  for (const auto& c : ds.classes()) names.insert(c.name);
  CHECK(names.size() == ds.n_classes());
  CHECK(ds.classes()[4].name.find('+') != std::string::npos);
}

TEST_CASE("component channels are disjoint and sized by signal_dims") {
  ScenarioSpec spec;
  const auto chans = component_channels(spec);
  REQUIRE(chans.size() == 6);
  std::set<std::size_t> all;
  for (const auto& c : chans) {
    CHECK(c.size() == spec.signal_dims);
    for (auto ch : c) CHECK(ch < spec.n_params);
    all.insert(c.begin(), c.end());
  }
  CHECK(all.size() == 6 * spec.signal_dims);
}

TEST_CASE("generation is a pure function of the ScenarioSpec") {
  const auto a = generate_synthetic(small_spec());
  const auto b = generate_synthetic(small_spec());
  CHECK(a == b);
  auto other = small_spec();
  other.seed = 100;
  CHECK_FALSE(generate_synthetic(other) == a);
}

TEST_CASE("without noise and drift, scenarios of a class differ only on its signal channels") {
  auto spec = small_spec();
  spec.noise_sigma = 0.0;
  spec.drift_amplitude = 0.0;
  const auto ds = generate_synthetic(spec);
  const auto chans = component_channels(spec);
  const auto comps = class_components(spec.n_classes);
  for (std::uint32_t c = 0; c < spec.n_classes; ++c) {
    std::set<std::size_t> signal;
    for (auto k : comps[c]) signal.insert(chans[k].begin(), chans[k].end());
    std::map<std::uint32_t, const SensorFrame*> first_at_t;
    for (const auto& f : ds.frames()) {
      if (f.label != c) continue;
      auto [it, fresh] = first_at_t.try_emplace(f.t, &f);
      if (fresh) continue;
      CHECK(it->second->scenario_id != f.scenario_id);
      for (std::size_t i = 0; i < spec.n_params; ++i) {
        if (!signal.count(i)) REQUIRE(f.values[i] == it->second->values[i]);
      }
    }
  }

  // A single scenario per class: regenerating gives identical frames.
  spec.scenario_length = spec.frames_per_class;
  CHECK(generate_synthetic(spec) == generate_synthetic(spec));
}

TEST_CASE("invalid specs are rejected") {
  auto spec = small_spec();
  spec.frames_per_class = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), InvalidArgument);
  spec = small_spec();
  spec.n_classes = 0;
  CHECK_THROWS_AS(generate_synthetic(spec), InvalidArgument);
  spec = small_spec();
  spec.signal_dims = spec.n_params + 1;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  spec = small_spec();
  spec.noise_sigma = -0.1;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("nearest centroid on raw frames separates the default classes") {
  const auto ds = generate_synthetic(ScenarioSpec{});
  const auto [train, test] = split(ds, 0.8, 17);
  const std::size_t p = ds.n_params();
  std::vector<std::vector<double>> centroid(ds.n_classes(), std::vector<double>(p, 0.0));
  const auto counts = train.class_counts();
  for (const auto& f : train.frames()) {
    for (std::size_t i = 0; i < p; ++i) centroid[f.label][i] += f.values[i] / static_cast<double>(counts[f.label]);
  }
  std::size_t correct = 0;
  for (const auto& f : test.frames()) {
    double best = INFINITY;
    std::uint32_t arg = 0;
    for (std::uint32_t c = 0; c < centroid.size(); ++c) {
      double d = 0.0;
      for (std::size_t i = 0; i < p; ++i) d += (f.values[i] - centroid[c][i]) * (f.values[i] - centroid[c][i]);
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    correct += arg == f.label;
  }
  const double acc = static_cast<double>(correct) / static_cast<double>(test.size());
  MESSAGE("nearest-centroid accuracy " << acc);
  CHECK(acc >= 0.95);
}

TEST_CASE("csv ingestion maps labels in first-appearance order") {
  const auto ds = ingest_csv(testing::fixture("small.csv"), {"label", {}, true});
  CHECK(ds.size() == 3);
  CHECK(ds.n_params() == 4);
  CHECK(ds.n_classes() == 2);
  CHECK(ds.frames()[0].label == 0);
  CHECK(ds.frames()[1].label == 1);
  CHECK(ds.frames()[2].label == 0);
  CHECK(ds.classes()[0].name == "A");
  CHECK(ds.classes()[1].name == "B");
  CHECK(ds.frames()[1].values == std::vector<float>{5, 6, 7, 8});
  CHECK(std::holds_alternative<IngestedProvenance>(ds.provenance()));

  const auto picked = ingest_csv(testing::fixture("small.csv"), {"label", {"p3", "p1"}, true});
  CHECK(picked.frames()[2].values == std::vector<float>{12, 10});

  const auto headless = ingest_csv(testing::fixture("no_header.csv"), {"2", {}, false});
  CHECK(headless.n_params() == 2);
  CHECK(headless.frames()[1].label == 1);
}

TEST_CASE("csv errors name the offending input") {
  CHECK_THROWS_AS(ingest_csv(testing::fixture("empty.csv"), {"label", {}, true}), DataError);
  CHECK_THROWS_WITH_AS(ingest_csv(testing::fixture("bad_cell.csv"), {"label", {}, true}),
                       doctest::Contains("row 3, column 3 (p1): 'abc'"), DataError);
  CHECK_THROWS_WITH_AS(ingest_csv(testing::fixture("short_row.csv"), {"label", {}, true}),
                       doctest::Contains("row 3"), DataError);
  CHECK_THROWS_WITH_AS(ingest_csv(testing::fixture("small.csv"), {"fault", {}, true}),
                       doctest::Contains("'fault'"), DataError);
  CHECK_THROWS_AS(ingest_csv(testing::fixture("small.csv"), {"", {}, true}), DataError);
  CHECK_THROWS_AS(ingest_csv(testing::fixture("missing.csv"), {"label", {}, true}), DataError);
}

TEST_CASE("stratified split") {
  const auto ds = generate_synthetic(ScenarioSpec{.frames_per_class = 100, .n_params = 64, .signal_dims = 4});
  const auto idx = split_indices(ds, 0.8, 17);
  CHECK(idx.train.size() == 1680);
  CHECK(idx.test.size() == 420);
  const auto [train, test] = split(ds, 0.8, 17);
  for (auto [label, n] : label_tally(train)) CHECK(n == 80);
  for (auto [label, n] : label_tally(test)) CHECK(n == 20);

  std::vector<std::size_t> all(idx.train);
  all.insert(all.end(), idx.test.begin(), idx.test.end());
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
  CHECK(all.size() == ds.size());

  const auto again = split_indices(ds, 0.8, 17);
  CHECK(again.train == idx.train);
  CHECK(again.test == idx.test);
  CHECK_FALSE(split_indices(ds, 0.8, 18).train == idx.train);
}

TEST_CASE("split of two frames per class puts one on each side") {
  auto spec = small_spec();
  spec.frames_per_class = 2;
  const auto [train, test] = split(generate_synthetic(spec), 0.5, 3);
  for (auto [label, n] : label_tally(train)) CHECK(n == 1);
  for (auto [label, n] : label_tally(test)) CHECK(n == 1);
  CHECK(train.size() == 5);

  spec.frames_per_class = 1;
  CHECK_THROWS_AS(split(generate_synthetic(spec), 0.5, 3), DataError);
  CHECK_THROWS_AS(split(generate_synthetic(small_spec()), 1.0, 3), InvalidArgument);
  CHECK_THROWS_AS(split(generate_synthetic(small_spec()), 0.0, 3), InvalidArgument);
}

TEST_CASE("subsample keeps round(frac * n_c) per class") {
  const auto ds = generate_synthetic(ScenarioSpec{.frames_per_class = 100, .n_params = 64, .signal_dims = 4});
  const auto [train, test] = split(ds, 0.8, 17);
  const auto sub = subsample(train, 0.7, 29);
  CHECK(sub.size() == 1176);
  for (auto [label, n] : label_tally(sub)) CHECK(n == 56);
  CHECK(subsample(train, 1.0, 29) == train);
  CHECK(subsample_indices(train, 0.7, 29) == subsample_indices(train, 0.7, 29));
  CHECK_THROWS_AS(subsample(train, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(subsample(train, 1.5, 1), InvalidArgument);
}

TEST_CASE("dataset directory round trip") {
  testing::TempDir dir("ds");
  const auto spec = small_spec();
  const auto ds = generate_synthetic(spec);
  save(ds, dir.path(), &spec);
  for (const char* f : {"spec.json", "frames.bin", "labels.u16", "classes.json", "scenarios.u32"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(std::filesystem::file_size(dir / "frames.bin") == ds.size() * ds.n_params() * 4);
  CHECK(std::filesystem::file_size(dir / "labels.u16") == ds.size() * 2);
  CHECK(load(dir.path()) == ds);

  std::filesystem::resize_file(dir / "frames.bin", 100);
  CHECK_THROWS_AS(load(dir.path()), DataError);
}

TEST_CASE("dataset invariants are enforced") {
  std::vector<FaultClass> classes{{0, "a"}, {1, "b"}};
  CHECK_THROWS_AS(Dataset({}, classes, IngestedProvenance{}), DataError);
  CHECK_THROWS_AS(Dataset({{{1.0f}, 2, 0, 0}}, classes, IngestedProvenance{}), DataError);
  CHECK_THROWS_AS(Dataset({{{NAN}, 0, 0, 0}}, classes, IngestedProvenance{}), DataError);
  CHECK_THROWS_AS(Dataset({{{1.0f}, 0, 0, 0}, {{1.0f, 2.0f}, 1, 0, 0}}, classes, IngestedProvenance{}), DataError);
  CHECK_THROWS_AS(Dataset({{{1.0f}, 0, 0, 0}}, {{0, "a"}, {1, "a"}}, IngestedProvenance{}), DataError);
}
