#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "faultdx/error.hpp"
#include "faultdx/metrics.hpp"
#include "faultdx/rng.hpp"

using namespace faultdx;
using namespace faultdx::metrics;

namespace {

ConfusionMatrix from_counts(std::size_t n, std::vector<std::uint64_t> counts) {
  ConfusionMatrix cm;
  cm.n_classes = n;
  cm.total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  cm.counts = std::move(counts);
  return cm;
}

ConfusionMatrix random_matrix(Rng& rng) {
  const std::size_t n = 2 + rng.below(20);
  std::vector<std::uint64_t> counts(n * n);
  for (auto& c : counts) c = rng.below(3) == 0 ? 0 : rng.below(50);
  counts[0] += 1;
  return from_counts(n, std::move(counts));
}

}  // namespace

TEST_CASE("binary fixture") {
  const std::vector<std::uint32_t> truth{0, 0, 1, 1};
  const std::vector<std::uint32_t> pred{0, 1, 1, 1};
  const auto cm = confusion(truth, pred, 2);
  CHECK(cm == from_counts(2, {1, 1, 0, 2}));
  CHECK(cm.row_sum(0) == 2);
  CHECK(cm.col_sum(1) == 3);
  const auto r = compute_metrics(cm);
  CHECK(r.accuracy == 0.75);
  CHECK(r.per_class[0].precision == 1.0);
  CHECK(r.per_class[0].recall == 0.5);
  CHECK(r.per_class[0].f1 == 2.0 / 3.0);
  CHECK(r.per_class[1].precision == 2.0 / 3.0);
  CHECK(r.per_class[1].recall == 1.0);
  CHECK(r.per_class[1].f1 == 0.8);
  CHECK(r.per_class[0].support == 2);
  CHECK(r.macro_f1 == doctest::Approx(11.0 / 15.0).epsilon(1e-15));
  CHECK(r.weighted_recall == r.accuracy);
}

TEST_CASE("constant predictions on a balanced 21-class set") {
  std::vector<std::uint32_t> truth, pred;
  for (std::uint32_t c = 0; c < 21; ++c)
    for (int i = 0; i < 5; ++i) {
      truth.push_back(c);
      pred.push_back(0);
    }
  const auto r = compute_metrics(confusion(truth, pred, 21));
  CHECK(r.accuracy == doctest::Approx(1.0 / 21.0).epsilon(1e-15));
  CHECK(r.macro_f1 == doctest::Approx(2.0 / 22.0 / 21.0).epsilon(1e-15));
  CHECK(r.macro_recall == doctest::Approx(1.0 / 21.0).epsilon(1e-15));
  for (std::size_t c = 1; c < 21; ++c) {
    CHECK(r.per_class[c].precision == 0.0);
    CHECK(r.per_class[c].f1 == 0.0);
  }
}

TEST_CASE("weighted recall equals accuracy") {
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto r = compute_metrics(random_matrix(rng));
    CHECK(r.weighted_recall == doctest::Approx(r.accuracy).epsilon(1e-12));
  }
}

TEST_CASE("f1 is the harmonic mean of precision and recall") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto r = compute_metrics(random_matrix(rng));
    for (const auto& m : r.per_class) {
      if (m.precision + m.recall > 0) CHECK(m.f1 * (m.precision + m.recall) == doctest::Approx(2 * m.precision * m.recall).epsilon(1e-12));
      CHECK(m.f1 >= 0.0);
      CHECK(m.f1 <= 1.0);
    }
  }
}

TEST_CASE("relabeling classes permutes rows and keeps aggregates") {
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const auto cm = random_matrix(rng);
    const std::size_t n = cm.n_classes;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    std::vector<std::uint64_t> counts(n * n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t p = 0; p < n; ++p) counts[perm[t] * n + perm[p]] = cm.at(t, p);
    const auto a = compute_metrics(cm);
    const auto b = compute_metrics(from_counts(n, counts));
    CHECK(a.accuracy == b.accuracy);
    for (std::size_t c = 0; c < n; ++c) CHECK(a.per_class[c] == b.per_class[perm[c]]);
    CHECK(a.macro_f1 == doctest::Approx(b.macro_f1).epsilon(1e-12));
    CHECK(a.macro_precision == doctest::Approx(b.macro_precision).epsilon(1e-12));
    CHECK(a.macro_recall == doctest::Approx(b.macro_recall).epsilon(1e-12));
    CHECK(a.weighted_f1 == doctest::Approx(b.weighted_f1).epsilon(1e-12));
    CHECK(a.weighted_precision == doctest::Approx(b.weighted_precision).epsilon(1e-12));
  }
}

TEST_CASE("classes without support are left out of macro averages") {
  // Class 2 never occurs and is never predicted.
  const auto r = compute_metrics(from_counts(3, {2, 0, 0, 0, 2, 0, 0, 0, 0}));
  CHECK(r.per_class[2].support == 0);
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.macro_precision == 1.0);
}

TEST_CASE("invalid inputs") {
  const std::vector<std::uint32_t> a{0, 1}, b{0}, c{0, 5};
  CHECK_THROWS_AS(confusion(a, b, 2), InvalidArgument);
  CHECK_THROWS_AS(confusion(a, c, 2), InvalidArgument);
  CHECK_THROWS_AS(confusion({}, {}, 2), InvalidArgument);
  CHECK_THROWS_AS(compute_metrics(from_counts(2, {0, 0, 0, 0})), InvalidArgument);
}

TEST_CASE("report json round trip") {
  Rng rng(4);
  const auto r = compute_metrics(random_matrix(rng));
  CHECK(nlohmann::json(r).get<MetricsReport>() == r);
}

TEST_CASE("comparison table") {
  const auto r = compute_metrics(from_counts(2, {1, 1, 0, 2}));
  const auto row = table_row("faultdx-b0", r);
  CHECK(row.accuracy == r.accuracy);
  CHECK(row.f1 == r.weighted_f1);
  CHECK(row.precision == r.weighted_precision);
  CHECK(row.recall == r.weighted_recall);
  const std::vector<TableRow> rows{row, {"EfficientNetB0 (reported)", 0.954, 0.953, 0.964, 0.954}};
  const auto text = report_table_text(rows);
  for (const char* col : {"Model", "Accuracy", "F1-Score", "Precision", "Recall", "0.750", "0.964"}) {
    CHECK(text.find(col) != std::string::npos);
  }
  CHECK(std::count(text.begin(), text.end(), '\n') >= 3);
  CHECK(parse_report_table_json(report_table_json(rows)) == rows);
  CHECK_THROWS_AS(parse_report_table_json(nlohmann::json::object()), DataError);
}

TEST_CASE("confusion csv") {
  const auto csv = confusion_csv(from_counts(2, {1, 1, 0, 2}));
  CHECK(csv.find("1,1") != std::string::npos);
  CHECK(csv.find("0,2") != std::string::npos);
}
