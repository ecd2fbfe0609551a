#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace faultdx::metrics {

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;  // row-major C x C
  std::uint64_t total = 0;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::uint64_t row_sum(std::size_t c) const;
  std::uint64_t col_sum(std::size_t c) const;

  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                          std::size_t n_classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;

  bool operator==(const ClassMetrics&) const = default;
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;

  bool operator==(const MetricsReport&) const = default;
};

/// Zero denominators give 0. Macro averages skip classes without support.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// One comparison row: the weighted aggregates under the table's column names.
struct TableRow {
  std::string model;
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;

  bool operator==(const TableRow&) const = default;
};

TableRow table_row(const std::string& model, const MetricsReport& report);

/// Aligned Model / Accuracy / F1-Score / Precision / Recall table, 3 decimals.
std::string report_table_text(const std::vector<TableRow>& rows);

nlohmann::json report_table_json(const std::vector<TableRow>& rows);
std::vector<TableRow> parse_report_table_json(const nlohmann::json& j);

std::string confusion_csv(const ConfusionMatrix& cm);

}  // namespace faultdx::metrics
