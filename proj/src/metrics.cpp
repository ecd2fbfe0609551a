#include "faultdx/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "faultdx/error.hpp"

namespace faultdx::metrics {

using nlohmann::json;

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_classes; ++p) s += at(c, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t c) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < n_classes; ++t) s += at(t, c);
  return s;
}

ConfusionMatrix confusion(std::span<const std::uint32_t> y_true, std::span<const std::uint32_t> y_pred,
                          std::size_t n_classes) {
  if (y_true.size() != y_pred.size()) throw InvalidArgument("y_true and y_pred differ in length");
  if (y_true.empty()) throw InvalidArgument("cannot build a confusion matrix from no samples");
  if (n_classes == 0) throw InvalidArgument("n_classes must be positive");
  ConfusionMatrix cm;
  cm.n_classes = n_classes;
  cm.counts.assign(n_classes * n_classes, 0);
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] >= n_classes || y_pred[i] >= n_classes) {
      throw InvalidArgument("label " + std::to_string(std::max(y_true[i], y_pred[i])) + " at sample " +
                            std::to_string(i) + " is not below C = " + std::to_string(n_classes));
    }
    ++cm.counts[y_true[i] * n_classes + y_pred[i]];
  }
  cm.total = y_true.size();
  return cm;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  if (cm.total == 0) throw InvalidArgument("confusion matrix has no samples");
  MetricsReport r;
  std::uint64_t trace = 0;
  std::size_t supported = 0;
  for (std::size_t c = 0; c < cm.n_classes; ++c) {
    const std::uint64_t tp = cm.at(c, c);
    trace += tp;
    ClassMetrics m;
    m.support = cm.row_sum(c);
    m.precision = ratio(tp, cm.col_sum(c));
    m.recall = ratio(tp, m.support);
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    r.per_class.push_back(m);
    if (m.support > 0) {
      ++supported;
      r.macro_precision += m.precision;
      r.macro_recall += m.recall;
      r.macro_f1 += m.f1;
    }
    const double w = static_cast<double>(m.support);
    r.weighted_precision += w * m.precision;
    r.weighted_f1 += w * m.f1;
  }
  const auto total = static_cast<double>(cm.total);
  r.accuracy = static_cast<double>(trace) / total;
  if (supported > 0) {
    r.macro_precision /= static_cast<double>(supported);
    r.macro_recall /= static_cast<double>(supported);
    r.macro_f1 /= static_cast<double>(supported);
  }
  r.weighted_precision /= total;
  r.weighted_f1 /= total;
  // support_c * recall_c = tp_c, so the support-weighted recall is trace / total.
  r.weighted_recall = r.accuracy;
  return r;
}

void to_json(json& j, const MetricsReport& r) {
  json per = json::array();
  for (const auto& m : r.per_class) {
    per.push_back({{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}});
  }
  j = json{{"accuracy", r.accuracy},
           {"macro", {{"precision", r.macro_precision}, {"recall", r.macro_recall}, {"f1", r.macro_f1}}},
           {"weighted", {{"precision", r.weighted_precision}, {"recall", r.weighted_recall}, {"f1", r.weighted_f1}}},
           {"per_class", per}};
}

void from_json(const json& j, MetricsReport& r) {
  r.accuracy = j.at("accuracy").get<double>();
  const auto& macro = j.at("macro");
  r.macro_precision = macro.at("precision").get<double>();
  r.macro_recall = macro.at("recall").get<double>();
  r.macro_f1 = macro.at("f1").get<double>();
  const auto& weighted = j.at("weighted");
  r.weighted_precision = weighted.at("precision").get<double>();
  r.weighted_recall = weighted.at("recall").get<double>();
  r.weighted_f1 = weighted.at("f1").get<double>();
  r.per_class.clear();
  for (const auto& m : j.at("per_class")) {
    r.per_class.push_back({m.at("precision").get<double>(), m.at("recall").get<double>(), m.at("f1").get<double>(),
                           m.at("support").get<std::uint64_t>()});
  }
}

TableRow table_row(const std::string& model, const MetricsReport& report) {
  return {model, report.accuracy, report.weighted_f1, report.weighted_precision, report.weighted_recall};
}

std::string report_table_text(const std::vector<TableRow>& rows) {
  if (rows.empty()) throw InvalidArgument("report table needs at least one row");
  std::size_t name_width = 5;
  for (const auto& r : rows) name_width = std::max(name_width, r.model.size());
  const int nw = static_cast<int>(name_width);
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %9s  %6s\n", nw, "Model", "Accuracy", "F1-Score", "Precision", "Recall");
  out << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.3f  %8.3f  %9.3f  %6.3f\n", nw, r.model.c_str(), r.accuracy, r.f1,
                  r.precision, r.recall);
    out << buf;
  }
  return out.str();
}

json report_table_json(const std::vector<TableRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows) {
    arr.push_back(
        {{"model", r.model}, {"accuracy", r.accuracy}, {"f1", r.f1}, {"precision", r.precision}, {"recall", r.recall}});
  }
  return json{{"columns", {"Accuracy", "F1-Score", "Precision", "Recall"}}, {"rows", arr}};
}

std::vector<TableRow> parse_report_table_json(const json& j) {
  std::vector<TableRow> rows;
  try {
    for (const auto& r : j.at("rows")) {
      rows.push_back({r.at("model").get<std::string>(), r.at("accuracy").get<double>(), r.at("f1").get<double>(),
                      r.at("precision").get<double>(), r.at("recall").get<double>()});
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report table: ") + e.what());
  }
  return rows;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream out;
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    for (std::size_t p = 0; p < cm.n_classes; ++p) {
      if (p > 0) out << ',';
      out << cm.at(t, p);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace faultdx::metrics
