#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mitoclass/csv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"

namespace mitoclass {

// AMF is the positive class for every metric here: sensitivity is AMF recall,
// specificity is NMF recall.

struct PredictionRow {
  std::string patch_id;
  double score = 0.5;  // probability of NMF
  ClassLabel predicted = ClassLabel::NMF;
  ClassLabel truth = ClassLabel::NMF;
  std::string domain_id;

  bool operator==(const PredictionRow&) const = default;
};

using PredictionSet = std::vector<PredictionRow>;

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t n() const noexcept { return tp + tn + fp + fn; }
  Confusion& operator+=(const Confusion& o) noexcept {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const Confusion&) const = default;
};

inline Confusion confusion(std::span<const PredictionRow> preds) {
  if (preds.empty()) throw Error(ErrorCode::EmptyInput, "no predictions");
  Confusion c;
  for (const auto& p : preds) {
    const bool pos_truth = p.truth == ClassLabel::AMF;
    const bool pos_pred = p.predicted == ClassLabel::AMF;
    if (pos_truth && pos_pred) ++c.tp;
    else if (pos_truth) ++c.fn;
    else if (pos_pred) ++c.fp;
    else ++c.tn;
  }
  return c;
}

inline double balanced_accuracy(double sensitivity, double specificity) noexcept {
  return (sensitivity + specificity) / 2.0;
}

/// Mann-Whitney AUC with AMF positive and (1 - score) as its score, i.e. the
/// probability that an AMF scores below an NMF, ties counted as one half.
/// Computed from doubled mid-ranks so the numerator is an exact integer.
inline double roc_auc(std::span<const double> scores, std::span<const ClassLabel> truths) {
  if (scores.size() != truths.size()) throw Error(ErrorCode::ShapeMismatch, "scores and truths differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::int64_t rank2_sum_nmf = 0;
  std::int64_t n_nmf = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // ranks i+1..j share the mid-rank (i+1+j)/2; doubled: i+1+j
    const auto rank2 = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (truths[order[t]] == ClassLabel::NMF) {
        rank2_sum_nmf += rank2;
        ++n_nmf;
      }
    i = j;
  }
  const auto n_amf = static_cast<std::int64_t>(n) - n_nmf;
  if (n_nmf == 0 || n_amf == 0) throw Error(ErrorCode::SingleClass, "ROC AUC needs both classes");
  const std::int64_t u2 = rank2_sum_nmf - n_nmf * (n_nmf + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_amf) * static_cast<double>(n_nmf));
}

/// Metrics needing a class that is absent are left empty rather than zero.
struct MetricTuple {
  Confusion confusion;
  std::size_t n = 0;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> balanced_accuracy;
  std::optional<double> roc_auc;

  bool operator==(const MetricTuple&) const = default;
};

struct MetricsReport {
  MetricTuple overall;
  std::map<std::string, MetricTuple> per_domain;

  bool operator==(const MetricsReport&) const = default;
};

inline MetricTuple metric_tuple(std::span<const PredictionRow> preds) {
  MetricTuple m;
  m.confusion = confusion(preds);
  m.n = preds.size();
  const auto& c = m.confusion;
  if (c.tp + c.fn > 0) m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (c.tn + c.fp > 0) m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  if (m.sensitivity && m.specificity) {
    m.balanced_accuracy = balanced_accuracy(*m.sensitivity, *m.specificity);
    std::vector<double> s;
    std::vector<ClassLabel> t;
    for (const auto& p : preds) {
      s.push_back(p.score);
      t.push_back(p.truth);
    }
    m.roc_auc = roc_auc(s, t);
  }
  return m;
}

inline MetricsReport evaluate(std::span<const PredictionRow> preds) {
  if (preds.empty()) throw Error(ErrorCode::EmptyInput, "no predictions");
  MetricsReport r;
  r.overall = metric_tuple(preds);
  std::map<std::string, PredictionSet> groups;
  for (const auto& p : preds) groups[p.domain_id].push_back(p);
  // rows within a domain are sorted so the report does not depend on input order
  for (auto& [id, rows] : groups) {
    std::sort(rows.begin(), rows.end(), [](const PredictionRow& a, const PredictionRow& b) { return a.patch_id < b.patch_id; });
    r.per_domain.emplace(id, metric_tuple(rows));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Cross-fold aggregation

struct MetricSummary {
  double mean = 0.0;
  double std_dev = 0.0;  // sample standard deviation (divisor k - 1)
  std::size_t count = 0;
};

inline constexpr std::array<std::string_view, 4> kReportedMetrics = {"balanced_accuracy", "specificity", "sensitivity",
                                                                     "roc_auc"};

inline std::optional<double> metric_value(const MetricTuple& m, std::string_view name) {
  if (name == "balanced_accuracy") return m.balanced_accuracy;
  if (name == "sensitivity") return m.sensitivity;
  if (name == "specificity") return m.specificity;
  if (name == "roc_auc") return m.roc_auc;
  return std::nullopt;
}

inline MetricSummary summarize(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorCode::TooFewFolds, "need at least 2 values");
  MetricSummary s;
  s.count = values.size();
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std_dev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return s;
}

/// Mean and sample std of each overall metric across folds. A metric missing
/// from some folds is summarised over the folds that have it (and dropped if
/// fewer than two do).
inline std::map<std::string, MetricSummary> aggregate_folds(std::span<const MetricsReport> reports) {
  if (reports.size() < 2) throw Error(ErrorCode::TooFewFolds, "aggregation needs k >= 2 reports");
  std::map<std::string, MetricSummary> out;
  for (auto name : kReportedMetrics) {
    std::vector<double> v;
    for (const auto& r : reports)
      if (auto x = metric_value(r.overall, name)) v.push_back(*x);
    if (v.size() >= 2) out.emplace(std::string(name), summarize(v));
  }
  return out;
}

inline std::string format_fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// "m (±s)" with four decimals.
inline std::string format_mean_std(const MetricSummary& s) {
  return format_fixed4(s.mean) + " (±" + format_fixed4(s.std_dev) + ")";
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const MetricTuple& m) {
  nlohmann::json j = {{"n", m.n},
                      {"confusion", {{"tp", m.confusion.tp}, {"tn", m.confusion.tn}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}}}};
  for (auto name : kReportedMetrics) {
    const auto v = metric_value(m, name);
    j[std::string(name)] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  }
  return j;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["overall"] = to_json(r.overall);
  j["per_domain"] = nlohmann::json::object();
  for (const auto& [id, m] : r.per_domain) j["per_domain"][id] = to_json(m);
  return j;
}

inline nlohmann::json to_json(const std::map<std::string, MetricSummary>& agg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, s] : agg)
    j[name] = {{"mean", s.mean}, {"std", s.std_dev}, {"count", s.count}, {"formatted", format_mean_std(s)}};
  return j;
}

inline std::string opt_cell(const std::optional<double>& v) { return v ? csv::format_double(*v) : ""; }

inline std::string metrics_csv_header() {
  return "scope,domain_id,n,tp,tn,fp,fn,balanced_accuracy,specificity,sensitivity,roc_auc\n";
}

inline std::string metrics_csv_row(const std::string& scope, const std::string& domain, const MetricTuple& m) {
  return csv::join({scope, domain, std::to_string(m.n), std::to_string(m.confusion.tp), std::to_string(m.confusion.tn),
                    std::to_string(m.confusion.fp), std::to_string(m.confusion.fn), opt_cell(m.balanced_accuracy),
                    opt_cell(m.specificity), opt_cell(m.sensitivity), opt_cell(m.roc_auc)}) +
         "\n";
}

/// Flat CSV: one overall row, then one row per domain.
inline std::string report_to_csv(const MetricsReport& r) {
  std::string out = metrics_csv_header() + metrics_csv_row("overall", "", r.overall);
  for (const auto& [id, m] : r.per_domain) out += metrics_csv_row("domain", id, m);
  return out;
}

inline std::string predictions_to_csv(std::span<const PredictionRow> preds) {
  std::string out = "patch_id,score,predicted,truth,domain_id\n";
  for (const auto& p : preds)
    out += csv::join({p.patch_id, csv::format_double(p.score), std::to_string(code(p.predicted)),
                      std::to_string(code(p.truth)), p.domain_id}) +
           "\n";
  return out;
}

inline PredictionSet read_predictions(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const int cols[5] = {t.column("patch_id"), t.column("score"), t.column("predicted"), t.column("truth"),
                       t.column("domain_id")};
  for (int c : cols)
    if (c < 0) throw Error(ErrorCode::MissingColumn, path.string() + ": expected patch_id,score,predicted,truth,domain_id");
  PredictionSet out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() < 5) throw Error(ErrorCode::MissingColumn, path.string() + ": short row " + std::to_string(t.line_numbers[r]));
    auto label = [&](const std::string& v, const char* col) {
      if (v != "0" && v != "1")
        throw Error(ErrorCode::BadLabelCode, path.string() + ": row " + std::to_string(t.line_numbers[r]) + ", column " +
                                                 col + ": '" + v + "'");
      return v == "0" ? ClassLabel::AMF : ClassLabel::NMF;
    };
    PredictionRow p;
    p.patch_id = row[cols[0]];
    p.score = std::stod(row[cols[1]]);
    p.predicted = label(row[cols[2]], "predicted");
    p.truth = label(row[cols[3]], "truth");
    p.domain_id = row[cols[4]];
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace mitoclass
