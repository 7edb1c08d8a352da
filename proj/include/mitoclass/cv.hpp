#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mitoclass/csv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/eval.hpp"
#include "mitoclass/netcore.hpp"
#include "mitoclass/pixelpipe.hpp"
#include "mitoclass/splits.hpp"
#include "mitoclass/trainer.hpp"

namespace mitoclass {

struct FoldOutcome {
  int fold = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  double best_val_balanced_accuracy = 0.0;
  MetricsReport report;
};

struct CvResult {
  FoldAssignment folds;
  std::vector<FoldOutcome> outcomes;
  std::map<std::string, MetricSummary> summary;
};

/// HED statistics are filled in from `data` when the mode needs them and the
/// caller left the defaults.
inline PipelineSpec resolve_pipeline(const Dataset& data, PipelineSpec pipe) {
  if (pipe.mode != InputMode::rgb && pipe.hed == HedStats{}) pipe.hed = compute_hed_stats(data);
  return pipe;
}

inline nlohmann::json cv_summary_json(const CvResult& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& o : r.outcomes)
    folds.push_back({{"fold", o.fold},
                     {"best_epoch", o.best_epoch},
                     {"epochs_run", o.epochs_run},
                     {"val_balanced_accuracy", o.best_val_balanced_accuracy},
                     {"report", to_json(o.report)}});
  return {{"k", r.folds.k}, {"split_seed", r.folds.seed}, {"folds", folds}, {"summary", to_json(r.summary)}};
}

inline std::string cv_summary_csv(const CvResult& r) {
  std::string out = "metric,mean,std,formatted\n";
  for (const auto& [name, s] : r.summary)
    out += csv::join({name, csv::format_double(s.mean), csv::format_double(s.std_dev), format_mean_std(s)}) + "\n";
  return out;
}

/// Folds are trained in order 0..k-1. With a non-empty out_dir each fold gets
/// its own fold_<i>/ directory plus cv_report.{json,csv} at the top.
inline CvResult run_cv(const Dataset& data, int k, std::uint64_t split_seed, const ArchConfig& arch, const TrainConfig& cfg,
                       const PipelineSpec& pipe_in, const std::filesystem::path& out_dir = {}) {
  cfg.validate();
  arch.validate();
  CvResult result;
  result.folds = stratified_kfold(data, k, split_seed);
  const PipelineSpec pipe = resolve_pipeline(data, pipe_in);
  if (!out_dir.empty()) write_folds(result.folds, out_dir / "folds.csv");

  std::vector<MetricsReport> reports;
  for (int f = 0; f < k; ++f) {
    const auto fold_dir = out_dir.empty() ? std::filesystem::path{} : out_dir / ("fold_" + std::to_string(f));
    const auto tr = train(data, result.folds, f, arch, cfg, pipe, fold_dir);
    FoldOutcome o;
    o.fold = f;
    o.best_epoch = tr.best_epoch;
    o.epochs_run = tr.epochs_run;
    o.best_val_balanced_accuracy = tr.best_val_balanced_accuracy;
    o.report = evaluate(tr.best_val_predictions);
    if (!fold_dir.empty()) {
      csv::write_text(fold_dir / "predictions.csv", predictions_to_csv(tr.best_val_predictions));
      csv::write_text(fold_dir / "report.json", to_json(o.report).dump(2) + "\n");
      csv::write_text(fold_dir / "report.csv", report_to_csv(o.report));
    }
    reports.push_back(o.report);
    result.outcomes.push_back(std::move(o));
  }
  result.summary = aggregate_folds(reports);
  if (!out_dir.empty()) {
    csv::write_text(out_dir / "cv_report.json", cv_summary_json(result).dump(2) + "\n");
    csv::write_text(out_dir / "cv_report.csv", cv_summary_csv(result));
  }
  return result;
}

}  // namespace mitoclass
