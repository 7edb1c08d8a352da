#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mitoclass/csv.hpp"
#include "mitoclass/cv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/netcore.hpp"
#include "mitoclass/pixelpipe.hpp"
#include "mitoclass/rng.hpp"
#include "mitoclass/splits.hpp"
#include "mitoclass/trainer.hpp"

namespace mitoclass {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct SearchSpace {
  Range alpha{0.1, 0.9};
  Range gamma{0.0, 5.0};
  Range lr{1e-5, 1e-3};  // log-uniform
  Range dropout{0.0, 0.5};

  void validate() const {
    for (const auto* r : {&alpha, &gamma, &lr, &dropout})
      if (!(r->lo <= r->hi)) throw Error(ErrorCode::InvalidConfig, "search range has lo > hi");
    if (!(lr.lo > 0.0)) throw Error(ErrorCode::InvalidConfig, "lr range must be positive for log-uniform sampling");
  }
};

inline nlohmann::json to_json(const SearchSpace& s) {
  auto r = [](const Range& x) { return nlohmann::json::array({x.lo, x.hi}); };
  return {{"alpha", r(s.alpha)}, {"gamma", r(s.gamma)}, {"lr", r(s.lr)}, {"dropout", r(s.dropout)}};
}

inline SearchSpace search_space_from_json(const nlohmann::json& j, SearchSpace s = {}) {
  auto r = [&](const char* key, Range& x) {
    if (j.contains(key)) x = {j.at(key).at(0).get<double>(), j.at(key).at(1).get<double>()};
  };
  r("alpha", s.alpha);
  r("gamma", s.gamma);
  r("lr", s.lr);
  r("dropout", s.dropout);
  return s;
}

struct Hyperparams {
  double alpha = 0.25;
  double gamma = 2.0;
  double lr = 1e-4;
  double dropout = 0.0;

  bool operator==(const Hyperparams&) const = default;
};

inline nlohmann::json to_json(const Hyperparams& h) {
  return {{"alpha", h.alpha}, {"gamma", h.gamma}, {"lr", h.lr}, {"dropout", h.dropout}};
}

/// One uniform draw per dimension in the order alpha, gamma, lr, dropout.
inline Hyperparams sample_config(const SearchSpace& space, Rng& rng) {
  Hyperparams h;
  h.alpha = rng.uniform(space.alpha.lo, space.alpha.hi);
  h.gamma = rng.uniform(space.gamma.lo, space.gamma.hi);
  const double lo = std::log(space.lr.lo), hi = std::log(space.lr.hi);
  h.lr = std::clamp(std::exp(rng.uniform(lo, hi)), space.lr.lo, space.lr.hi);
  h.dropout = rng.uniform(space.dropout.lo, space.dropout.hi);
  return h;
}

enum class TrialStatus { complete, failed };

inline const char* to_string(TrialStatus s) { return s == TrialStatus::complete ? "complete" : "failed"; }

struct Trial {
  std::size_t trial_id = 0;
  Hyperparams params;
  std::vector<double> fold_balanced_accuracy;
  std::optional<double> objective;
  TrialStatus status = TrialStatus::complete;
  std::string error;
};

struct SearchResult {
  std::vector<Trial> trials;
  std::optional<std::size_t> best;  // index into trials; empty when every trial failed
};

/// Runs one trial: every fold with the given hyperparameters. Any failure
/// marks the trial failed instead of propagating.
inline Trial run_trial(std::size_t trial_id, const Hyperparams& hp, const Dataset& data, const FoldAssignment& folds,
                       const ArchConfig& arch, const TrainConfig& base, const PipelineSpec& pipe) {
  Trial t;
  t.trial_id = trial_id;
  t.params = hp;
  try {
    TrainConfig cfg = base;
    cfg.focal = {hp.alpha, hp.gamma};
    cfg.lr0 = hp.lr;
    ArchConfig a = arch;
    a.dropout = hp.dropout;
    a.validate();
    cfg.validate();
    double sum = 0.0;
    for (int f = 0; f < folds.k; ++f) {
      const auto r = train(data, folds, f, a, cfg, pipe);
      t.fold_balanced_accuracy.push_back(r.best_val_balanced_accuracy);
      sum += r.best_val_balanced_accuracy;
    }
    t.objective = sum / static_cast<double>(folds.k);
  } catch (const std::exception& e) {
    t.status = TrialStatus::failed;
    t.objective.reset();
    t.error = e.what();
  }
  return t;
}

/// Best complete trial, ties to the lowest trial_id.
inline std::optional<std::size_t> best_trial(const std::vector<Trial>& trials) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (trials[i].status != TrialStatus::complete) continue;
    if (!best || *trials[i].objective > *trials[*best].objective) best = i;
  }
  return best;
}

/// Trials with explicit hyperparameters, numbered 0..n-1.
inline SearchResult run_trials(const std::vector<Hyperparams>& configs, const Dataset& data, const FoldAssignment& folds,
                               const ArchConfig& arch, const TrainConfig& base, const PipelineSpec& pipe_in) {
  const PipelineSpec pipe = resolve_pipeline(data, pipe_in);
  SearchResult r;
  for (std::size_t i = 0; i < configs.size(); ++i) r.trials.push_back(run_trial(i, configs[i], data, folds, arch, base, pipe));
  r.best = best_trial(r.trials);
  return r;
}

/// Trial i draws from Rng(derive_seed(seed, i)), independent of other trials.
inline SearchResult run_search(const Dataset& data, const FoldAssignment& folds, const ArchConfig& arch,
                               const TrainConfig& base, const PipelineSpec& pipe, const SearchSpace& space,
                               std::size_t n_trials, std::uint64_t seed) {
  if (n_trials < 1) throw Error(ErrorCode::InvalidConfig, "n_trials must be >= 1");
  space.validate();
  std::vector<Hyperparams> configs;
  for (std::size_t i = 0; i < n_trials; ++i) {
    Rng rng(derive_seed(seed, i));
    configs.push_back(sample_config(space, rng));
  }
  return run_trials(configs, data, folds, arch, base, pipe);
}

inline std::string trials_to_csv(const std::vector<Trial>& trials, int k) {
  std::vector<std::string> header = {"trial_id", "alpha", "gamma", "lr", "dropout"};
  for (int f = 0; f < k; ++f) header.push_back("fold_" + std::to_string(f) + "_balanced_accuracy");
  header.insert(header.end(), {"mean_balanced_accuracy", "status", "error"});
  std::string out = csv::join(header) + "\n";
  for (const auto& t : trials) {
    std::vector<std::string> row = {std::to_string(t.trial_id), csv::format_double(t.params.alpha),
                                    csv::format_double(t.params.gamma), csv::format_double(t.params.lr),
                                    csv::format_double(t.params.dropout)};
    for (int f = 0; f < k; ++f)
      row.push_back(static_cast<std::size_t>(f) < t.fold_balanced_accuracy.size() ? csv::format_double(t.fold_balanced_accuracy[f])
                                                                                 : "");
    row.push_back(t.objective ? csv::format_double(*t.objective) : "");
    row.push_back(to_string(t.status));
    row.push_back(t.error);
    out += csv::join(row) + "\n";
  }
  return out;
}

inline nlohmann::json best_to_json(const SearchResult& r, const ArchConfig& arch, const TrainConfig& base) {
  if (!r.best) return {{"status", "no complete trial"}};
  const Trial& t = r.trials[*r.best];
  TrainConfig cfg = base;
  cfg.focal = {t.params.alpha, t.params.gamma};
  cfg.lr0 = t.params.lr;
  ArchConfig a = arch;
  a.dropout = t.params.dropout;
  return {{"trial_id", t.trial_id},
          {"objective", *t.objective},
          {"fold_balanced_accuracy", t.fold_balanced_accuracy},
          {"hyperparams", to_json(t.params)},
          {"train", to_json(cfg)},
          {"arch", to_json(a)}};
}

}  // namespace mitoclass
