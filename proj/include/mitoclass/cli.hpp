#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mitoclass/mitoclass.hpp"

namespace mitoclass {

// Seeds resolve as: flag > MITOCLASS_SEED > config file > built-in default.
inline constexpr const char* kSeedEnv = "MITOCLASS_SEED";

/// Everything a run depends on. Written to each output location as JSON.
struct RunConfig {
  SyntheticConfig synthetic;
  TrainConfig train;
  ArchConfig arch = desk_arch();
  PipelineSpec pipeline{desk_policy(), InputMode::rgb, {}};
  SearchSpace search;
  int k = 5;
  std::uint64_t split_seed = 0;
  std::size_t n_trials = 8;
  std::uint64_t hpo_seed = 0;
};

inline nlohmann::json to_json(const SyntheticConfig& s) {
  return {{"n_patches", s.n_patches}, {"amf_rate", s.amf_rate}, {"hard_rate", s.hard_rate}, {"n_domains", s.n_domains},
          {"seed", s.seed}};
}

inline SyntheticConfig synthetic_from_json(const nlohmann::json& j, SyntheticConfig s = {}) {
  s.n_patches = j.value("n_patches", s.n_patches);
  s.amf_rate = j.value("amf_rate", s.amf_rate);
  s.hard_rate = j.value("hard_rate", s.hard_rate);
  s.n_domains = j.value("n_domains", s.n_domains);
  s.seed = j.value("seed", s.seed);
  return s;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"synthetic", to_json(c.synthetic)},
          {"train", to_json(c.train)},
          {"arch", to_json(c.arch)},
          {"pipeline", to_json(c.pipeline)},
          {"search", to_json(c.search)},
          {"split", {{"k", c.k}, {"seed", c.split_seed}}},
          {"hpo", {{"n_trials", c.n_trials}, {"seed", c.hpo_seed}}}};
}

/// Sections absent from `j` keep the values already in `c`.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config file must hold a JSON object");
  if (j.contains("synthetic")) c.synthetic = synthetic_from_json(j.at("synthetic"), c.synthetic);
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), c.train);
  if (j.contains("arch")) {
    auto merged = to_json(c.arch);
    merged.update(j.at("arch"));
    c.arch = arch_from_json(merged);
  }
  if (j.contains("pipeline")) {
    auto merged = to_json(c.pipeline);
    const auto& p = j.at("pipeline");
    if (p.contains("policy")) merged["policy"].update(p.at("policy"));
    if (p.contains("input_mode")) merged["input_mode"] = p.at("input_mode");
    if (p.contains("hed_stats")) merged["hed_stats"] = p.at("hed_stats");
    c.pipeline = pipeline_from_json(merged);
  }
  if (j.contains("search")) c.search = search_space_from_json(j.at("search"), c.search);
  if (j.contains("split")) {
    c.k = j.at("split").value("k", c.k);
    c.split_seed = j.at("split").value("seed", c.split_seed);
  }
  if (j.contains("hpo")) {
    c.n_trials = j.at("hpo").value("n_trials", c.n_trials);
    c.hpo_seed = j.at("hpo").value("seed", c.hpo_seed);
  }
  return c;
}

inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv(kSeedEnv);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  const unsigned long long s = std::strtoull(v, &end, 10);
  if (errno != 0 || *end != '\0' || v[0] == '-')
    throw Error(ErrorCode::InvalidConfig, std::string(kSeedEnv) + " must be a non-negative integer, got '" + v + "'");
  return static_cast<std::uint64_t>(s);
}

namespace cli_detail {

// pixels dump header: "MCPX" then u32 height, width, channels; float32 HWC data.
inline constexpr char kPixelMagic[4] = {'M', 'C', 'P', 'X'};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string folds_path;

  // synth
  std::optional<std::size_t> n;
  std::optional<double> amf_rate, hard_rate;
  std::optional<std::size_t> domains;

  // split / train / cv / hpo
  std::optional<int> k;
  std::optional<std::uint64_t> split_seed;
  std::optional<int> fold;
  std::optional<double> lr, eta_min, theta, alpha, gamma, weight_decay, dropout;
  std::optional<std::size_t> batch_size, max_epochs, patience;
  std::optional<std::string> head_mode, input_mode;
  std::optional<int> resize;
  bool no_augment = false;
  std::optional<std::size_t> n_trials;

  // eval
  std::string checkpoint;

  // report
  std::vector<std::string> predictions;
  std::string trials;

  // pixels dump
  std::string patch_id;
  std::uint64_t epoch = 0;
};

inline void add_config(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_path, "JSON config file (flags take precedence over it)")->check(CLI::ExistingFile);
}

inline void add_seed(CLI::App* app, Options& o, const std::string& what) {
  app->add_option("--seed", o.seed, what + " (overrides " + kSeedEnv + " and --config)");
}

inline void add_split_options(CLI::App* app, Options& o) {
  app->add_option("--k", o.k, "number of folds (default 5)");
  app->add_option("--split-seed", o.split_seed, "seed for the stratified split (default: the run seed)");
  app->add_option("--folds", o.folds_path, "existing folds.csv; replaces --k/--split-seed")->check(CLI::ExistingFile);
}

inline void add_train_options(CLI::App* app, Options& o) {
  app->add_option("--lr", o.lr, "initial learning rate (default 1e-4)");
  app->add_option("--eta-min", o.eta_min, "cosine schedule floor (default 0)");
  app->add_option("--batch-size", o.batch_size, "batch size (default 8)");
  app->add_option("--max-epochs", o.max_epochs, "epoch budget (default 50)");
  app->add_option("--patience", o.patience, "early-stopping patience in epochs (default 20)");
  app->add_option("--theta", o.theta, "weight of the expert-head loss against the hardness loss (default 0.5)");
  app->add_option("--alpha", o.alpha, "focal alpha, weight of label 1 (default 0.25)");
  app->add_option("--gamma", o.gamma, "focal gamma (default 2)");
  app->add_option("--weight-decay", o.weight_decay, "AdamW decoupled weight decay (default 0.01)");
  app->add_option("--dropout", o.dropout, "dropout after the shared layer (default 0)");
  app->add_option("--hardness-head", o.head_mode, "binary or four_class (default binary)");
  app->add_option("--input-mode", o.input_mode, "rgb, rgb_hed or crop_rgb_hed (default rgb)");
  app->add_option("--resize", o.resize, "model input side in pixels (default 64)");
  app->add_flag("--no-augment", o.no_augment, "disable training augmentation");
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  try {
    return nlohmann::json::parse(csv::read_text(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, p.string() + ": " + e.what());
  }
}

/// Applies config file, environment seed and flags, in increasing precedence.
inline RunConfig resolve(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) {
    try {
      c = run_config_from_json(read_json(o.config_path), c);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidConfig, o.config_path + ": " + e.what());
    }
  }
  std::optional<std::uint64_t> seed = seed_from_env();
  if (o.seed) seed = o.seed;
  if (seed) {
    c.synthetic.seed = *seed;
    c.train.seed = *seed;
    c.split_seed = *seed;
    c.hpo_seed = *seed;
  }
  if (o.n) c.synthetic.n_patches = *o.n;
  if (o.amf_rate) c.synthetic.amf_rate = *o.amf_rate;
  if (o.hard_rate) c.synthetic.hard_rate = *o.hard_rate;
  if (o.domains) c.synthetic.n_domains = *o.domains;
  if (o.k) c.k = *o.k;
  if (o.split_seed) c.split_seed = *o.split_seed;
  if (o.lr) c.train.lr0 = *o.lr;
  if (o.eta_min) c.train.eta_min = *o.eta_min;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.max_epochs) c.train.max_epochs = *o.max_epochs;
  if (o.patience) c.train.patience = *o.patience;
  if (o.theta) c.train.theta = *o.theta;
  if (o.alpha) c.train.focal.alpha = *o.alpha;
  if (o.gamma) c.train.focal.gamma = *o.gamma;
  if (o.weight_decay) c.train.weight_decay = *o.weight_decay;
  if (o.dropout) c.arch.dropout = *o.dropout;
  if (o.head_mode) c.arch.hardness_head_mode = parse_head_mode(*o.head_mode);
  if (o.input_mode) c.pipeline.mode = parse_input_mode(*o.input_mode);
  if (o.resize) c.pipeline.policy.resize_to = *o.resize;
  if (o.no_augment) c.pipeline.policy.enabled = false;
  if (o.n_trials) c.n_trials = *o.n_trials;
  c.arch.input_channels = input_channels(c.pipeline.mode);
  return c;
}

inline void write_config(const RunConfig& c, const std::filesystem::path& path) {
  csv::write_text(path, to_json(c).dump(2) + "\n");
}

/// Config path for commands whose --out names a file rather than a directory.
inline std::filesystem::path sidecar(const std::filesystem::path& out) { return out.string() + ".config.json"; }

inline Dataset load(const Options& o) {
  if (o.manifest.empty()) throw Error(ErrorCode::InvalidConfig, "--manifest is required");
  return load_manifest(o.manifest);
}

inline FoldAssignment folds_for(const Options& o, const Dataset& data, const RunConfig& c) {
  if (!o.folds_path.empty()) return read_folds(o.folds_path);
  return stratified_kfold(data, c.k, c.split_seed);
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, what);
}

inline int cmd_synth(const Options& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  validate(c.synthetic);
  const auto ds = generate_synthetic(c.synthetic);
  const std::filesystem::path out = o.out;
  write_manifest(ds.records, out);
  write_truth(ds.truth, out / "truth.csv");
  write_config(c, out / "config.json");
  return 0;
}

inline int cmd_split(const Options& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  require(c.k >= 2, "--k must be >= 2, got " + std::to_string(c.k));
  const auto data = load(o);
  const auto fa = stratified_kfold(data, c.k, c.split_seed);
  write_folds(fa, o.out);
  write_config(c, sidecar(o.out));
  return 0;
}

inline void write_eval_outputs(const std::filesystem::path& dir, const PredictionSet& preds) {
  const auto report = evaluate(preds);
  csv::write_text(dir / "predictions.csv", predictions_to_csv(preds));
  csv::write_text(dir / "report.json", to_json(report).dump(2) + "\n");
  csv::write_text(dir / "report.csv", report_to_csv(report));
}

inline int cmd_train(const Options& o) {
  RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  require(o.fold.has_value(), "--fold is required");
  c.train.validate();
  c.arch.validate();
  c.pipeline.policy.validate();
  if (o.folds_path.empty()) {
    require(c.k >= 2, "--k must be >= 2, got " + std::to_string(c.k));
    if (*o.fold < 0 || *o.fold >= c.k)
      throw Error(ErrorCode::FoldOutOfRange,
                  "--fold " + std::to_string(*o.fold) + " is outside [0, " + std::to_string(c.k) + ") for --k " + std::to_string(c.k));
  }
  const auto data = load(o);
  const auto fa = folds_for(o, data, c);
  c.k = fa.k;
  c.split_seed = fa.seed;
  fold_slices(fa, *o.fold);  // validates the fold against a loaded folds file
  c.pipeline = resolve_pipeline(data, c.pipeline);
  const std::filesystem::path out = o.out;
  const auto r = train(data, fa, *o.fold, c.arch, c.train, c.pipeline, out);
  write_folds(fa, out / "folds.csv");
  write_eval_outputs(out, r.best_val_predictions);
  auto conf = to_json(c);
  conf["fold"] = *o.fold;
  csv::write_text(out / "config.json", conf.dump(2) + "\n");
  std::cout << "fold " << *o.fold << ": best epoch " << r.best_epoch << " of " << r.epochs_run
            << ", val balanced accuracy " << format_fixed4(r.best_val_balanced_accuracy) << "\n";
  return 0;
}

inline int cmd_cv(const Options& o) {
  RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  c.train.validate();
  c.arch.validate();
  c.pipeline.policy.validate();
  const auto data = load(o);
  const std::filesystem::path out = o.out;
  CvResult r;
  if (!o.folds_path.empty()) {
    const auto fa = read_folds(o.folds_path);
    c.k = fa.k;
    c.split_seed = fa.seed;
  }
  c.pipeline = resolve_pipeline(data, c.pipeline);
  r = run_cv(data, c.k, c.split_seed, c.arch, c.train, c.pipeline, out);
  write_config(c, out / "config.json");
  for (const auto& [name, s] : r.summary) std::cout << name << ": " << format_mean_std(s) << "\n";
  return 0;
}

inline int cmd_eval(const Options& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  require(!o.checkpoint.empty(), "--checkpoint is required");
  const auto ck = load_checkpoint<float>(o.checkpoint);
  const Model<float> model(ck.arch);
  model.check_layout(ck.params);
  const PipelineSpec pipe = ck.meta.contains("pipeline") ? pipeline_from_json(ck.meta.at("pipeline")) : c.pipeline;
  const auto data = load(o);
  std::vector<std::size_t> idx;
  if (o.fold) {
    const auto fa = folds_for(o, data, c);
    idx = indices_of(data, fold_slices(fa, *o.fold).second);
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) idx.push_back(i);
  }
  const auto preds = predict_records(model, ck.params, data, idx, pipe);
  const std::filesystem::path out = o.out;
  write_eval_outputs(out, preds);
  auto conf = to_json(c);
  conf["checkpoint"] = o.checkpoint;
  conf["arch"] = to_json(ck.arch);
  conf["pipeline"] = to_json(pipe);
  csv::write_text(out / "config.json", conf.dump(2) + "\n");
  const auto m = metric_tuple(preds);
  if (m.balanced_accuracy) std::cout << "balanced accuracy " << format_fixed4(*m.balanced_accuracy) << "\n";
  return 0;
}

inline int cmd_hpo(const Options& o) {
  RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  require(c.n_trials >= 1, "--trials must be >= 1");
  c.search.validate();
  const auto data = load(o);
  const auto fa = folds_for(o, data, c);
  c.k = fa.k;
  c.split_seed = fa.seed;
  c.pipeline = resolve_pipeline(data, c.pipeline);
  const auto r = run_search(data, fa, c.arch, c.train, c.pipeline, c.search, c.n_trials, c.hpo_seed);
  const std::filesystem::path out = o.out;
  write_folds(fa, out / "folds.csv");
  csv::write_text(out / "trials.csv", trials_to_csv(r.trials, fa.k));
  csv::write_text(out / "best.json", best_to_json(r, c.arch, c.train).dump(2) + "\n");
  write_config(c, out / "config.json");
  if (!r.best) {
    std::cerr << "hpo: every trial failed; see trials.csv\n";
    return 2;
  }
  std::cout << "best trial " << r.trials[*r.best].trial_id << ": mean balanced accuracy "
            << format_fixed4(*r.trials[*r.best].objective) << "\n";
  return 0;
}

inline int cmd_report(const Options& o) {
  require(!o.out.empty(), "--out is required");
  require(!o.predictions.empty() || !o.trials.empty(), "give --predictions and/or --trials");
  const std::filesystem::path out = o.out;
  nlohmann::json summary = nlohmann::json::object();
  if (!o.predictions.empty()) {
    std::vector<MetricsReport> reports;
    nlohmann::json per_file = nlohmann::json::array();
    for (const auto& p : o.predictions) {
      reports.push_back(evaluate(read_predictions(p)));
      per_file.push_back({{"predictions", p}, {"report", to_json(reports.back())}});
    }
    summary["folds"] = per_file;
    if (reports.size() >= 2) {
      const auto agg = aggregate_folds(reports);
      summary["summary"] = to_json(agg);
      std::string text = "metric,mean,std,formatted\n";
      for (const auto& [name, s] : agg)
        text += csv::join({name, csv::format_double(s.mean), csv::format_double(s.std_dev), format_mean_std(s)}) + "\n";
      csv::write_text(out / "summary.csv", text);
    } else {
      csv::write_text(out / "summary.csv", report_to_csv(reports.front()));
    }
  }
  if (!o.trials.empty()) {
    const auto t = csv::read_file(o.trials);
    const int id_col = t.column("trial_id"), mean_col = t.column("mean_balanced_accuracy"), status_col = t.column("status");
    if (id_col < 0 || mean_col < 0 || status_col < 0)
      throw Error(ErrorCode::MissingColumn, o.trials + ": expected trial_id, mean_balanced_accuracy and status columns");
    std::size_t complete = 0, failed = 0;
    std::optional<std::size_t> best;
    double best_value = 0.0;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      if (t.rows[r][status_col] != "complete") {
        ++failed;
        continue;
      }
      ++complete;
      const double v = std::stod(t.rows[r][mean_col]);
      if (!best || v > best_value) {
        best = r;
        best_value = v;
      }
    }
    nlohmann::json tj = {{"complete", complete}, {"failed", failed}};
    if (best) tj["best"] = {{"trial_id", std::stoll(t.rows[*best][id_col])}, {"mean_balanced_accuracy", best_value}};
    summary["trials"] = tj;
  }
  csv::write_text(out / "summary.json", summary.dump(2) + "\n");
  return 0;
}

inline int cmd_pixels_dump(const Options& o) {
  const RunConfig c = resolve(o);
  require(!o.out.empty(), "--out is required");
  require(!o.patch_id.empty(), "--id is required");
  const auto data = load(o);
  const auto idx = indices_of(data, {o.patch_id});
  PipelineSpec pipe = c.pipeline;
  if (pipe.mode != InputMode::rgb) pipe = resolve_pipeline(data, pipe);
  const auto t = apply_policy(data[idx.front()], pipe.policy, pipe.mode,
                              augmentation_seed(c.train.seed, o.patch_id, o.epoch), pipe.hed);
  std::string bytes(kPixelMagic, 4);
  for (std::uint32_t v : {static_cast<std::uint32_t>(t.height), static_cast<std::uint32_t>(t.width),
                          static_cast<std::uint32_t>(t.channels)}) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    bytes.append(buf, 4);
  }
  for (double v : t.data) {
    const float f = static_cast<float>(v);
    char buf[4];
    std::memcpy(buf, &f, 4);
    bytes.append(buf, 4);
  }
  const std::filesystem::path out = o.out;
  csv::write_text(out, bytes);
  write_config(c, sidecar(out));
  return 0;
}

}  // namespace cli_detail

/// Exit codes: 0 success, 1 invalid flags or configuration, 2 runtime failure.
inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  Options o;
  CLI::App app{"Atypical/normal mitotic figure classification: data synthesis, splitting, training and evaluation.\n"
               "Environment: " + std::string(kSeedEnv) + " overrides every default seed; explicit --seed wins over it.",
               "mitoclass"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a planted-signal synthetic dataset (manifest, PNGs, truth.csv)");
  add_config(synth, o);
  add_seed(synth, o, "generator seed");
  synth->add_option("--n", o.n, "number of patches (default 200)");
  synth->add_option("--amf-rate", o.amf_rate, "fraction of AMF patches (default 0.15)");
  synth->add_option("--hard-rate", o.hard_rate, "fraction of hard patches (default 0.137)");
  synth->add_option("--domains", o.domains, "number of simulated domains (default 4)");
  synth->add_option("--out", o.out, "output directory")->required();

  auto* split = app.add_subcommand("split", "stratified k-fold assignment written as folds.csv");
  add_config(split, o);
  add_seed(split, o, "split seed");
  split->add_option("--manifest", o.manifest, "manifest.csv")->required();
  split->add_option("--k", o.k, "number of folds (default 5)");
  split->add_option("--out", o.out, "output folds file")->required();

  auto* train_cmd = app.add_subcommand("train", "train one fold; writes config.json, history.csv, best.ckpt and reports");
  add_config(train_cmd, o);
  add_seed(train_cmd, o, "training seed (also the split seed unless --split-seed is given)");
  train_cmd->add_option("--manifest", o.manifest, "manifest.csv")->required();
  train_cmd->add_option("--fold", o.fold, "validation fold index in [0, k)")->required();
  add_split_options(train_cmd, o);
  add_train_options(train_cmd, o);
  train_cmd->add_option("--out", o.out, "run directory")->required();

  auto* cv_cmd = app.add_subcommand("cv", "train every fold and aggregate the validation metrics");
  add_config(cv_cmd, o);
  add_seed(cv_cmd, o, "training seed (also the split seed unless --split-seed is given)");
  cv_cmd->add_option("--manifest", o.manifest, "manifest.csv")->required();
  add_split_options(cv_cmd, o);
  add_train_options(cv_cmd, o);
  cv_cmd->add_option("--out", o.out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest (optionally one fold's validation slice)");
  add_config(eval_cmd, o);
  add_seed(eval_cmd, o, "split seed used with --fold");
  eval_cmd->add_option("--checkpoint", o.checkpoint, "best.ckpt")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", o.manifest, "manifest.csv")->required();
  eval_cmd->add_option("--fold", o.fold, "restrict to this fold's validation slice");
  add_split_options(eval_cmd, o);
  eval_cmd->add_option("--out", o.out, "output directory")->required();

  auto* hpo_cmd = app.add_subcommand("hpo", "random search over focal alpha/gamma, learning rate and dropout");
  add_config(hpo_cmd, o);
  add_seed(hpo_cmd, o, "search seed (also training and split seed)");
  hpo_cmd->add_option("--manifest", o.manifest, "manifest.csv")->required();
  hpo_cmd->add_option("--trials", o.n_trials, "number of trials (default 8)");
  add_split_options(hpo_cmd, o);
  add_train_options(hpo_cmd, o);
  hpo_cmd->add_option("--out", o.out, "output directory")->required();

  auto* report = app.add_subcommand("report", "summarise prediction files and/or a trials table");
  report->add_option("--predictions", o.predictions, "one predictions.csv per fold")->check(CLI::ExistingFile);
  report->add_option("--trials", o.trials, "trials.csv from hpo")->check(CLI::ExistingFile);
  report->add_option("--out", o.out, "output directory")->required();

  auto* pixels = app.add_subcommand("pixels", "pixel pipeline utilities");
  pixels->require_subcommand(1);
  auto* dump = pixels->add_subcommand("dump", "write one transformed patch as float32 (16-byte header: MCPX, H, W, C)");
  add_config(dump, o);
  add_seed(dump, o, "augmentation seed");
  dump->add_option("--manifest", o.manifest, "manifest.csv")->required();
  dump->add_option("--id", o.patch_id, "patch_id to transform")->required();
  dump->add_option("--epoch", o.epoch, "epoch index for the augmentation stream (default 0)");
  dump->add_option("--input-mode", o.input_mode, "rgb, rgb_hed or crop_rgb_hed (default rgb)");
  dump->add_option("--resize", o.resize, "output side in pixels (default 64)");
  dump->add_flag("--no-augment", o.no_augment, "resize and normalize only");
  dump->add_option("--out", o.out, "output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*split) return cmd_split(o);
    if (*train_cmd) return cmd_train(o);
    if (*cv_cmd) return cmd_cv(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*hpo_cmd) return cmd_hpo(o);
    if (*report) return cmd_report(o);
    if (*dump) return cmd_pixels_dump(o);
  } catch (const Error& e) {
    std::cerr << "mitoclass: " << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "mitoclass: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mitoclass
