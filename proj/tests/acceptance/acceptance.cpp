// Runs the acceptance criteria and prints one PASS/FAIL line per criterion.
// Exit status is 0 only when every selected criterion passes.

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "grad_check.hpp"
#include "mitoclass/mitoclass.hpp"

using namespace mitoclass;
using namespace mitoclass::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-12); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

Outcome table_arithmetic() {
  struct Row {
    double sens, spec, reported;
  };
  const Row rows[] = {{1.0, 0.7813, 0.8906}, {0.9655, 0.7273, 0.8463}, {1.0, 0.7978, 0.8989}, {1.0, 0.7777, 0.8889}};
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(balanced_accuracy(r.sens, r.spec) - r.reported));
  return {worst <= 1e-4, "worst |computed - reported| = " + fmt(worst, 10) + " over 4 domain rows"};
}

Outcome focal_correctness() {
  const FocalParams half{0.5, 0.0};
  double worst_bce = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double p = (i + 0.5) / 1000.0;
    for (int y : {0, 1}) {
      const double bce = y == 1 ? -std::log(p) : -std::log(1.0 - p);
      worst_bce = std::max(worst_bce, std::abs(focal_binary(p, y, half) - 0.5 * bce));
    }
  }
  Rng rng(4242);
  double worst_grad = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const FocalParams fp{rng.uniform(0.05, 0.95), rng.uniform(0.0, 5.0)};
    const int y = rng.bernoulli(0.5) ? 1 : 0;
    const double p = rng.uniform(0.01, 0.99);
    const double h = 1e-4 * std::min(p, 1.0 - p);
    const double numeric = (focal_binary(p + h, y, fp) - focal_binary(p - h, y, fp)) / (2 * h);
    worst_grad = std::max(worst_grad, rel_err(focal_binary_grad(p, y, fp), numeric));
    const double z = rng.uniform(-6.0, 6.0);
    const double hz = 1e-5;
    const double numeric_z = (focal_binary_logit(z + hz, y, fp) - focal_binary_logit(z - hz, y, fp)) / (2 * hz);
    worst_grad = std::max(worst_grad, rel_err(focal_binary_logit_grad(z, y, fp), numeric_z));
  }
  return {worst_bce <= 1e-12 && worst_grad < 1e-5,
          "half-BCE max abs diff " + fmt(worst_bce) + ", gradient max rel err " + fmt(worst_grad)};
}

Outcome model_gradients() {
  double worst_double = 0.0, worst_single = 0.0;
  std::uint64_t seed = 100;
  for (auto mode : {HardnessHeadMode::binary, HardnessHeadMode::four_class}) {
    for (int ch : {3, 6}) {
      const auto arch = desk_arch(mode, ch);
      ++seed;
      const Model<double> md(arch);
      worst_double = std::max(worst_double, directional_check(arch, md.init_params(seed), random_batch<double>(4, ch, 64, seed),
                                                              true, seed));
      const Model<float> mf(arch);
      worst_single = std::max(worst_single, directional_check(arch, mf.init_params(seed), random_batch<float>(4, ch, 64, seed),
                                                              true, seed));
    }
  }
  return {worst_double < 1e-5 && worst_single < 1e-3,
          "max rel err double " + fmt(worst_double) + ", single " + fmt(worst_single)};
}

SyntheticConfig acceptance_data_config() {
  SyntheticConfig sc;
  sc.n_patches = 2000;
  sc.amf_rate = 0.1465;
  sc.hard_rate = 0.137;
  sc.seed = 0;
  return sc;
}

TrainConfig desk_train_config() {
  TrainConfig cfg;
  cfg.max_epochs = 30;
  cfg.batch_size = 8;
  cfg.lr0 = 1e-4;
  cfg.theta = 0.5;
  cfg.seed = 0;
  return cfg;
}

constexpr int kFolds = 5;
constexpr std::uint64_t kSplitSeed = 0;

Outcome stratification(const Dataset& data) {
  const auto fa = stratified_kfold(data, kFolds, kSplitSeed);
  std::array<std::size_t, kNumStrata> totals{};
  std::vector<std::array<std::size_t, kNumStrata>> per_fold(kFolds);
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < fa.ids.size(); ++i) seen[fa.ids[i]] += 1;
  for (const auto& r : data) {
    const int s = stratum_index(r);
    totals[s] += 1;
    per_fold[fa.fold_of(r.patch_id)][s] += 1;
  }
  double worst = 0.0;
  for (int f = 0; f < kFolds; ++f)
    for (int s = 0; s < kNumStrata; ++s)
      worst = std::max(worst, std::abs(static_cast<double>(per_fold[f][s]) - static_cast<double>(totals[s]) / kFolds));
  bool exact = seen.size() == data.size() && fa.ids.size() == data.size();
  for (const auto& [id, count] : seen) exact = exact && count == 1;
  for (const auto& r : data) exact = exact && seen.count(r.patch_id) == 1;
  // every id's validation fold is its own; training slices are the complement
  for (int f = 0; f < kFolds && exact; ++f) {
    const auto [train_ids, val_ids] = fold_slices(fa, f);
    std::set<std::string> u(train_ids.begin(), train_ids.end());
    for (const auto& id : val_ids) exact = exact && u.insert(id).second;
    exact = exact && u.size() == data.size();
  }
  return {worst < 1.2 && exact,
          "max |count - ideal| = " + fmt(worst) + ", union/disjoint " + (exact ? "exact" : "violated")};
}

double pairwise_auc(const std::vector<double>& s, const std::vector<ClassLabel>& t) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (t[i] == ClassLabel::AMF && t[j] == ClassLabel::NMF) {
        pairs += 1;
        if (s[i] < s[j]) wins += 1;
        else if (s[i] == s[j]) wins += 0.5;
      }
  return wins / pairs;
}

Outcome auc_oracle() {
  Rng rng(606);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.index(199);
    const double grid = static_cast<double>(2 + rng.index(40));
    std::vector<double> s(n);
    std::vector<ClassLabel> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      // half the sets use a coarse grid so ties are common
      s[i] = t % 2 == 0 ? std::floor(rng.uniform() * grid) / grid : rng.uniform();
      y[i] = rng.bernoulli(0.3) ? ClassLabel::AMF : ClassLabel::NMF;
    }
    y[0] = ClassLabel::AMF;
    y[1] = ClassLabel::NMF;
    if (roc_auc(s, y) != pairwise_auc(s, y)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 100 sets differ from the pairwise count"};
}

Outcome hed_sanity() {
  double white = 0.0;
  for (double v : rgb_to_hed(PixelTensor(3, 3, 3, 1.0)).data) white = std::max(white, std::abs(v));
  const auto& s = default_stains();
  std::array<double, 3> rgb;
  for (int c = 0; c < 3; ++c) rgb[c] = std::pow(10.0, -s.rows[0][c]);
  const auto h = hed_from_rgb_pixel(rgb);
  const double unit_err = std::max({std::abs(h[0] - 1.0), std::abs(h[1]), std::abs(h[2])});
  Rng rng(77);
  PixelTensor img(8, 8, 3);
  for (std::size_t i = 0; i < img.data.size(); i += 3) {
    const auto px = rgb_from_hed_pixel({rng.uniform(0, 1.5), rng.uniform(0, 1.5), rng.uniform(0, 0.5)});
    for (int c = 0; c < 3; ++c) img.data[i + c] = px[c];
  }
  const auto back = hed_to_rgb(rgb_to_hed(img, false));
  double trip = 0.0;
  for (std::size_t i = 0; i < img.data.size(); ++i) trip = std::max(trip, std::abs(back.data[i] - img.data[i]));
  return {white == 0.0 && unit_err <= 1e-6 && trip <= 1e-6,
          "white max " + fmt(white) + ", unit H err " + fmt(unit_err) + ", round trip err " + fmt(trip)};
}

ParamSet<double> scalar(double v) {
  ParamSet<double> p;
  p.add("w", {1}).data[0] = v;
  return p;
}

Outcome schedule_and_optimizer() {
  TrainConfig cfg;
  cfg.eta_min = 1e-6;
  const bool endpoints = cosine_lr(0, cfg, 30) == 1e-4 && cosine_lr(30, cfg, 30) == 1e-6;

  // one AdamW step by hand: m = 0.1 g, v = 0.001 g^2, bias-corrected to g and g^2
  cfg.weight_decay = 0.01;
  const double w0 = 0.8, g = -0.3, lr = 0.05;
  auto p = scalar(w0);
  auto st = AdamState<double>::for_params(p);
  adamw_step(p, scalar(g), st, lr, cfg);
  const double hand = w0 * (1 - lr * 0.01) - lr * g / (std::abs(g) + 1e-8);
  const double step_err = std::abs(p.at("w").data[0] - hand);

  cfg.weight_decay = 0.0;
  auto q = scalar(0.37);
  auto st0 = AdamState<double>::for_params(q);
  for (int i = 0; i < 5; ++i) adamw_step(q, scalar(0.0), st0, 0.1, cfg);
  const bool noop = q.at("w").data[0] == 0.37;
  return {endpoints && step_err <= 1e-6 && noop, std::string("endpoints ") + (endpoints ? "exact" : "off") +
                                                     ", AdamW step err " + fmt(step_err) + ", zero-grad no-op " +
                                                     (noop ? "exact" : "moved")};
}

Outcome early_stopping() {
  const auto frozen = run_epochs(200, 20, [](std::size_t e) { return e <= 3 ? 0.1 * static_cast<double>(e) : 0.3; });
  const auto rising = run_epochs(60, 2, [](std::size_t e) { return 1.0 - 1.0 / static_cast<double>(e + 1); });
  const bool ok = frozen.epochs_run == 24 && frozen.best_epoch == 3 && rising.epochs_run == 60 && rising.best_epoch == 60;
  return {ok, "frozen: stopped at " + std::to_string(frozen.epochs_run) + " best " + std::to_string(frozen.best_epoch) +
                  "; improving: ran " + std::to_string(rising.epochs_run)};
}

// Files under `a` and `b` must match one to one, byte for byte.
Outcome identical_trees(const fs::path& a, const fs::path& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) names_a.insert(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) names_b.insert(fs::relative(e.path(), b).string());
  if (names_a != names_b) return {false, "file sets differ"};
  std::size_t checkpoints = 0;
  for (const auto& n : names_a) {
    if (slurp(a / n) != slurp(b / n)) return {false, n + " differs"};
    checkpoints += fs::path(n).extension() == ".ckpt";
  }
  return {checkpoints == kFolds && names_a.count("folds.csv") && names_a.count("cv_report.json"),
          std::to_string(names_a.size()) + " files identical (" + std::to_string(checkpoints) + " checkpoints)"};
}

struct Criterion {
  int id;
  std::string name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work_dir = "acceptance_runs";
  std::vector<int> only;
  app.add_option("--work-dir", work_dir, "directory for training runs (cleared first)");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_dir;
  const auto data = generate_synthetic(acceptance_data_config()).records;
  const PipelineSpec pipe{desk_policy(), InputMode::rgb, {}};
  std::optional<CvResult> binary_run;

  const auto cv_into = [&](const std::string& name, HardnessHeadMode mode) {
    fs::remove_all(work / name);
    fs::create_directories(work / name);
    return run_cv(data, kFolds, kSplitSeed, desk_arch(mode), desk_train_config(), pipe, work / name);
  };
  const auto ba_summary = [](const CvResult& r) { return r.summary.at("balanced_accuracy"); };

  const std::vector<Criterion> criteria = {
      {1, "per-domain balanced accuracy arithmetic", table_arithmetic},
      {2, "focal loss values and gradient", focal_correctness},
      {3, "model gradient contract", model_gradients},
      {4, "end-to-end learnability",
       [&] {
         binary_run = cv_into("cv_a", HardnessHeadMode::binary);
         const auto s = ba_summary(*binary_run);
         std::string folds;
         for (const auto& o : binary_run->outcomes) folds += " " + format_fixed4(o.best_val_balanced_accuracy);
         return Outcome{s.mean >= 0.90, "mean balanced accuracy " + format_mean_std(s) + ", folds" + folds};
       }},
      {5, "stratification", [&] { return stratification(data); }},
      {6, "ROC AUC oracle equivalence", auc_oracle},
      {7, "HED sanity", hed_sanity},
      {8, "cosine schedule and AdamW", schedule_and_optimizer},
      {9, "determinism",
       [&] {
         if (!fs::exists(work / "cv_a" / "cv_report.json")) cv_into("cv_a", HardnessHeadMode::binary);
         cv_into("cv_b", HardnessHeadMode::binary);
         return identical_trees(work / "cv_a", work / "cv_b");
       }},
      {10, "early stopping", early_stopping},
      {11, "four-class hardness head",
       [&] {
         const auto four = cv_into("cv_four_class", HardnessHeadMode::four_class);
         const bool emitted = fs::exists(work / "cv_four_class" / "cv_report.json") &&
                              fs::exists(work / "cv_four_class" / "cv_report.csv") && four.outcomes.size() == kFolds;
         std::string detail = "mean balanced accuracy " + format_mean_std(ba_summary(four));
         if (binary_run) {
           const double delta = ba_summary(four).mean - ba_summary(*binary_run).mean;
           detail += ", delta vs binary " + fmt(delta, 4) + " (observed only)";
         }
         return Outcome{emitted, detail};
       }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << ": " << c.name << ": " << o.detail << " ["
              << fmt(secs, 4) << " s]" << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
