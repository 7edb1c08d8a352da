#include <gtest/gtest.h>

#include <cmath>

#include "mitoclass/hpo.hpp"
#include "test_util.hpp"

using namespace mitoclass;
using namespace mitoclass::testing;

namespace {

struct Fixture {
  Dataset data;
  FoldAssignment folds;
  TrainConfig base;
  PipelineSpec pipe{desk_policy(), InputMode::rgb, {}};

  explicit Fixture(std::size_t n = 48) {
    SyntheticConfig sc;
    sc.n_patches = n;
    sc.amf_rate = 0.4;
    sc.seed = 21;
    data = generate_synthetic(sc).records;
    folds = stratified_kfold(data, 2, 3);
    base.max_epochs = 4;
    base.patience = 3;
    base.seed = 2;
  }
};

}  // namespace

TEST(SampleConfig, DegenerateSpaceReturnsThePoint) {
  SearchSpace s{{0.3, 0.3}, {1.5, 1.5}, {2e-4, 2e-4}, {0.1, 0.1}};
  Rng rng(1);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_config(s, rng), (Hyperparams{0.3, 1.5, 2e-4, 0.1}));
}

TEST(SampleConfig, InsideRangesAndDeterministic) {
  const SearchSpace s;
  Rng rng(9);
  for (int i = 0; i < 5000; ++i) {
    const auto h = sample_config(s, rng);
    EXPECT_GE(h.alpha, 0.1);
    EXPECT_LE(h.alpha, 0.9);
    EXPECT_GE(h.gamma, 0.0);
    EXPECT_LE(h.gamma, 5.0);
    EXPECT_GE(h.lr, 1e-5);
    EXPECT_LE(h.lr, 1e-3);
    EXPECT_GE(h.dropout, 0.0);
    EXPECT_LE(h.dropout, 0.5);
  }
  Rng a(4), b(4);
  EXPECT_EQ(sample_config(s, a), sample_config(s, b));
}

TEST(SampleConfig, LearningRateIsLogUniform) {
  const SearchSpace s;
  Rng rng(123);
  int low = 0, high = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double lr = sample_config(s, rng).lr;
    if (lr <= 1e-4) ++low;
    else ++high;
  }
  EXPECT_NEAR(static_cast<double>(low) / n, static_cast<double>(high) / n, 0.03);
}

TEST(SearchSpace, ValidationAndJson) {
  SearchSpace s;
  s.alpha = {0.2, 0.4};
  s.lr = {1e-4, 5e-4};
  const auto back = search_space_from_json(to_json(s));
  EXPECT_EQ(to_json(back), to_json(s));
  SearchSpace bad;
  bad.gamma = {3.0, 1.0};
  EXPECT_THROW(bad.validate(), Error);
  bad = {};
  bad.lr = {0.0, 1e-3};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(BestTrial, TiesGoToLowestId) {
  std::vector<Trial> t(4);
  for (std::size_t i = 0; i < 4; ++i) t[i].trial_id = i;
  t[0].objective = 0.7;
  t[1].objective = 0.9;
  t[2].status = TrialStatus::failed;
  t[3].objective = 0.9;
  EXPECT_EQ(best_trial(t), 1u);
  for (auto& x : t) x.status = TrialStatus::failed;
  EXPECT_FALSE(best_trial(t).has_value());
}

TEST(RunSearch, SingleTrialIsBest) {
  Fixture f;
  const auto r = run_search(f.data, f.folds, desk_arch(), f.base, f.pipe, SearchSpace{}, 1, 5);
  ASSERT_EQ(r.trials.size(), 1u);
  ASSERT_TRUE(r.best.has_value());
  EXPECT_EQ(*r.best, 0u);
  EXPECT_EQ(r.trials[0].fold_balanced_accuracy.size(), 2u);
  EXPECT_NEAR(*r.trials[0].objective,
              (r.trials[0].fold_balanced_accuracy[0] + r.trials[0].fold_balanced_accuracy[1]) / 2, 1e-15);
  EXPECT_THROW(run_search(f.data, f.folds, desk_arch(), f.base, f.pipe, SearchSpace{}, 0, 5), Error);
}

TEST(RunSearch, NonzeroLearningRateBeatsDegenerateOnes) {
  // enough steps to leave the all-one-class start; 32 px keeps it quick
  Fixture f(600);
  f.base.max_epochs = 10;
  f.base.patience = 10;
  f.pipe.policy.resize_to = 32;
  const std::vector<Hyperparams> configs = {{0.25, 2.0, 0.0, 0.0}, {0.25, 2.0, 1e-12, 0.0}, {0.25, 2.0, 1e-3, 0.0}};
  const auto r = run_trials(configs, f.data, f.folds, desk_arch(), f.base, f.pipe);
  ASSERT_TRUE(r.best.has_value());
  EXPECT_EQ(*r.best, 2u);
  // lr = 0 cannot satisfy lr0 > eta_min and is recorded as failed, not fatal
  EXPECT_EQ(r.trials[0].status, TrialStatus::failed);
  EXPECT_FALSE(r.trials[0].objective.has_value());
  EXPECT_FALSE(r.trials[0].error.empty());
  EXPECT_EQ(r.trials[1].status, TrialStatus::complete);
  EXPECT_GT(*r.trials[2].objective, *r.trials[1].objective);
}

TEST(RunSearch, ReproducibleAndIsolated) {
  Fixture f;
  const SearchSpace space;
  const auto a = run_search(f.data, f.folds, desk_arch(), f.base, f.pipe, space, 3, 77);
  const auto b = run_search(f.data, f.folds, desk_arch(), f.base, f.pipe, space, 3, 77);
  EXPECT_EQ(trials_to_csv(a.trials, 2), trials_to_csv(b.trials, 2));
  EXPECT_EQ(a.best, b.best);
  for (const auto& t : a.trials) {
    if (t.status == TrialStatus::complete) {
      EXPECT_GE(*a.trials[*a.best].objective, *t.objective);
    }
  }

  // a failing trial in the middle leaves its neighbours untouched
  std::vector<Hyperparams> configs = {a.trials[0].params, {0.0, 2.0, 1e-4, 0.0}, a.trials[2].params};
  const auto c = run_trials(configs, f.data, f.folds, desk_arch(), f.base, f.pipe);
  EXPECT_EQ(c.trials[1].status, TrialStatus::failed);
  EXPECT_EQ(c.trials[0].fold_balanced_accuracy, a.trials[0].fold_balanced_accuracy);
  EXPECT_EQ(c.trials[2].fold_balanced_accuracy, a.trials[2].fold_balanced_accuracy);
}

TEST(RunSearch, TrialStreamsDependOnlyOnSeedAndId) {
  const SearchSpace space;
  Rng r3(derive_seed(11, 3));
  const auto expected = sample_config(space, r3);
  std::vector<Hyperparams> seen;
  for (std::size_t i = 0; i < 5; ++i) {
    Rng rng(derive_seed(11, i));
    seen.push_back(sample_config(space, rng));
  }
  EXPECT_EQ(seen[3], expected);
  EXPECT_NE(seen[2], seen[3]);
}

TEST(TrialsCsv, LayoutAndBestJson) {
  std::vector<Trial> t(2);
  t[0] = {0, {0.25, 2.0, 1e-4, 0.1}, {0.8, 0.9}, 0.85, TrialStatus::complete, ""};
  t[1] = {1, {0.5, 1.0, 1e-3, 0.0}, {}, std::nullopt, TrialStatus::failed, "boom, with comma"};
  const auto text = trials_to_csv(t, 2);
  const auto nl = text.find('\n');
  EXPECT_EQ(text.substr(0, nl),
            "trial_id,alpha,gamma,lr,dropout,fold_0_balanced_accuracy,fold_1_balanced_accuracy,mean_balanced_accuracy,"
            "status,error");
  EXPECT_NE(text.find(",,,,failed,\"boom, with comma\""), std::string::npos);
  SearchResult r{t, 0};
  const auto j = best_to_json(r, desk_arch(), TrainConfig{});
  EXPECT_EQ(j.at("trial_id"), 0);
  EXPECT_EQ(j.at("train").at("lr0"), 1e-4);
  EXPECT_EQ(j.at("arch").at("dropout"), 0.1);
}
