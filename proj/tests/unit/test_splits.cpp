#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

#include "mitoclass/splits.hpp"
#include "test_util.hpp"

using namespace mitoclass;
using namespace mitoclass::testing;

namespace {

// 5 records per stratum: AMF-hard, AMF-easy, NMF-hard, NMF-easy.
Dataset twenty_records() {
  const std::array<std::array<ClassLabel, 3>, 4> experts = {{{A, A, N}, {A, A, A}, {N, N, A}, {N, N, N}}};
  Dataset d;
  for (int i = 0; i < 20; ++i)
    d.push_back(make_record("r" + std::to_string(i), experts[i % 4], test_domain()));
  return d;
}

Dataset labelled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    std::array<ClassLabel, 3> e;
    for (auto& x : e) x = rng.bernoulli(0.3) ? A : N;
    d.push_back(make_record("id" + std::to_string(i), e, test_domain()));
  }
  return d;
}

std::array<std::array<int, kNumStrata>, 16> stratum_counts(const Dataset& d, const FoldAssignment& fa) {
  std::array<std::array<int, kNumStrata>, 16> c{};
  for (std::size_t i = 0; i < d.size(); ++i) ++c[fa.folds[i]][stratum_index(d[i])];
  return c;
}

}  // namespace

TEST(StratifiedKFold, TwentyRecordFixture) {
  const auto d = twenty_records();
  const auto fa = stratified_kfold(d, 5, 42);
  const auto c = stratum_counts(d, fa);
  for (int f = 0; f < 5; ++f) {
    int total = 0;
    for (int s = 0; s < kNumStrata; ++s) {
      EXPECT_EQ(c[f][s], 1) << "fold " << f << " stratum " << s;
      total += c[f][s];
    }
    EXPECT_EQ(total, 4);
  }
}

TEST(StratifiedKFold, StratumIndexLayout) {
  EXPECT_EQ(stratum_index(make_record("x", {A, A, N}, test_domain())), 0);
  EXPECT_EQ(stratum_index(make_record("x", {A, A, A}, test_domain())), 1);
  EXPECT_EQ(stratum_index(make_record("x", {N, N, A}, test_domain())), 2);
  EXPECT_EQ(stratum_index(make_record("x", {N, N, N}, test_domain())), 3);
}

TEST(StratifiedKFold, InvalidK) {
  const auto d = twenty_records();
  for (int k : {1, 0, -3, 21}) {
    try {
      stratified_kfold(d, k, 0);
      FAIL() << "k=" << k;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidK);
    }
  }
  EXPECT_NO_THROW(stratified_kfold(d, 20, 0));
  EXPECT_THROW(stratified_kfold(Dataset{}, 2, 0), Error);
}

TEST(StratifiedKFold, PartitionAndBoundOverManyDatasets) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t n = 10 + seed * 17;
    const auto d = labelled(n, seed);
    for (int k : {2, 3, 5, 7}) {
      const auto fa = stratified_kfold(d, k, seed * 13 + 1);
      std::vector<std::string> all;
      for (int f = 0; f < k; ++f) {
        const auto [tr, va] = fold_slices(fa, f);
        EXPECT_FALSE(va.empty());
        EXPECT_EQ(tr.size() + va.size(), n);
        all.insert(all.end(), va.begin(), va.end());
      }
      std::vector<std::string> ids;
      for (const auto& r : d) ids.push_back(r.patch_id);
      std::sort(all.begin(), all.end());
      std::sort(ids.begin(), ids.end());
      EXPECT_EQ(all, ids);

      std::array<int, kNumStrata> size{};
      for (const auto& r : d) ++size[stratum_index(r)];
      const auto c = stratum_counts(d, fa);
      for (int s = 0; s < kNumStrata; ++s) {
        int lo = 1 << 30, hi = -1;
        for (int f = 0; f < k; ++f) {
          lo = std::min(lo, c[f][s]);
          hi = std::max(hi, c[f][s]);
          EXPECT_LT(std::abs(c[f][s] - static_cast<double>(size[s]) / k), 1.0 + 1.0 / k);
        }
        EXPECT_LE(hi - lo, 1);
      }
    }
  }
}

TEST(StratifiedKFold, SmallDatasetsFillEveryFold) {
  // strata of sizes 3, 3, 2, 2 with k = 7: starting every stratum at a fixed
  // offset would leave folds empty
  Dataset d;
  const std::array<std::array<ClassLabel, 3>, 4> experts = {{{A, A, N}, {A, A, A}, {N, N, A}, {N, N, N}}};
  const int sizes[4] = {3, 3, 2, 2};
  for (int s = 0; s < 4; ++s)
    for (int i = 0; i < sizes[s]; ++i) d.push_back(make_record("s" + std::to_string(s) + "_" + std::to_string(i), experts[s], test_domain()));
  for (int k = 2; k <= 10; ++k) {
    const auto fa = stratified_kfold(d, k, 1);
    std::vector<int> size(k, 0);
    for (int f : fa.folds) ++size[f];
    EXPECT_EQ(*std::min_element(size.begin(), size.end()), 10 / k) << "k=" << k;
    EXPECT_LE(*std::max_element(size.begin(), size.end()) - *std::min_element(size.begin(), size.end()), 1);
  }
}

TEST(StratifiedKFold, SeedChangesMembersNotCounts) {
  const auto d = labelled(400, 3);
  const auto a = stratified_kfold(d, 5, 1);
  const auto b = stratified_kfold(d, 5, 2);
  EXPECT_NE(a.folds, b.folds);
  EXPECT_EQ(stratum_counts(d, a), stratum_counts(d, b));
}

TEST(StratifiedKFold, DeterministicSerialization) {
  const auto d = labelled(137, 8);
  EXPECT_EQ(folds_to_csv(stratified_kfold(d, 5, 9)), folds_to_csv(stratified_kfold(d, 5, 9)));
}

TEST(FoldSlices, FixtureSizesAndOrder) {
  const auto d = twenty_records();
  const auto fa = stratified_kfold(d, 5, 0);
  const auto [tr, va] = fold_slices(fa, 0);
  EXPECT_EQ(va.size(), 4u);
  EXPECT_EQ(tr.size(), 16u);
  // both slices keep manifest order
  auto pos = [](const std::string& id) { return std::stoi(id.substr(1)); };
  for (std::size_t i = 1; i < tr.size(); ++i) EXPECT_LT(pos(tr[i - 1]), pos(tr[i]));
  for (std::size_t i = 1; i < va.size(); ++i) EXPECT_LT(pos(va[i - 1]), pos(va[i]));
  std::set<std::string> both(tr.begin(), tr.end());
  for (const auto& v : va) EXPECT_TRUE(both.insert(v).second);
  EXPECT_EQ(both.size(), 20u);
}

TEST(FoldSlices, OutOfRange) {
  const auto fa = stratified_kfold(twenty_records(), 5, 0);
  for (int f : {5, -1, 99}) {
    try {
      fold_slices(fa, f);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::FoldOutOfRange);
      EXPECT_TRUE(e.is_validation());
    }
  }
}

TEST(FoldFile, RoundTripWithHeaderComment) {
  const auto d = labelled(50, 4);
  const auto fa = stratified_kfold(d, 5, 77);
  TempDir dir("folds");
  write_folds(fa, dir / "folds.csv");
  const auto text = csv::read_text(dir / "folds.csv");
  EXPECT_EQ(text.rfind("# k=5 seed=77\npatch_id,fold\n", 0), 0u);
  EXPECT_EQ(read_folds(dir / "folds.csv"), fa);
}

TEST(FoldFile, IndicesOfAndUnknownId) {
  const auto d = twenty_records();
  EXPECT_EQ(indices_of(d, {"r3", "r0"}), (std::vector<std::size_t>{3, 0}));
  EXPECT_THROW(indices_of(d, {"zzz"}), Error);
  const auto fa = stratified_kfold(d, 5, 0);
  EXPECT_THROW(fa.fold_of("zzz"), Error);
}
