#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mitoclass/csv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/rng.hpp"

namespace mitoclass {

constexpr int kNumStrata = 4;

/// 0 = AMF/Hard, 1 = AMF/Easy, 2 = NMF/Hard, 3 = NMF/Easy.
constexpr int stratum_index(const PatchRecord& r) noexcept { return 2 * code(r.consensus) + code(r.hardness); }

/// Patch ids (in manifest order) with their fold index in [0, k).
struct FoldAssignment {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> ids;
  std::vector<int> folds;

  int fold_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return folds[i];
    throw Error(ErrorCode::UnknownId, "patch_id '" + id + "' not in fold assignment");
  }

  bool operator==(const FoldAssignment&) const = default;
};

/// Within each stratum, ids are shuffled by Rng(derive_seed(seed, stratum))
/// then dealt round-robin. Each stratum starts on the fold after the one the
/// previous stratum ended on, so the whole dealing sequence is one continuous
/// cycle: per-stratum and per-fold counts both differ by at most one, and no
/// fold is empty when the dataset has at least k records.
inline FoldAssignment stratified_kfold(const Dataset& data, int k, std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::InvalidK, "dataset is empty");
  if (k < 2 || static_cast<std::size_t>(k) > data.size())
    throw Error(ErrorCode::InvalidK, "k=" + std::to_string(k) + " must lie in [2, " + std::to_string(data.size()) + "]");

  std::vector<std::vector<std::size_t>> strata(kNumStrata);
  for (std::size_t i = 0; i < data.size(); ++i) strata[stratum_index(data[i])].push_back(i);

  FoldAssignment fa;
  fa.k = k;
  fa.seed = seed;
  fa.ids.reserve(data.size());
  for (const auto& r : data) fa.ids.push_back(r.patch_id);
  fa.folds.assign(data.size(), -1);
  std::size_t next = 0;
  for (int s = 0; s < kNumStrata; ++s) {
    auto& members = strata[s];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(s)));
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      fa.folds[members[j]] = static_cast<int>((next + j) % static_cast<std::size_t>(k));
    next = (next + members.size()) % static_cast<std::size_t>(k);
  }
  return fa;
}

/// (train_ids, val_ids), each in manifest order.
inline std::pair<std::vector<std::string>, std::vector<std::string>> fold_slices(const FoldAssignment& fa, int fold) {
  if (fold < 0 || fold >= fa.k)
    throw Error(ErrorCode::FoldOutOfRange, "fold " + std::to_string(fold) + " outside [0, " + std::to_string(fa.k) + ")");
  std::pair<std::vector<std::string>, std::vector<std::string>> out;
  for (std::size_t i = 0; i < fa.ids.size(); ++i) (fa.folds[i] == fold ? out.second : out.first).push_back(fa.ids[i]);
  return out;
}

/// Maps ids to positions in `data`.
inline std::vector<std::size_t> indices_of(const Dataset& data, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> pos;
  pos.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) pos.emplace(data[i].patch_id, i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = pos.find(id);
    if (it == pos.end()) throw Error(ErrorCode::UnknownId, "patch_id '" + id + "' not in dataset");
    out.push_back(it->second);
  }
  return out;
}

inline std::string folds_to_csv(const FoldAssignment& fa) {
  std::string text = "# k=" + std::to_string(fa.k) + " seed=" + std::to_string(fa.seed) + "\npatch_id,fold\n";
  for (std::size_t i = 0; i < fa.ids.size(); ++i) text += csv::quote(fa.ids[i]) + "," + std::to_string(fa.folds[i]) + "\n";
  return text;
}

inline void write_folds(const FoldAssignment& fa, const std::filesystem::path& path) {
  csv::write_text(path, folds_to_csv(fa));
}

inline FoldAssignment read_folds(const std::filesystem::path& path) {
  const csv::Table t = csv::read_file(path);
  FoldAssignment fa;
  bool have_k = false;
  for (const auto& c : t.comments) {
    std::size_t p;
    if ((p = c.find("k=")) != std::string::npos) {
      fa.k = std::stoi(c.substr(p + 2));
      have_k = true;
    }
    if ((p = c.find("seed=")) != std::string::npos) fa.seed = std::stoull(c.substr(p + 5));
  }
  const int id_col = t.column("patch_id"), fold_col = t.column("fold");
  if (id_col < 0 || fold_col < 0) throw Error(ErrorCode::MissingColumn, path.string() + ": expected patch_id,fold header");
  int max_fold = -1;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() <= static_cast<std::size_t>(std::max(id_col, fold_col)))
      throw Error(ErrorCode::MissingColumn, path.string() + ": short row " + std::to_string(t.line_numbers[r]));
    fa.ids.push_back(row[id_col]);
    int f;
    try {
      f = std::stoi(row[fold_col]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadField, path.string() + ": bad fold on row " + std::to_string(t.line_numbers[r]));
    }
    fa.folds.push_back(f);
    max_fold = std::max(max_fold, f);
  }
  if (!have_k) fa.k = max_fold + 1;
  for (int f : fa.folds)
    if (f < 0 || f >= fa.k) throw Error(ErrorCode::FoldOutOfRange, path.string() + ": fold " + std::to_string(f) + " outside [0,k)");
  return fa;
}

}  // namespace mitoclass
