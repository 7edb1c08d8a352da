#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "mitoclass/csv.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/png_io.hpp"
#include "mitoclass/rng.hpp"

namespace mitoclass {

/// Phenotype codes. AMF = 0 and NMF = 1 everywhere: loss targets, metrics, files.
enum class ClassLabel : std::uint8_t { AMF = 0, NMF = 1 };

/// Annotator agreement codes: Hard = 0 (any disagreement), Easy = 1 (unanimous).
enum class HardnessLabel : std::uint8_t { Hard = 0, Easy = 1 };

enum class Species : std::uint8_t { human, canine };

constexpr int code(ClassLabel c) noexcept { return static_cast<int>(c); }
constexpr int code(HardnessLabel h) noexcept { return static_cast<int>(h); }

inline std::string_view to_string(Species s) { return s == Species::human ? "human" : "canine"; }

inline Species parse_species(std::string_view s) {
  if (s == "human") return Species::human;
  if (s == "canine") return Species::canine;
  throw Error(ErrorCode::BadField, "species must be 'human' or 'canine', got '" + std::string(s) + "'");
}

constexpr int kPatchSize = 128;
constexpr std::size_t kPatchBytes = static_cast<std::size_t>(kPatchSize) * kPatchSize * 3;

struct DomainMeta {
  std::string tumor_type;
  Species species = Species::human;
  std::string scanner;
  std::string lab;

  std::string domain_id() const {
    return tumor_type + "|" + std::string(to_string(species)) + "|" + scanner + "|" + lab;
  }

  bool operator==(const DomainMeta&) const = default;
};

constexpr ClassLabel consensus_label(ClassLabel e1, ClassLabel e2, ClassLabel e3) noexcept {
  return code(e1) + code(e2) + code(e3) >= 2 ? ClassLabel::NMF : ClassLabel::AMF;
}

constexpr HardnessLabel hardness_label(ClassLabel e1, ClassLabel e2, ClassLabel e3) noexcept {
  return (e1 == e2 && e2 == e3) ? HardnessLabel::Easy : HardnessLabel::Hard;
}

struct PatchRecord {
  std::string patch_id;
  std::string image_path;             // relative to the manifest directory
  std::vector<std::uint8_t> pixels;   // kPatchSize x kPatchSize x 3, row-major RGB
  std::array<ClassLabel, 3> expert_labels{};
  ClassLabel consensus = ClassLabel::AMF;
  HardnessLabel hardness = HardnessLabel::Easy;
  DomainMeta domain;

  bool operator==(const PatchRecord&) const = default;
};

using Dataset = std::vector<PatchRecord>;

/// Builds a record with consensus and hardness derived from the expert labels.
inline PatchRecord make_record(std::string patch_id, std::array<ClassLabel, 3> experts, DomainMeta domain,
                               std::vector<std::uint8_t> pixels = {}, std::string image_path = {}) {
  PatchRecord r;
  r.patch_id = std::move(patch_id);
  r.image_path = std::move(image_path);
  r.pixels = std::move(pixels);
  r.expert_labels = experts;
  r.consensus = consensus_label(experts[0], experts[1], experts[2]);
  r.hardness = hardness_label(experts[0], experts[1], experts[2]);
  r.domain = std::move(domain);
  return r;
}

// ---------------------------------------------------------------------------
// Manifest I/O

inline constexpr std::array<std::string_view, 9> kManifestColumns = {
    "patch_id", "image_path", "expert1", "expert2", "expert3", "tumor_type", "species", "scanner", "lab"};

struct LoadOptions {
  bool load_pixels = true;
};

inline Dataset load_manifest(const std::filesystem::path& path, const LoadOptions& opts = {}) {
  const csv::Table table = csv::read_file(path);
  std::array<int, kManifestColumns.size()> col{};
  for (std::size_t i = 0; i < kManifestColumns.size(); ++i) {
    col[i] = table.column(kManifestColumns[i]);
    if (col[i] < 0)
      throw Error(ErrorCode::MissingColumn,
                  path.string() + ": header lacks column '" + std::string(kManifestColumns[i]) + "'");
  }
  const auto base = path.parent_path();
  Dataset out;
  out.reserve(table.rows.size());
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = "row " + std::to_string(table.line_numbers[r]);
    auto field = [&](std::size_t i) -> const std::string& {
      const auto c = static_cast<std::size_t>(col[i]);
      if (c >= row.size())
        throw Error(ErrorCode::MissingColumn, where + ": missing value for '" + std::string(kManifestColumns[i]) + "'");
      return row[c];
    };
    std::array<ClassLabel, 3> experts{};
    for (int e = 0; e < 3; ++e) {
      const auto& v = field(2 + e);
      if (v != "0" && v != "1")
        throw Error(ErrorCode::BadLabelCode,
                    where + ", column expert" + std::to_string(e + 1) + ": label code '" + v + "' not in {0,1}");
      experts[e] = v == "0" ? ClassLabel::AMF : ClassLabel::NMF;
    }
    const std::string& id = field(0);
    if (id.empty()) throw Error(ErrorCode::BadField, where + ": empty patch_id");
    if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, where + ": duplicate patch_id '" + id + "'");
    DomainMeta dom;
    dom.tumor_type = field(5);
    try {
      dom.species = parse_species(field(6));
    } catch (const Error& e) {
      throw Error(ErrorCode::BadField, where + ", column species: " + e.what());
    }
    dom.scanner = field(7);
    dom.lab = field(8);

    std::vector<std::uint8_t> pixels;
    const std::string& image = field(1);
    if (opts.load_pixels) {
      png::Image img;
      try {
        img = png::read_rgb(base / image);
      } catch (const Error& e) {
        throw Error(ErrorCode::UnreadableImage, where + ", column image_path: " + e.what());
      }
      if (img.width != kPatchSize || img.height != kPatchSize)
        throw Error(ErrorCode::UnreadableImage, where + ", column image_path: " + image + " is " +
                                                    std::to_string(img.width) + "x" + std::to_string(img.height) +
                                                    ", expected 128x128");
      pixels = std::move(img.rgb);
    }
    out.push_back(make_record(id, experts, std::move(dom), std::move(pixels), image));
  }
  return out;
}

/// Writes `manifest_name` into `dir`, plus a PNG for every record that carries
/// pixels (at its image_path, or images/<patch_id>.png when that is empty).
inline void write_manifest(const Dataset& data, const std::filesystem::path& dir,
                           const std::string& manifest_name = "manifest.csv") {
  std::string text = "patch_id,image_path,expert1,expert2,expert3,tumor_type,species,scanner,lab\n";
  for (const auto& r : data) {
    const std::string image = r.image_path.empty() ? "images/" + r.patch_id + ".png" : r.image_path;
    if (!r.pixels.empty()) {
      if (r.pixels.size() != kPatchBytes)
        throw Error(ErrorCode::InvalidConfig, r.patch_id + ": pixel buffer is not 128x128x3");
      png::write_rgb(dir / image, r.pixels.data(), kPatchSize, kPatchSize);
    }
    text += csv::join({r.patch_id, image, std::to_string(code(r.expert_labels[0])),
                       std::to_string(code(r.expert_labels[1])), std::to_string(code(r.expert_labels[2])),
                       r.domain.tumor_type, std::string(to_string(r.domain.species)), r.domain.scanner,
                       r.domain.lab}) +
            "\n";
  }
  csv::write_text(dir / manifest_name, text);
}

// ---------------------------------------------------------------------------
// Synthetic patches

struct SyntheticConfig {
  std::size_t n_patches = 200;
  double amf_rate = 0.15;
  double hard_rate = 0.137;
  std::size_t n_domains = 4;
  std::uint64_t seed = 0;
};

/// Ground truth planted by generate_synthetic; written as truth.csv.
struct SyntheticTruth {
  std::string patch_id;
  ClassLabel true_class;
  bool planted_hard;
};

struct SyntheticDataset {
  Dataset records;
  std::vector<SyntheticTruth> truth;
};

/// floor(x + 0.5): round half up, stated so planted counts are portable.
inline std::size_t round_half_up(double x) { return static_cast<std::size_t>(std::floor(x + 0.5)); }

namespace synth_detail {

inline constexpr std::array<std::string_view, 7> kTumors = {
    "breast_carcinoma", "lung_carcinoma",  "lymphoma",        "cutaneous_mast_cell_tumor",
    "melanoma",         "soft_tissue_sarcoma", "neuroendocrine_tumor"};
inline constexpr std::array<std::string_view, 5> kScanners = {"3DHistech", "Hamamatsu_XR", "Hamamatsu_S360",
                                                              "Aperio_CS2", "Leica_GT450"};
inline constexpr std::array<std::string_view, 4> kLabs = {"VMU", "UPenn", "FUB", "AMC"};

inline DomainMeta domain_meta(std::size_t d) {
  DomainMeta m;
  m.tumor_type = std::string(kTumors[d % kTumors.size()]);
  m.species = d % 3 == 0 ? Species::human : Species::canine;
  m.scanner = std::string(kScanners[d % kScanners.size()]);
  m.lab = std::string(kLabs[d % kLabs.size()]);
  if (d >= 420) m.lab += "_" + std::to_string(d / 420);
  return m;
}

struct DomainTint {
  std::array<double, 3> gain;
};

inline DomainTint domain_tint(std::uint64_t seed, std::size_t d) {
  Rng rng(derive_seed(derive_seed(seed, 0xd0d0ULL), d));
  const double brightness = rng.uniform(0.90, 1.05);
  DomainTint t;
  for (auto& g : t.gain) g = brightness * rng.uniform(0.93, 1.07);
  return t;
}

struct Vec2 {
  double x, y;
};

// Unit vector via the rational parametrisation of the circle; no libm calls.
inline Vec2 random_unit(Rng& rng) {
  const double t = rng.uniform(-1.0, 1.0);
  const double d = 1.0 + t * t;
  Vec2 v{(1.0 - t * t) / d, 2.0 * t / d};
  if (rng.bernoulli(0.5)) v = {-v.x, -v.y};
  return v;
}

inline Vec2 rotate(Vec2 v, double c, double s) { return {c * v.x - s * v.y, s * v.x + c * v.y}; }

struct Lobe {
  Vec2 centre;
  double radius;
};

// cos/sin of 2*pi/k for k = 3, 4, 5.
inline constexpr std::array<std::array<double, 2>, 3> kPolyRot = {{
    {-0.5, 0.86602540378443864676},
    {0.0, 1.0},
    {0.30901699437494742410, 0.95105651629515357212},
}};

}  // namespace synth_detail

/// Renders one 128x128 patch: pinkish stroma, dark nuclear material made of
/// lobes (2 opposed lobes for NMF, 3-5 irregular lobes for AMF), per-domain
/// tint and uniform pixel noise. Only +,-,*,/ and sqrt are used.
inline std::vector<std::uint8_t> render_patch(Rng& rng, ClassLabel cls, bool hard,
                                              const synth_detail::DomainTint& tint) {
  using namespace synth_detail;
  const double cx = 63.5 + rng.uniform(-6.0, 6.0);
  const double cy = 63.5 + rng.uniform(-6.0, 6.0);
  const Vec2 axis = random_unit(rng);
  const double spread = rng.uniform(13.0, 17.0);
  const double radius = rng.uniform(9.5, 10.5);

  std::vector<Lobe> lobes;
  if (cls == ClassLabel::NMF) {
    lobes.push_back({{cx + axis.x * spread, cy + axis.y * spread}, radius});
    lobes.push_back({{cx - axis.x * spread, cy - axis.y * spread}, radius});
  } else {
    const auto k = 3 + static_cast<std::size_t>(rng.index(3));
    const auto& rot = kPolyRot[k - 3];
    Vec2 dir = axis;
    for (std::size_t j = 0; j < k; ++j) {
      // small irregular angular jitter and distance wobble per lobe
      const double t = rng.uniform(-0.15, 0.15);
      const double d = 1.0 + t * t;
      const Vec2 jittered = rotate(dir, (1.0 - t * t) / d, 2.0 * t / d);
      const double dist = spread * rng.uniform(0.85, 1.15);
      lobes.push_back({{cx + jittered.x * dist, cy + jittered.y * dist}, radius});
      dir = rotate(dir, rot[0], rot[1]);
    }
  }

  constexpr std::array<double, 3> stroma = {0.91, 0.72, 0.83};
  constexpr std::array<double, 3> chromatin = {0.30, 0.16, 0.45};
  const double amp = hard ? 0.08 : 0.04;

  std::vector<std::uint8_t> px(kPatchBytes);
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      double coverage = 0.0;
      for (const auto& l : lobes) {
        const double dx = x - l.centre.x, dy = y - l.centre.y;
        const double q = (dx * dx + dy * dy) / (l.radius * l.radius);
        if (q < 1.0) coverage = std::max(coverage, std::min(1.0, 2.5 * (1.0 - q)));
      }
      for (int c = 0; c < 3; ++c) {
        double v = (stroma[c] * (1.0 - coverage) + chromatin[c] * coverage) * tint.gain[c];
        v += amp * (2.0 * rng.uniform() - 1.0);
        v = std::clamp(v, 0.0, 1.0);
        px[(static_cast<std::size_t>(y) * kPatchSize + x) * 3 + c] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
      }
    }
  }
  return px;
}

inline void validate(const SyntheticConfig& cfg) {
  if (cfg.n_patches < 1) throw Error(ErrorCode::InvalidConfig, "n_patches must be >= 1");
  if (!(cfg.amf_rate >= 0.0 && cfg.amf_rate <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "amf_rate must lie in [0,1]");
  if (!(cfg.hard_rate >= 0.0 && cfg.hard_rate <= 1.0))
    throw Error(ErrorCode::InvalidConfig, "hard_rate must lie in [0,1]");
  if (cfg.n_domains < 1) throw Error(ErrorCode::InvalidConfig, "n_domains must be >= 1");
}

/// Deterministic in cfg.seed. Patch i draws from its own stream
/// derive_seed(seed, i), so patches can be rendered in any order.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  validate(cfg);
  const std::size_t n = cfg.n_patches;
  const std::size_t n_amf = std::min(n, round_half_up(static_cast<double>(n) * cfg.amf_rate));
  const std::size_t n_hard = std::min(n, round_half_up(static_cast<double>(n) * cfg.hard_rate));

  auto planted = [&](std::uint64_t key, std::size_t count) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(derive_seed(cfg.seed, key));
    rng.shuffle(perm);
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < count; ++i) mask[perm[i]] = true;
    return mask;
  };
  const auto is_amf = planted(0xa3fULL, n_amf);
  const auto is_hard = planted(0x4a2dULL, n_hard);

  std::vector<synth_detail::DomainTint> tints;
  for (std::size_t d = 0; d < cfg.n_domains; ++d) tints.push_back(synth_detail::domain_tint(cfg.seed, d));

  SyntheticDataset out;
  out.records.reserve(n);
  out.truth.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    const std::size_t domain = static_cast<std::size_t>(rng.index(cfg.n_domains));
    const ClassLabel truth = is_amf[i] ? ClassLabel::AMF : ClassLabel::NMF;
    const bool hard = is_hard[i];
    std::array<ClassLabel, 3> experts = {truth, truth, truth};
    if (hard) {
      const auto flipped = rng.index(3);
      experts[flipped] = truth == ClassLabel::AMF ? ClassLabel::NMF : ClassLabel::AMF;
    }
    char id[32];
    std::snprintf(id, sizeof id, "syn_%06zu", i);
    auto pixels = render_patch(rng, truth, hard, tints[domain]);
    out.records.push_back(make_record(id, experts, synth_detail::domain_meta(domain), std::move(pixels),
                                      "images/" + std::string(id) + ".png"));
    out.truth.push_back({id, truth, hard});
  }
  return out;
}

inline void write_truth(const std::vector<SyntheticTruth>& truth, const std::filesystem::path& path) {
  std::string text = "patch_id,true_class,planted_hard\n";
  for (const auto& t : truth)
    text += t.patch_id + "," + std::to_string(code(t.true_class)) + "," + (t.planted_hard ? "1" : "0") + "\n";
  csv::write_text(path, text);
}

inline std::size_t count_consensus(const Dataset& d, ClassLabel c) {
  std::size_t n = 0;
  for (const auto& r : d) n += r.consensus == c;
  return n;
}

inline std::size_t count_hardness(const Dataset& d, HardnessLabel h) {
  std::size_t n = 0;
  for (const auto& r : d) n += r.hardness == h;
  return n;
}

}  // namespace mitoclass
