#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/rng.hpp"

namespace mitoclass {

/// H x W x C image in row-major HWC order.
struct PixelTensor {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  PixelTensor() = default;
  PixelTensor(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  std::size_t offset(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  double& at(int y, int x, int c) noexcept { return data[offset(y, x, c)]; }
  double at(int y, int x, int c) const noexcept { return data[offset(y, x, c)]; }
  bool empty() const noexcept { return data.empty(); }

  bool operator==(const PixelTensor&) const = default;
};

inline PixelTensor from_rgb8(std::span<const std::uint8_t> rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3)
    throw Error(ErrorCode::ShapeMismatch, "rgb buffer size does not match dimensions");
  PixelTensor t(height, width, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) t.data[i] = rgb[i] / 255.0;
  return t;
}

inline PixelTensor from_patch(const PatchRecord& r) {
  if (r.pixels.size() != kPatchBytes) throw Error(ErrorCode::UnreadableImage, r.patch_id + ": pixels not loaded");
  return from_rgb8(r.pixels, kPatchSize, kPatchSize);
}

// ---------------------------------------------------------------------------
// Kernels

/// Bilinear resize with half-pixel centres: src = (dst + 0.5) * in/out - 0.5,
/// clamped to the valid range on each axis.
inline PixelTensor resize_bilinear(const PixelTensor& img, int out_h, int out_w) {
  if (img.empty() || img.height <= 0 || img.width <= 0)
    throw Error(ErrorCode::ZeroDimension, "resize of an empty image");
  if (out_h <= 0 || out_w <= 0) throw Error(ErrorCode::ZeroDimension, "resize target has a zero dimension");
  PixelTensor out(out_h, out_w, img.channels);
  const double sy = static_cast<double>(img.height) / out_h;
  const double sx = static_cast<double>(img.width) / out_w;
  std::vector<int> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (int x = 0; x < out_w; ++x) {
    const double src = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
    x0[x] = static_cast<int>(src);
    x1[x] = std::min(x0[x] + 1, img.width - 1);
    fx[x] = src - x0[x];
  }
  for (int y = 0; y < out_h; ++y) {
    const double src = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(src);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = src - y0;
    for (int x = 0; x < out_w; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(y0, x0[x], c) * (1.0 - fx[x]) + img.at(y0, x1[x], c) * fx[x];
        const double bot = img.at(y1, x0[x], c) * (1.0 - fx[x]) + img.at(y1, x1[x], c) * fx[x];
        out.at(y, x, c) = top * (1.0 - fy) + bot * fy;
      }
    }
  }
  return out;
}

enum class FlipAxis { horizontal, vertical };

inline PixelTensor flip(const PixelTensor& img, FlipAxis axis) {
  PixelTensor out(img.height, img.width, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const int sy = axis == FlipAxis::vertical ? img.height - 1 - y : y;
      const int sx = axis == FlipAxis::horizontal ? img.width - 1 - x : x;
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

/// Rotates content counter-clockwise (as displayed, y pointing down) by
/// `angle_deg` about the image centre. Bilinear sampling; neighbours outside
/// the image contribute 0.
inline PixelTensor rotate(const PixelTensor& img, double angle_deg) {
  double c, s;
  const double quarter = angle_deg / 90.0;
  if (quarter == std::floor(quarter)) {
    // exact lattice mapping for multiples of 90 degrees
    const int q = static_cast<int>(((static_cast<long long>(quarter) % 4) + 4) % 4);
    constexpr std::array<std::array<double, 2>, 4> cs = {{{1, 0}, {0, 1}, {-1, 0}, {0, -1}}};
    c = cs[q][0];
    s = cs[q][1];
  } else {
    const double rad = angle_deg * std::numbers::pi / 180.0;
    c = std::cos(rad);
    s = std::sin(rad);
  }
  PixelTensor out(img.height, img.width, img.channels, 0.0);
  const double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + c * dx - s * dy;
      const double sy = cy + s * dx + c * dy;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const double ax = sx - fx0, ay = sy - fy0;
      if (x0 < -1 || y0 < -1 || x0 >= img.width || y0 >= img.height) continue;
      const std::array<std::array<double, 3>, 4> taps = {{{0, 0, (1 - ax) * (1 - ay)},
                                                          {1, 0, ax * (1 - ay)},
                                                          {0, 1, (1 - ax) * ay},
                                                          {1, 1, ax * ay}}};
      for (int ch = 0; ch < img.channels; ++ch) {
        double v = 0.0;
        for (const auto& t : taps) {
          const int px = x0 + static_cast<int>(t[0]), py = y0 + static_cast<int>(t[1]);
          if (t[2] == 0.0 || px < 0 || py < 0 || px >= img.width || py >= img.height) continue;
          v += t[2] * img.at(py, px, ch);
        }
        out.at(y, x, ch) = v;
      }
    }
  }
  return out;
}

inline constexpr std::array<double, 3> kLumaWeights = {0.299, 0.587, 0.114};

inline double luma(double r, double g, double b) noexcept {
  return kLumaWeights[0] * r + kLumaWeights[1] * g + kLumaWeights[2] * b;
}

/// Brightness, then contrast (around the mean luma of the whole image), then
/// saturation (around each pixel's luma). Clamped to [0,1] after every step.
inline PixelTensor color_jitter(const PixelTensor& img, double f_brightness, double f_contrast, double f_saturation) {
  if (img.channels != 3) throw Error(ErrorCode::ShapeMismatch, "color_jitter needs a 3-channel RGB image");
  if (!(f_brightness > 0.0) || !(f_contrast > 0.0) || f_saturation < 0.0)
    throw Error(ErrorCode::NonPositiveFactor, "jitter factors must be positive");
  PixelTensor out = img;
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  for (double& v : out.data) v = clamp01(v * f_brightness);

  double mean_gray = 0.0;
  const std::size_t n = static_cast<std::size_t>(out.height) * out.width;
  for (std::size_t i = 0; i < n; ++i)
    mean_gray += luma(out.data[3 * i], out.data[3 * i + 1], out.data[3 * i + 2]);
  mean_gray /= static_cast<double>(n);
  for (double& v : out.data) v = clamp01(mean_gray + f_contrast * (v - mean_gray));

  for (std::size_t i = 0; i < n; ++i) {
    double* p = &out.data[3 * i];
    const double l = luma(p[0], p[1], p[2]);
    for (int c = 0; c < 3; ++c) p[c] = clamp01(l + f_saturation * (p[c] - l));
  }
  return out;
}

inline PixelTensor normalize(const PixelTensor& img, const std::array<double, 3>& mean, const std::array<double, 3>& std_dev) {
  if (img.channels != 3) throw Error(ErrorCode::ShapeMismatch, "normalize needs 3 channels");
  for (double s : std_dev)
    if (!(s > 0.0)) throw Error(ErrorCode::ZeroStd, "standard deviation must be positive");
  PixelTensor out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const auto c = i % 3;
    out.data[i] = (out.data[i] - mean[c]) / std_dev[c];
  }
  return out;
}

/// Centered crop, offset floor((dim - size) / 2) on each axis.
inline PixelTensor context_crop(const PixelTensor& img, int size) {
  if (size <= 0) throw Error(ErrorCode::ZeroDimension, "crop size must be positive");
  if (size > std::min(img.height, img.width))
    throw Error(ErrorCode::CropTooLarge, "crop " + std::to_string(size) + " exceeds " + std::to_string(img.height) + "x" +
                                             std::to_string(img.width));
  const int oy = (img.height - size) / 2, ox = (img.width - size) / 2;
  PixelTensor out(size, size, img.channels);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(y + oy, x + ox, c);
  return out;
}

/// Concatenates channels of two equally sized images.
inline PixelTensor stack_channels(const PixelTensor& a, const PixelTensor& b) {
  if (a.height != b.height || a.width != b.width) throw Error(ErrorCode::ShapeMismatch, "stack of differently sized images");
  PixelTensor out(a.height, a.width, a.channels + b.channels);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      for (int c = 0; c < a.channels; ++c) out.at(y, x, c) = a.at(y, x, c);
      for (int c = 0; c < b.channels; ++c) out.at(y, x, a.channels + c) = b.at(y, x, c);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Stain deconvolution

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Mat3 inverse3(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  if (det == 0.0) throw Error(ErrorCode::Numeric, "singular 3x3 matrix");
  Mat3 inv;
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

/// Rows are unit optical-density vectors of hematoxylin, eosin and DAB.
struct StainMatrix {
  Mat3 rows;
  Mat3 inverse;

  /// Ruifrok & Johnson H&E-DAB vectors, row-normalised.
  static StainMatrix ruifrok_johnson() {
    StainMatrix s;
    s.rows = {{{0.65, 0.70, 0.29}, {0.07, 0.99, 0.11}, {0.27, 0.57, 0.78}}};
    for (auto& r : s.rows) {
      const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
      for (double& v : r) v /= n;
    }
    s.inverse = inverse3(s.rows);
    return s;
  }
};

inline const StainMatrix& default_stains() {
  static const StainMatrix s = StainMatrix::ruifrok_johnson();
  return s;
}

constexpr double kOdFloor = 1e-6;

/// Optical density -log10(max(v, 1e-6)) unmixed into stain concentrations,
/// without clamping.
inline std::array<double, 3> hed_from_rgb_pixel(const std::array<double, 3>& rgb, const StainMatrix& s = default_stains()) {
  std::array<double, 3> od;
  for (int c = 0; c < 3; ++c) od[c] = -std::log10(std::max(rgb[c], kOdFloor));
  std::array<double, 3> hed{};
  for (int j = 0; j < 3; ++j)
    for (int c = 0; c < 3; ++c) hed[j] += od[c] * s.inverse[c][j];
  return hed;
}

/// Forward stain model: OD = concentrations * rows, RGB = 10^-OD.
inline std::array<double, 3> rgb_from_hed_pixel(const std::array<double, 3>& hed, const StainMatrix& s = default_stains()) {
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) {
    double od = 0.0;
    for (int j = 0; j < 3; ++j) od += hed[j] * s.rows[j][c];
    rgb[c] = std::pow(10.0, -od);
  }
  return rgb;
}

inline PixelTensor rgb_to_hed(const PixelTensor& img, bool clamp_negative = true, const StainMatrix& s = default_stains()) {
  if (img.channels != 3) throw Error(ErrorCode::ShapeMismatch, "rgb_to_hed needs 3 channels");
  PixelTensor out(img.height, img.width, 3);
  for (std::size_t i = 0; i < out.data.size(); i += 3) {
    auto hed = hed_from_rgb_pixel({img.data[i], img.data[i + 1], img.data[i + 2]}, s);
    for (int j = 0; j < 3; ++j) out.data[i + j] = clamp_negative ? std::max(0.0, hed[j]) : hed[j];
  }
  return out;
}

inline PixelTensor hed_to_rgb(const PixelTensor& hed, const StainMatrix& s = default_stains()) {
  if (hed.channels != 3) throw Error(ErrorCode::ShapeMismatch, "hed_to_rgb needs 3 channels");
  PixelTensor out(hed.height, hed.width, 3);
  for (std::size_t i = 0; i < out.data.size(); i += 3) {
    auto rgb = rgb_from_hed_pixel({hed.data[i], hed.data[i + 1], hed.data[i + 2]}, s);
    for (int c = 0; c < 3; ++c) out.data[i + c] = rgb[c];
  }
  return out;
}

/// Per-channel standardisation statistics of the (clamped) HED planes.
struct HedStats {
  std::array<double, 3> mean = {0.0, 0.0, 0.0};
  std::array<double, 3> std_dev = {1.0, 1.0, 1.0};

  bool operator==(const HedStats&) const = default;
};

/// Population mean/std over every pixel of every patch. Computed once per
/// dataset, before training; channels with zero spread keep std 1.
inline HedStats compute_hed_stats(const Dataset& data) {
  std::array<double, 3> sum{}, sumsq{};
  std::size_t n = 0;
  for (const auto& r : data) {
    const PixelTensor hed = rgb_to_hed(from_patch(r));
    for (std::size_t i = 0; i < hed.data.size(); i += 3)
      for (int c = 0; c < 3; ++c) {
        sum[c] += hed.data[i + c];
        sumsq[c] += hed.data[i + c] * hed.data[i + c];
      }
    n += hed.data.size() / 3;
  }
  HedStats st;
  if (n == 0) return st;
  for (int c = 0; c < 3; ++c) {
    st.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(0.0, sumsq[c] / static_cast<double>(n) - st.mean[c] * st.mean[c]);
    st.std_dev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return st;
}

// ---------------------------------------------------------------------------
// Augmentation policy

enum class InputMode { rgb, rgb_hed, crop_rgb_hed };

inline std::string_view to_string(InputMode m) {
  switch (m) {
    case InputMode::rgb: return "rgb";
    case InputMode::rgb_hed: return "rgb_hed";
    case InputMode::crop_rgb_hed: return "crop_rgb_hed";
  }
  return "rgb";
}

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "rgb") return InputMode::rgb;
  if (s == "rgb_hed") return InputMode::rgb_hed;
  if (s == "crop_rgb_hed") return InputMode::crop_rgb_hed;
  throw Error(ErrorCode::InvalidConfig, "unknown input mode '" + std::string(s) + "'");
}

constexpr int input_channels(InputMode m) noexcept { return m == InputMode::rgb ? 3 : 6; }

constexpr int kContextCrop = 80;

struct AugPolicy {
  int resize_to = 224;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double max_rotation_deg = 10.0;
  double brightness_delta = 0.2;
  double contrast_delta = 0.3;
  double saturation_delta = 0.1;
  std::array<double, 3> normalize_mean = {0.485, 0.456, 0.406};
  std::array<double, 3> normalize_std = {0.229, 0.224, 0.225};
  bool enabled = true;

  void validate() const {
    if (resize_to <= 0) throw Error(ErrorCode::InvalidConfig, "resize_to must be positive");
    for (double p : {p_hflip, p_vflip})
      if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidConfig, "flip probability outside [0,1]");
    if (!(max_rotation_deg >= 0.0)) throw Error(ErrorCode::InvalidConfig, "max_rotation_deg must be >= 0");
    for (double d : {brightness_delta, contrast_delta, saturation_delta})
      if (!(d >= 0.0 && d < 1.0)) throw Error(ErrorCode::InvalidConfig, "jitter deltas must lie in [0,1)");
    for (double s : normalize_std)
      if (!(s > 0.0)) throw Error(ErrorCode::InvalidConfig, "normalize_std must be positive");
  }

  AugPolicy disabled() const {
    AugPolicy p = *this;
    p.enabled = false;
    return p;
  }
};

/// Random parameters drawn for one patch, in draw order.
struct AugDraw {
  bool hflip = false;
  bool vflip = false;
  double angle_deg = 0.0;
  double f_brightness = 1.0;
  double f_contrast = 1.0;
  double f_saturation = 1.0;
};

inline AugDraw draw_augmentation(const AugPolicy& p, Rng& rng) {
  AugDraw d;
  d.hflip = rng.bernoulli(p.p_hflip);
  d.vflip = rng.bernoulli(p.p_vflip);
  d.angle_deg = rng.uniform(-p.max_rotation_deg, p.max_rotation_deg);
  d.f_brightness = rng.uniform(1.0 - p.brightness_delta, 1.0 + p.brightness_delta);
  d.f_contrast = rng.uniform(1.0 - p.contrast_delta, 1.0 + p.contrast_delta);
  d.f_saturation = rng.uniform(1.0 - p.saturation_delta, 1.0 + p.saturation_delta);
  return d;
}

/// Stream seed for a patch in a given epoch.
inline std::uint64_t augmentation_seed(std::uint64_t global_seed, std::string_view patch_id, std::uint64_t epoch) {
  return derive_seed(derive_seed(global_seed, fnv1a64(patch_id)), epoch);
}

/// [optional 80 px context crop] -> resize -> flips -> rotation -> jitter ->
/// normalise. HED planes (6-channel modes) come from the jittered RGB before
/// normalisation and are standardised with `hed`. With the policy disabled no
/// random numbers are drawn.
inline PixelTensor apply_policy(const PixelTensor& input, const AugPolicy& policy, InputMode mode,
                                std::uint64_t stream_seed, const HedStats& hed = {}) {
  PixelTensor x = mode == InputMode::crop_rgb_hed ? context_crop(input, kContextCrop) : input;
  x = resize_bilinear(x, policy.resize_to, policy.resize_to);
  if (policy.enabled) {
    Rng rng(stream_seed);
    const AugDraw d = draw_augmentation(policy, rng);
    if (d.hflip) x = flip(x, FlipAxis::horizontal);
    if (d.vflip) x = flip(x, FlipAxis::vertical);
    x = rotate(x, d.angle_deg);
    x = color_jitter(x, d.f_brightness, d.f_contrast, d.f_saturation);
  }
  PixelTensor rgb = normalize(x, policy.normalize_mean, policy.normalize_std);
  if (mode == InputMode::rgb) return rgb;
  PixelTensor h = rgb_to_hed(x);
  for (std::size_t i = 0; i < h.data.size(); ++i) {
    const auto c = i % 3;
    h.data[i] = (h.data[i] - hed.mean[c]) / hed.std_dev[c];
  }
  return stack_channels(rgb, h);
}

inline PixelTensor apply_policy(const PatchRecord& patch, const AugPolicy& policy, InputMode mode,
                                std::uint64_t stream_seed, const HedStats& hed = {}) {
  return apply_policy(from_patch(patch), policy, mode, stream_seed, hed);
}

/// Everything needed to turn a stored patch into a model input.
struct PipelineSpec {
  AugPolicy policy;
  InputMode mode = InputMode::rgb;
  HedStats hed;
};

/// Desk profile: 64x64 model inputs, default augmentation otherwise.
inline AugPolicy desk_policy() {
  AugPolicy p;
  p.resize_to = 64;
  return p;
}

inline nlohmann::json to_json(const AugPolicy& p) {
  return {{"resize_to", p.resize_to},
          {"p_hflip", p.p_hflip},
          {"p_vflip", p.p_vflip},
          {"max_rotation_deg", p.max_rotation_deg},
          {"brightness_delta", p.brightness_delta},
          {"contrast_delta", p.contrast_delta},
          {"saturation_delta", p.saturation_delta},
          {"normalize_mean", p.normalize_mean},
          {"normalize_std", p.normalize_std},
          {"enabled", p.enabled}};
}

inline AugPolicy policy_from_json(const nlohmann::json& j, AugPolicy p = {}) {
  p.resize_to = j.value("resize_to", p.resize_to);
  p.p_hflip = j.value("p_hflip", p.p_hflip);
  p.p_vflip = j.value("p_vflip", p.p_vflip);
  p.max_rotation_deg = j.value("max_rotation_deg", p.max_rotation_deg);
  p.brightness_delta = j.value("brightness_delta", p.brightness_delta);
  p.contrast_delta = j.value("contrast_delta", p.contrast_delta);
  p.saturation_delta = j.value("saturation_delta", p.saturation_delta);
  p.normalize_mean = j.value("normalize_mean", p.normalize_mean);
  p.normalize_std = j.value("normalize_std", p.normalize_std);
  p.enabled = j.value("enabled", p.enabled);
  return p;
}

inline nlohmann::json to_json(const HedStats& h) { return {{"mean", h.mean}, {"std", h.std_dev}}; }

inline HedStats hed_stats_from_json(const nlohmann::json& j) {
  HedStats h;
  h.mean = j.value("mean", h.mean);
  h.std_dev = j.value("std", h.std_dev);
  return h;
}

inline nlohmann::json to_json(const PipelineSpec& p) {
  return {{"policy", to_json(p.policy)}, {"input_mode", to_string(p.mode)}, {"hed_stats", to_json(p.hed)}};
}

inline PipelineSpec pipeline_from_json(const nlohmann::json& j) {
  PipelineSpec p;
  if (j.contains("policy")) p.policy = policy_from_json(j.at("policy"));
  p.mode = parse_input_mode(j.value("input_mode", std::string("rgb")));
  if (j.contains("hed_stats")) p.hed = hed_stats_from_json(j.at("hed_stats"));
  return p;
}

}  // namespace mitoclass
