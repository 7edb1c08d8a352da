#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/losses.hpp"
#include "mitoclass/pixelpipe.hpp"
#include "mitoclass/rng.hpp"
#include "mitoclass/tensor.hpp"

namespace mitoclass {

enum class BackboneKind { desk_cnn, external };
enum class HardnessHeadMode { binary, four_class };

inline std::string_view to_string(BackboneKind b) { return b == BackboneKind::desk_cnn ? "desk_cnn" : "external"; }
inline std::string_view to_string(HardnessHeadMode m) { return m == HardnessHeadMode::binary ? "binary" : "four_class"; }

inline HardnessHeadMode parse_head_mode(std::string_view s) {
  if (s == "binary") return HardnessHeadMode::binary;
  if (s == "four_class") return HardnessHeadMode::four_class;
  throw Error(ErrorCode::InvalidConfig, "unknown hardness head mode '" + std::string(s) + "'");
}

inline BackboneKind parse_backbone(std::string_view s) {
  if (s == "desk_cnn") return BackboneKind::desk_cnn;
  if (s == "external") return BackboneKind::external;
  throw Error(ErrorCode::InvalidConfig, "unknown backbone '" + std::string(s) + "'");
}

/// Four-class hardness targets: 0 NMF easy, 1 NMF hard, 2 AMF easy, 3 AMF hard.
constexpr int four_class_target(ClassLabel c, HardnessLabel h) noexcept {
  return (c == ClassLabel::NMF ? 0 : 2) + (h == HardnessLabel::Easy ? 0 : 1);
}

struct ArchConfig {
  BackboneKind backbone = BackboneKind::desk_cnn;
  std::size_t feature_dim = 64;   // 2048 for a ResNet50 backbone
  std::size_t shared_dim = 32;    // 512 for a ResNet50 backbone
  std::size_t n_expert_heads = 3;
  HardnessHeadMode hardness_head_mode = HardnessHeadMode::binary;
  double dropout = 0.0;
  int input_channels = 3;

  std::size_t hardness_outputs() const noexcept { return hardness_head_mode == HardnessHeadMode::binary ? 1 : 4; }

  void validate() const {
    if (feature_dim == 0 || shared_dim == 0) throw Error(ErrorCode::InvalidConfig, "feature_dim and shared_dim must be > 0");
    if (n_expert_heads != 3) throw Error(ErrorCode::InvalidConfig, "exactly 3 expert heads are supported");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorCode::InvalidConfig, "dropout must lie in [0,1)");
    if (input_channels != 3 && input_channels != 6) throw Error(ErrorCode::InvalidConfig, "input_channels must be 3 or 6");
  }

  bool operator==(const ArchConfig&) const = default;
};

inline nlohmann::json to_json(const ArchConfig& a) {
  return {{"backbone", to_string(a.backbone)},
          {"feature_dim", a.feature_dim},
          {"shared_dim", a.shared_dim},
          {"n_expert_heads", a.n_expert_heads},
          {"hardness_head_mode", to_string(a.hardness_head_mode)},
          {"dropout", a.dropout},
          {"input_channels", a.input_channels}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.backbone = parse_backbone(j.value("backbone", std::string("desk_cnn")));
  a.feature_dim = j.value("feature_dim", a.feature_dim);
  a.shared_dim = j.value("shared_dim", a.shared_dim);
  a.n_expert_heads = j.value("n_expert_heads", a.n_expert_heads);
  a.hardness_head_mode = parse_head_mode(j.value("hardness_head_mode", std::string("binary")));
  a.dropout = j.value("dropout", a.dropout);
  a.input_channels = j.value("input_channels", a.input_channels);
  return a;
}

/// N x C x H x W input batch.
template <typename S>
struct InputBatch {
  int n = 0, channels = 0, height = 0, width = 0;
  std::vector<S> data;

  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(channels) * height * width; }
  const S* sample(int i) const noexcept { return data.data() + i * sample_size(); }
};

template <typename S>
InputBatch<S> make_input_batch(std::span<const PixelTensor> images) {
  InputBatch<S> b;
  if (images.empty()) return b;
  b.n = static_cast<int>(images.size());
  b.channels = images[0].channels;
  b.height = images[0].height;
  b.width = images[0].width;
  b.data.resize(b.n * b.sample_size());
  for (int i = 0; i < b.n; ++i) {
    const auto& im = images[i];
    if (im.channels != b.channels || im.height != b.height || im.width != b.width)
      throw Error(ErrorCode::ShapeMismatch, "images in a batch must share dimensions");
    S* dst = b.data.data() + i * b.sample_size();
    for (int c = 0; c < b.channels; ++c)
      for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x)
          dst[(static_cast<std::size_t>(c) * b.height + y) * b.width + x] = static_cast<S>(im.at(y, x, c));
  }
  return b;
}

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in;  // 0 for biases (zero-initialised)
};

/// Activations a backbone keeps for its reverse pass.
template <typename S>
struct BackboneCache {
  std::vector<std::vector<S>> values;
  std::vector<std::vector<std::uint32_t>> indices;
  int n = 0, height = 0, width = 0;
};

/// Feature extractor interface: images -> feature_dim vectors, plus the
/// matching reverse pass. Parameters live in the model's ParamSet under
/// names the backbone declares.
template <typename S>
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual std::string name() const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::vector<ParamSpec> param_specs(int input_channels) const = 0;
  /// Writes n * feature_dim features.
  virtual void forward(const ParamSet<S>& params, const InputBatch<S>& batch, BackboneCache<S>& cache,
                       std::vector<S>& features) const = 0;
  /// Accumulates parameter gradients into `grads`.
  virtual void backward(const ParamSet<S>& params, const BackboneCache<S>& cache, std::span<const S> d_features,
                        ParamSet<S>& grads) const = 0;
};

/// Three [3x3 conv (same padding) -> ReLU -> 2x2 max-pool] blocks with 8, 16
/// and 32 channels, then global average and global max pooling concatenated
/// into a 64-d feature vector.
template <typename S>
class DeskCnn final : public Backbone<S> {
 public:
  static constexpr std::array<std::size_t, 3> kChannels = {8, 16, 32};
  static constexpr std::size_t kFeatureDim = 2 * 32;

  std::string name() const override { return "desk_cnn"; }
  std::size_t feature_dim() const override { return kFeatureDim; }

  std::vector<ParamSpec> param_specs(int input_channels) const override {
    std::vector<ParamSpec> specs;
    std::size_t cin = static_cast<std::size_t>(input_channels);
    for (std::size_t b = 0; b < kChannels.size(); ++b) {
      const std::string prefix = "backbone.conv" + std::to_string(b + 1);
      specs.push_back({prefix + ".weight", {kChannels[b], cin, 3, 3}, cin * 9});
      specs.push_back({prefix + ".bias", {kChannels[b]}, 0});
      cin = kChannels[b];
    }
    return specs;
  }

  // cache.values layout per sample s, block b: [3*b + 0] padded input,
  // [3*b + 1] post-ReLU conv output, [3*b + 2] pooled output; then one GAP
  // entry. indices: [b] pool argmax per block, [3] global max argmax.
  void forward(const ParamSet<S>& params, const InputBatch<S>& batch, BackboneCache<S>& cache,
               std::vector<S>& features) const override {
    if (batch.height < 8 || batch.width < 8) throw Error(ErrorCode::ShapeMismatch, "desk_cnn needs inputs of at least 8x8");
    const int n = batch.n;
    cache.n = n;
    cache.height = batch.height;
    cache.width = batch.width;
    constexpr std::size_t kPerSample = 3 * 3;
    cache.values.assign(n * kPerSample, {});
    cache.indices.assign(n * 4, {});
    features.assign(static_cast<std::size_t>(n) * kFeatureDim, S(0));

    const Tensor<S>* w[3] = {&params.at("backbone.conv1.weight"), &params.at("backbone.conv2.weight"),
                             &params.at("backbone.conv3.weight")};
    const Tensor<S>* bias[3] = {&params.at("backbone.conv1.bias"), &params.at("backbone.conv2.bias"),
                                &params.at("backbone.conv3.bias")};
    if (w[0]->shape[1] != static_cast<std::size_t>(batch.channels))
      throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.channels) + " channels, conv1 expects " +
                                                std::to_string(w[0]->shape[1]));

    for (int s = 0; s < n; ++s) {
      std::vector<S> in(batch.sample(s), batch.sample(s) + batch.sample_size());
      int h = batch.height, wd = batch.width;
      std::size_t cin = static_cast<std::size_t>(batch.channels);
      for (std::size_t b = 0; b < 3; ++b) {
        const std::size_t cout = kChannels[b];
        auto& padded = cache.values[s * kPerSample + 3 * b];
        auto& act = cache.values[s * kPerSample + 3 * b + 1];
        auto& pooled = cache.values[s * kPerSample + 3 * b + 2];
        auto& arg = cache.indices[s * 4 + b];
        pad(in, cin, h, wd, padded);
        conv3x3(padded, cin, h, wd, w[b]->data, bias[b]->data, cout, act);
        for (auto& v : act) v = v > S(0) ? v : S(0);
        maxpool2(act, cout, h, wd, pooled, arg);
        in = pooled;
        cin = cout;
        h /= 2;
        wd /= 2;
      }
      // global pooling over the last block
      auto& garg = cache.indices[s * 4 + 3];
      garg.resize(cin);
      const std::size_t area = static_cast<std::size_t>(h) * wd;
      S* f = features.data() + s * kFeatureDim;
      for (std::size_t c = 0; c < cin; ++c) {
        const S* p = in.data() + c * area;
        S sum = 0;
        std::uint32_t best = 0;
        for (std::size_t i = 0; i < area; ++i) {
          sum += p[i];
          if (p[i] > p[best]) best = static_cast<std::uint32_t>(i);
        }
        f[c] = sum / static_cast<S>(area);
        f[cin + c] = p[best];
        garg[c] = best;
      }
    }
  }

  void backward(const ParamSet<S>& params, const BackboneCache<S>& cache, std::span<const S> d_features,
                ParamSet<S>& grads) const override {
    constexpr std::size_t kPerSample = 3 * 3;
    const std::string wname[3] = {"backbone.conv1.weight", "backbone.conv2.weight", "backbone.conv3.weight"};
    const std::string bname[3] = {"backbone.conv1.bias", "backbone.conv2.bias", "backbone.conv3.bias"};
    for (int s = 0; s < cache.n; ++s) {
      int hs[3], ws[3];
      hs[0] = cache.height;
      ws[0] = cache.width;
      for (int b = 1; b < 3; ++b) {
        hs[b] = hs[b - 1] / 2;
        ws[b] = ws[b - 1] / 2;
      }
      const int hl = hs[2] / 2, wl = ws[2] / 2;
      const std::size_t area = static_cast<std::size_t>(hl) * wl;
      const std::size_t clast = kChannels[2];
      // d pooled output of the last block
      std::vector<S> d_pooled(clast * area, S(0));
      const S* df = d_features.data() + s * kFeatureDim;
      const auto& garg = cache.indices[s * 4 + 3];
      for (std::size_t c = 0; c < clast; ++c) {
        const S g = df[c] / static_cast<S>(area);
        for (std::size_t i = 0; i < area; ++i) d_pooled[c * area + i] += g;
        d_pooled[c * area + garg[c]] += df[clast + c];
      }
      for (int b = 2; b >= 0; --b) {
        const std::size_t cout = kChannels[b];
        const std::size_t cin = b == 0 ? params.at(wname[0]).shape[1] : kChannels[b - 1];
        const int h = hs[b], wd = ws[b];
        const auto& padded = cache.values[s * kPerSample + 3 * b];
        const auto& act = cache.values[s * kPerSample + 3 * b + 1];
        const auto& arg = cache.indices[s * 4 + b];
        // unpool + ReLU mask
        std::vector<S> d_act(cout * static_cast<std::size_t>(h) * wd, S(0));
        for (std::size_t i = 0; i < arg.size(); ++i) d_act[arg[i]] += d_pooled[i];
        for (std::size_t i = 0; i < d_act.size(); ++i)
          if (!(act[i] > S(0))) d_act[i] = S(0);
        auto& gw = grads.at(wname[b]).data;
        auto& gb = grads.at(bname[b]).data;
        std::vector<S> d_padded;
        conv3x3_backward(padded, cin, h, wd, params.at(wname[b]).data, cout, d_act, gw, gb,
                         b > 0 ? &d_padded : nullptr);
        if (b > 0) unpad(d_padded, cin, h, wd, d_pooled);
      }
    }
  }

 private:
  static void pad(const std::vector<S>& in, std::size_t c, int h, int w, std::vector<S>& out) {
    const int pw = w + 2, ph = h + 2;
    out.assign(c * static_cast<std::size_t>(ph) * pw, S(0));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        std::copy_n(in.data() + (ch * h + y) * w, w, out.data() + (ch * ph + y + 1) * pw + 1);
  }

  static void unpad(const std::vector<S>& padded, std::size_t c, int h, int w, std::vector<S>& out) {
    const int pw = w + 2, ph = h + 2;
    out.assign(c * static_cast<std::size_t>(h) * w, S(0));
    for (std::size_t ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        std::copy_n(padded.data() + (ch * ph + y + 1) * pw + 1, w, out.data() + (ch * h + y) * w);
  }

  static void conv3x3(const std::vector<S>& padded, std::size_t cin, int h, int w, const std::vector<S>& weight,
                      const std::vector<S>& bias, std::size_t cout, std::vector<S>& out) {
    const int pw = w + 2, ph = h + 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    out.resize(cout * plane);
    for (std::size_t co = 0; co < cout; ++co) {
      S* o = out.data() + co * plane;
      std::fill(o, o + plane, bias[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* in = padded.data() + ci * static_cast<std::size_t>(ph) * pw;
        const S* k = weight.data() + (co * cin + ci) * 9;
        for (int y = 0; y < h; ++y) {
          S* orow = o + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < 3; ++ky) {
            const S* irow = in + static_cast<std::size_t>(y + ky) * pw;
            const S k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
            for (int x = 0; x < w; ++x) orow[x] += k0 * irow[x] + k1 * irow[x + 1] + k2 * irow[x + 2];
          }
        }
      }
    }
  }

  static void conv3x3_backward(const std::vector<S>& padded, std::size_t cin, int h, int w,
                               const std::vector<S>& weight, std::size_t cout, const std::vector<S>& d_out,
                               std::vector<S>& d_weight, std::vector<S>& d_bias, std::vector<S>* d_padded) {
    const int pw = w + 2, ph = h + 2;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    if (d_padded) d_padded->assign(cin * static_cast<std::size_t>(ph) * pw, S(0));
    std::vector<S> acc(9 * static_cast<std::size_t>(w));
    for (std::size_t co = 0; co < cout; ++co) {
      const S* g = d_out.data() + co * plane;
      S sb = 0;
      for (std::size_t i = 0; i < plane; ++i) sb += g[i];
      d_bias[co] += sb;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* in = padded.data() + ci * static_cast<std::size_t>(ph) * pw;
        const S* k = weight.data() + (co * cin + ci) * 9;
        std::fill(acc.begin(), acc.end(), S(0));
        S* dpad = d_padded ? d_padded->data() + ci * static_cast<std::size_t>(ph) * pw : nullptr;
        for (int y = 0; y < h; ++y) {
          const S* grow = g + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < 3; ++ky) {
            const S* irow = in + static_cast<std::size_t>(y + ky) * pw;
            S* a0 = acc.data() + (ky * 3) * w;
            S* a1 = a0 + w;
            S* a2 = a1 + w;
            for (int x = 0; x < w; ++x) {
              a0[x] += grow[x] * irow[x];
              a1[x] += grow[x] * irow[x + 1];
              a2[x] += grow[x] * irow[x + 2];
            }
            if (dpad) {
              S* drow = dpad + static_cast<std::size_t>(y + ky) * pw;
              const S k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
              for (int x = 0; x < w; ++x) {
                drow[x] += k0 * grow[x];
                drow[x + 1] += k1 * grow[x];
                drow[x + 2] += k2 * grow[x];
              }
            }
          }
        }
        S* dk = d_weight.data() + (co * cin + ci) * 9;
        for (int t = 0; t < 9; ++t) {
          const S* a = acc.data() + static_cast<std::size_t>(t) * w;
          S sum = 0;
          for (int x = 0; x < w; ++x) sum += a[x];
          dk[t] += sum;
        }
      }
    }
  }

  static void maxpool2(const std::vector<S>& in, std::size_t c, int h, int w, std::vector<S>& out,
                       std::vector<std::uint32_t>& arg) {
    const int oh = h / 2, ow = w / 2;
    out.resize(c * static_cast<std::size_t>(oh) * ow);
    arg.resize(out.size());
    for (std::size_t ch = 0; ch < c; ++ch)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          std::size_t best = (ch * h + 2 * y) * w + 2 * x;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = (ch * h + 2 * y + dy) * w + 2 * x + dx;
              if (in[idx] > in[best]) best = idx;
            }
          const std::size_t o = (ch * oh + y) * ow + x;
          out[o] = in[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  }
};

/// Builds the stock backbone for `arch`. External backbones are supplied by
/// the caller through Model's second constructor.
template <typename S>
std::shared_ptr<const Backbone<S>> make_backbone(const ArchConfig& arch) {
  if (arch.backbone == BackboneKind::external)
    throw Error(ErrorCode::InvalidConfig, "external backbone must be passed to Model explicitly");
  if (arch.feature_dim != DeskCnn<S>::kFeatureDim)
    throw Error(ErrorCode::InvalidConfig, "desk_cnn produces 64 features; feature_dim=" + std::to_string(arch.feature_dim));
  return std::make_shared<const DeskCnn<S>>();
}

/// The desk-scale architecture: 64x64 input, desk CNN, 32-unit shared layer.
inline ArchConfig desk_arch(HardnessHeadMode mode = HardnessHeadMode::binary, int input_channels = 3, double dropout = 0.0) {
  ArchConfig a;
  a.hardness_head_mode = mode;
  a.input_channels = input_channels;
  a.dropout = dropout;
  return a;
}

/// Per-head probabilities for a batch (row-major, batch x heads).
struct HeadOutputs {
  std::size_t batch = 0;
  std::size_t hardness_width = 1;
  std::vector<double> expert_logits;    // batch x 3
  std::vector<double> hardness_logits;  // batch x hardness_width
  std::vector<double> expert_probs;     // batch x 3
  std::vector<double> hardness_probs;   // batch x hardness_width

  double expert_prob(std::size_t b, std::size_t head) const { return expert_probs[b * 3 + head]; }
  std::span<const double> hardness_row(std::size_t b) const {
    return {hardness_probs.data() + b * hardness_width, hardness_width};
  }
};

/// Gradients of the total loss w.r.t. head pre-activations.
struct LogitGrads {
  std::vector<double> expert;    // batch x 3
  std::vector<double> hardness;  // batch x hardness_width
};

template <typename S>
struct ForwardCache {
  std::uint64_t params_fingerprint = 0;
  std::size_t batch = 0;
  BackboneCache<S> backbone;
  std::vector<S> features;    // batch x feature_dim
  std::vector<S> shared_pre;  // batch x shared_dim, before ReLU
  std::vector<S> mask;        // dropout multipliers (empty when inactive)
  std::vector<S> hidden;      // batch x shared_dim, after ReLU and dropout
  std::vector<double> hardness_probs;
};

template <typename S>
struct ForwardResult {
  HeadOutputs outputs;
  ForwardCache<S> cache;
};

namespace detail {
constexpr double kOutputClamp = 1e-15;
inline double clamp_output(double p) { return std::clamp(p, kOutputClamp, 1.0 - kOutputClamp); }
}  // namespace detail

/// Backbone -> shared FC + ReLU (+ dropout in training) -> three sigmoid
/// expert heads and a sigmoid or softmax hardness head.
template <typename S>
class Model {
 public:
  explicit Model(ArchConfig arch) : Model(arch, make_backbone<S>(arch)) {}

  Model(ArchConfig arch, std::shared_ptr<const Backbone<S>> backbone) : arch_(arch), backbone_(std::move(backbone)) {
    arch_.validate();
    if (!backbone_) throw Error(ErrorCode::InvalidConfig, "null backbone");
    if (backbone_->feature_dim() != arch_.feature_dim)
      throw Error(ErrorCode::InvalidConfig, "backbone feature_dim does not match arch");
  }

  const ArchConfig& arch() const noexcept { return arch_; }
  const Backbone<S>& backbone() const noexcept { return *backbone_; }

  std::vector<ParamSpec> param_specs() const {
    auto specs = backbone_->param_specs(arch_.input_channels);
    const std::size_t f = arch_.feature_dim, d = arch_.shared_dim;
    specs.push_back({"shared.weight", {f, d}, f});
    specs.push_back({"shared.bias", {d}, 0});
    for (std::size_t i = 0; i < arch_.n_expert_heads; ++i) {
      specs.push_back({"head.expert" + std::to_string(i) + ".weight", {d, 1}, d});
      specs.push_back({"head.expert" + std::to_string(i) + ".bias", {1}, 0});
    }
    specs.push_back({"head.hardness.weight", {d, arch_.hardness_outputs()}, d});
    specs.push_back({"head.hardness.bias", {arch_.hardness_outputs()}, 0});
    return specs;
  }

  /// He-uniform weights, zero biases.
  ParamSet<S> init_params(std::uint64_t seed) const {
    ParamSet<S> p;
    Rng rng(derive_seed(seed, 0x1417ULL));
    for (const auto& spec : param_specs()) {
      auto& t = p.add(spec.name, spec.shape);
      if (spec.fan_in == 0) continue;
      const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
      for (auto& v : t.data) v = static_cast<S>(rng.uniform(-bound, bound));
    }
    return p;
  }

  ParamSet<S> zero_params() const {
    ParamSet<S> p;
    for (const auto& spec : param_specs()) p.add(spec.name, spec.shape);
    return p;
  }

  /// Throws TensorShapeMismatch unless `p` has exactly this model's layout.
  void check_layout(const ParamSet<S>& p) const {
    const auto specs = param_specs();
    if (specs.size() != p.size())
      throw Error(ErrorCode::TensorShapeMismatch,
                  "expected " + std::to_string(specs.size()) + " tensors, got " + std::to_string(p.size()));
    for (const auto& spec : specs) {
      const auto* t = p.find(spec.name);
      if (!t) throw Error(ErrorCode::TensorShapeMismatch, "missing tensor '" + spec.name + "'");
      if (t->shape != spec.shape)
        throw Error(ErrorCode::TensorShapeMismatch, spec.name + " has shape " + shape_string(t->shape) + ", expected " +
                                                        shape_string(spec.shape));
    }
  }

  ForwardResult<S> forward(const ParamSet<S>& params, const InputBatch<S>& batch, bool train_mode,
                           std::uint64_t dropout_seed) const {
    if (batch.channels != arch_.input_channels)
      throw Error(ErrorCode::ShapeMismatch, "batch has " + std::to_string(batch.channels) + " channels, model expects " +
                                                std::to_string(arch_.input_channels));
    ForwardResult<S> r;
    auto& c = r.cache;
    const std::size_t n = static_cast<std::size_t>(batch.n);
    const std::size_t f = arch_.feature_dim, d = arch_.shared_dim, k = arch_.hardness_outputs();
    c.params_fingerprint = params.fingerprint();
    c.batch = n;
    backbone_->forward(params, batch, c.backbone, c.features);

    const auto& ws = params.at("shared.weight").data;
    const auto& bs = params.at("shared.bias").data;
    c.shared_pre.assign(n * d, S(0));
    for (std::size_t b = 0; b < n; ++b) {
      S* z = c.shared_pre.data() + b * d;
      std::copy(bs.begin(), bs.end(), z);
      const S* fb = c.features.data() + b * f;
      for (std::size_t i = 0; i < f; ++i) {
        const S fi = fb[i];
        const S* wrow = ws.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) z[j] += fi * wrow[j];
      }
    }
    c.hidden.resize(n * d);
    for (std::size_t i = 0; i < n * d; ++i) c.hidden[i] = c.shared_pre[i] > S(0) ? c.shared_pre[i] : S(0);
    if (train_mode && arch_.dropout > 0.0) {
      Rng rng(dropout_seed);
      const S keep_scale = static_cast<S>(1.0 / (1.0 - arch_.dropout));
      c.mask.resize(n * d);
      for (std::size_t i = 0; i < n * d; ++i) {
        c.mask[i] = rng.uniform() < arch_.dropout ? S(0) : keep_scale;
        c.hidden[i] *= c.mask[i];
      }
    }

    auto& out = r.outputs;
    out.batch = n;
    out.hardness_width = k;
    out.expert_logits.assign(n * 3, 0.0);
    out.hardness_logits.assign(n * k, 0.0);
    for (std::size_t head = 0; head < 3; ++head) {
      const auto& w = params.at(expert_weight(head)).data;
      const S bias = params.at(expert_bias(head)).data[0];
      for (std::size_t b = 0; b < n; ++b) {
        S z = bias;
        const S* h = c.hidden.data() + b * d;
        for (std::size_t j = 0; j < d; ++j) z += h[j] * w[j];
        out.expert_logits[b * 3 + head] = static_cast<double>(z);
      }
    }
    const auto& wh = params.at("head.hardness.weight").data;
    const auto& bh = params.at("head.hardness.bias").data;
    for (std::size_t b = 0; b < n; ++b) {
      const S* h = c.hidden.data() + b * d;
      for (std::size_t o = 0; o < k; ++o) {
        S z = bh[o];
        for (std::size_t j = 0; j < d; ++j) z += h[j] * wh[j * k + o];
        out.hardness_logits[b * k + o] = static_cast<double>(z);
      }
    }
    out.expert_probs.resize(n * 3);
    for (std::size_t i = 0; i < n * 3; ++i) out.expert_probs[i] = detail::clamp_output(sigmoid(out.expert_logits[i]));
    out.hardness_probs.resize(n * k);
    for (std::size_t b = 0; b < n; ++b) {
      const double* z = out.hardness_logits.data() + b * k;
      double* p = out.hardness_probs.data() + b * k;
      if (k == 1) {
        p[0] = detail::clamp_output(sigmoid(z[0]));
        continue;
      }
      const double zmax = *std::max_element(z, z + k);
      double sum = 0.0;
      for (std::size_t o = 0; o < k; ++o) sum += (p[o] = std::exp(z[o] - zmax));
      for (std::size_t o = 0; o < k; ++o) p[o] /= sum;
    }
    c.hardness_probs = out.hardness_probs;
    return r;
  }

  ParamSet<S> backward(const ParamSet<S>& params, const ForwardCache<S>& cache, const LogitGrads& lg) const {
    if (cache.params_fingerprint != params.fingerprint())
      throw Error(ErrorCode::StaleCache, "cache was produced with different parameters");
    const std::size_t n = cache.batch;
    const std::size_t f = arch_.feature_dim, d = arch_.shared_dim, k = arch_.hardness_outputs();
    if (lg.expert.size() != n * 3 || lg.hardness.size() != n * k)
      throw Error(ErrorCode::ShapeMismatch, "logit gradients do not match the cached batch");
    ParamSet<S> grads = zero_params();

    std::vector<S> dh(n * d, S(0));
    for (std::size_t head = 0; head < 3; ++head) {
      const auto& w = params.at(expert_weight(head)).data;
      auto& gw = grads.at(expert_weight(head)).data;
      auto& gb = grads.at(expert_bias(head)).data;
      for (std::size_t b = 0; b < n; ++b) {
        const S g = static_cast<S>(lg.expert[b * 3 + head]);
        const S* h = cache.hidden.data() + b * d;
        gb[0] += g;
        for (std::size_t j = 0; j < d; ++j) {
          gw[j] += h[j] * g;
          dh[b * d + j] += w[j] * g;
        }
      }
    }
    {
      const auto& w = params.at("head.hardness.weight").data;
      auto& gw = grads.at("head.hardness.weight").data;
      auto& gb = grads.at("head.hardness.bias").data;
      for (std::size_t b = 0; b < n; ++b) {
        const S* h = cache.hidden.data() + b * d;
        for (std::size_t o = 0; o < k; ++o) {
          const S g = static_cast<S>(lg.hardness[b * k + o]);
          gb[o] += g;
          for (std::size_t j = 0; j < d; ++j) {
            gw[j * k + o] += h[j] * g;
            dh[b * d + j] += w[j * k + o] * g;
          }
        }
      }
    }
    if (!cache.mask.empty())
      for (std::size_t i = 0; i < n * d; ++i) dh[i] *= cache.mask[i];
    for (std::size_t i = 0; i < n * d; ++i)
      if (!(cache.shared_pre[i] > S(0))) dh[i] = S(0);

    const auto& ws = params.at("shared.weight").data;
    auto& gws = grads.at("shared.weight").data;
    auto& gbs = grads.at("shared.bias").data;
    std::vector<S> dfeat(n * f, S(0));
    for (std::size_t b = 0; b < n; ++b) {
      const S* dz = dh.data() + b * d;
      const S* fb = cache.features.data() + b * f;
      for (std::size_t j = 0; j < d; ++j) gbs[j] += dz[j];
      for (std::size_t i = 0; i < f; ++i) {
        S acc = 0;
        const S* wrow = ws.data() + i * d;
        S* grow = gws.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
          grow[j] += fb[i] * dz[j];
          acc += wrow[j] * dz[j];
        }
        dfeat[b * f + i] = acc;
      }
    }
    backbone_->backward(params, cache.backbone, dfeat, grads);
    return grads;
  }

  static std::string expert_weight(std::size_t head) { return "head.expert" + std::to_string(head) + ".weight"; }
  static std::string expert_bias(std::size_t head) { return "head.expert" + std::to_string(head) + ".bias"; }

 private:
  ArchConfig arch_;
  std::shared_ptr<const Backbone<S>> backbone_;
};

/// Inference rule for one sample.
struct Prediction {
  ClassLabel label = ClassLabel::NMF;
  double score = 0.5;  // mean expert probability of NMF
  int hardness = 0;    // HardnessLabel code (binary head) or four-class index
};

inline Prediction predict_one(const HeadOutputs& out, std::size_t b) {
  Prediction p;
  p.score = (out.expert_prob(b, 0) + out.expert_prob(b, 1) + out.expert_prob(b, 2)) / 3.0;
  p.label = p.score >= 0.5 ? ClassLabel::NMF : ClassLabel::AMF;
  const auto row = out.hardness_row(b);
  if (row.size() == 1) {
    p.hardness = row[0] >= 0.5 ? code(HardnessLabel::Easy) : code(HardnessLabel::Hard);
  } else {
    p.hardness = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return p;
}

inline std::vector<Prediction> predict(const HeadOutputs& out) {
  std::vector<Prediction> v;
  v.reserve(out.batch);
  for (std::size_t b = 0; b < out.batch; ++b) v.push_back(predict_one(out, b));
  return v;
}

}  // namespace mitoclass
