#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mitoclass/checkpoint.hpp"
#include "mitoclass/csv.hpp"
#include "mitoclass/dataset.hpp"
#include "mitoclass/error.hpp"
#include "mitoclass/eval.hpp"
#include "mitoclass/losses.hpp"
#include "mitoclass/netcore.hpp"
#include "mitoclass/pixelpipe.hpp"
#include "mitoclass/rng.hpp"
#include "mitoclass/splits.hpp"
#include "mitoclass/tensor.hpp"

namespace mitoclass {

struct TrainConfig {
  double lr0 = 1e-4;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  std::size_t patience = 20;
  double eta_min = 0.0;
  double theta = 0.5;
  FocalParams focal;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;

  void validate() const {
    if (!(eta_min >= 0.0) || !(lr0 > eta_min)) throw Error(ErrorCode::InvalidConfig, "need lr0 > eta_min >= 0");
    if (patience < 1) throw Error(ErrorCode::InvalidConfig, "patience must be >= 1");
    if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "batch_size must be >= 1");
    if (max_epochs < 1) throw Error(ErrorCode::InvalidConfig, "max_epochs must be >= 1");
    if (!(theta >= 0.0 && theta <= 1.0)) throw Error(ErrorCode::InvalidConfig, "theta must lie in [0,1]");
    if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidConfig, "weight_decay must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
      throw Error(ErrorCode::InvalidConfig, "Adam betas must lie in [0,1)");
    if (!(eps_adam > 0.0)) throw Error(ErrorCode::InvalidConfig, "eps_adam must be > 0");
    focal.validate();
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr0", c.lr0},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"eta_min", c.eta_min},
          {"theta", c.theta},
          {"focal_alpha", c.focal.alpha},
          {"focal_gamma", c.focal.gamma},
          {"seed", c.seed},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps_adam", c.eps_adam}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  c.lr0 = j.value("lr0", c.lr0);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.eta_min = j.value("eta_min", c.eta_min);
  c.theta = j.value("theta", c.theta);
  c.focal.alpha = j.value("focal_alpha", c.focal.alpha);
  c.focal.gamma = j.value("focal_gamma", c.focal.gamma);
  c.seed = j.value("seed", c.seed);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps_adam = j.value("eps_adam", c.eps_adam);
  return c;
}

/// eta_min + (lr0 - eta_min) (1 + cos(pi epoch / total)) / 2, stepped per epoch.
inline double cosine_lr(std::size_t epoch, const TrainConfig& cfg, std::size_t total_epochs) {
  if (total_epochs == 0 || epoch == 0) return cfg.lr0;
  if (epoch >= total_epochs) return cfg.eta_min;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return cfg.eta_min + 0.5 * (cfg.lr0 - cfg.eta_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------------------
// AdamW

template <typename S>
struct AdamState {
  ParamSet<S> m;
  ParamSet<S> v;
  std::uint64_t step = 0;

  static AdamState for_params(const ParamSet<S>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
};

/// Decoupled weight decay:
///   theta <- theta (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
template <typename S>
void adamw_step(ParamSet<S>& params, const ParamSet<S>& grads, AdamState<S>& state, double lr, const TrainConfig& cfg) {
  if (!params.same_layout(grads) || !params.same_layout(state.m) || !params.same_layout(state.v))
    throw Error(ErrorCode::ShapeMismatch, "params, grads and optimizer state differ in layout");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(cfg.beta1, t);
  const double bias2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.entries()[i].tensor.data;
    const auto& g = grads.entries()[i].tensor.data;
    auto& m = state.m.entries()[i].tensor.data;
    auto& v = state.v.entries()[i].tensor.data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<S>(mj);
      v[j] = static_cast<S>(vj);
      const double m_hat = mj / bias1;
      const double v_hat = vj / bias2;
      p[j] = static_cast<S>(static_cast<double>(p[j]) * decay - lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam));
    }
  }
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best metric (ties keep the earliest epoch) and signals a stop
/// once epoch - best_epoch exceeds the patience.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when training should stop after this epoch.
  bool update(std::size_t epoch, double metric) {
    if (best_epoch_ == 0 || metric > best_) {
      best_ = metric;
      best_epoch_ = epoch;
      improved_ = true;
    } else {
      improved_ = false;
    }
    return epoch - best_epoch_ > patience_;
  }

  bool improved() const noexcept { return improved_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  double best() const noexcept { return best_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;  // 0 until the first update (epochs count from 1)
  double best_ = 0.0;
  bool improved_ = false;
};

struct LoopResult {
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::size_t epochs_run = 0;
};

/// Runs epochs 1..max_epochs, calling `epoch_fn(epoch, improved_callback)`.
/// `epoch_fn` returns the validation metric of that epoch; `on_best` is called
/// whenever it becomes the new best.
inline LoopResult run_epochs(std::size_t max_epochs, std::size_t patience, const std::function<double(std::size_t)>& epoch_fn,
                             const std::function<void(std::size_t)>& on_best = {}) {
  EarlyStopper stopper(patience);
  LoopResult r;
  for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
    const double metric = epoch_fn(epoch);
    r.epochs_run = epoch;
    const bool stop = stopper.update(epoch, metric);
    if (stopper.improved() && on_best) on_best(epoch);
    if (stop) break;
  }
  r.best_epoch = stopper.best_epoch();
  r.best_metric = stopper.best();
  return r;
}

// ---------------------------------------------------------------------------
// Loss over a batch

struct BatchLoss {
  double total = 0.0;
  std::array<double, 3> expert{};
  double hardness = 0.0;
  LogitGrads grads;
};

/// Expert head i is trained on expert i's label; the hardness head on the
/// hardness code (binary) or the four-class category. Per-head losses are
/// batch means; `alpha_vec` is only used by the four-class head.
inline BatchLoss batch_loss(const HeadOutputs& out, std::span<const PatchRecord* const> records, const FocalParams& focal,
                            double theta, std::span<const double> alpha_vec = {}) {
  const std::size_t n = out.batch;
  if (records.size() != n) throw Error(ErrorCode::ShapeMismatch, "records do not match batch");
  const std::size_t k = out.hardness_width;
  BatchLoss bl;
  bl.grads.expert.assign(n * 3, 0.0);
  bl.grads.hardness.assign(n * k, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> default_alpha;
  if (k > 1 && alpha_vec.empty()) {
    default_alpha.assign(k, 1.0);
    alpha_vec = default_alpha;
  }
  for (std::size_t b = 0; b < n; ++b) {
    const PatchRecord& r = *records[b];
    for (std::size_t h = 0; h < 3; ++h) {
      const int y = code(r.expert_labels[h]);
      const double z = out.expert_logits[b * 3 + h];
      bl.expert[h] += focal_binary_logit(z, y, focal) * inv_n;
      bl.grads.expert[b * 3 + h] = theta / 3.0 * inv_n * focal_binary_logit_grad(z, y, focal);
    }
    if (k == 1) {
      const int y = code(r.hardness);
      const double z = out.hardness_logits[b];
      bl.hardness += focal_binary_logit(z, y, focal) * inv_n;
      bl.grads.hardness[b] = (1.0 - theta) * inv_n * focal_binary_logit_grad(z, y, focal);
    } else {
      const auto target = static_cast<std::size_t>(four_class_target(r.consensus, r.hardness));
      const auto row = out.hardness_row(b);
      bl.hardness += focal_multiclass(row, target, alpha_vec, focal.gamma) * inv_n;
      const auto g = focal_multiclass_logit_grad(row, target, alpha_vec, focal.gamma);
      for (std::size_t o = 0; o < k; ++o) bl.grads.hardness[b * k + o] = (1.0 - theta) * inv_n * g[o];
    }
  }
  bl.total = combined_loss(bl.expert, bl.hardness, LossCombination{theta});
  return bl;
}

/// Default four-class alpha: inverse category frequency over `idx`, mean 1.
inline std::vector<double> four_class_alpha(const Dataset& data, std::span<const std::size_t> idx) {
  std::array<std::size_t, 4> counts{};
  for (auto i : idx) ++counts[four_class_target(data[i].consensus, data[i].hardness)];
  return inverse_frequency_alpha(counts);
}

// ---------------------------------------------------------------------------
// Epochs

/// Model inputs for `idx`, augmented with the per-(patch, epoch) stream.
template <typename S>
InputBatch<S> prepare_batch(const Dataset& data, std::span<const std::size_t> idx, const PipelineSpec& pipe,
                            std::uint64_t seed, std::uint64_t epoch) {
  std::vector<PixelTensor> images;
  images.reserve(idx.size());
  for (auto i : idx)
    images.push_back(apply_policy(data[i], pipe.policy, pipe.mode, augmentation_seed(seed, data[i].patch_id, epoch), pipe.hed));
  return make_input_batch<S>(images);
}

/// One pass over `train_idx` in a seeded shuffled order; the final partial
/// batch is kept. Returns the mean of the batch losses.
template <typename S>
double run_epoch(const Model<S>& model, ParamSet<S>& params, AdamState<S>& state, const Dataset& data,
                 std::span<const std::size_t> train_idx, const PipelineSpec& pipe, const TrainConfig& cfg,
                 std::size_t epoch, double lr, std::span<const double> alpha_vec = {}) {
  if (train_idx.empty()) throw Error(ErrorCode::EmptyInput, "empty training slice");
  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  Rng(derive_seed(derive_seed(cfg.seed, 0x5eedULL), epoch)).shuffle(order);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const std::span<const std::size_t> idx(order.data() + start, end - start);
    const auto input = prepare_batch<S>(data, idx, pipe, cfg.seed, epoch);
    const std::uint64_t dropout_seed = derive_seed(derive_seed(cfg.seed, epoch), batches);
    auto fwd = model.forward(params, input, true, dropout_seed);
    std::vector<const PatchRecord*> recs;
    for (auto i : idx) recs.push_back(&data[i]);
    const auto bl = batch_loss(fwd.outputs, recs, cfg.focal, cfg.theta, alpha_vec);
    if (!std::isfinite(bl.total)) throw Error(ErrorCode::Numeric, "non-finite loss at epoch " + std::to_string(epoch));
    const auto grads = model.backward(params, fwd.cache, bl.grads);
    adamw_step(params, grads, state, lr, cfg);
    loss_sum += bl.total;
    ++batches;
  }
  return loss_sum / static_cast<double>(batches);
}

/// Predictions for `idx` with augmentation disabled.
template <typename S>
PredictionSet predict_records(const Model<S>& model, const ParamSet<S>& params, const Dataset& data,
                              std::span<const std::size_t> idx, const PipelineSpec& pipe, std::size_t batch_size = 32) {
  PipelineSpec eval_pipe = pipe;
  eval_pipe.policy.enabled = false;
  PredictionSet out;
  out.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    const std::span<const std::size_t> chunk(idx.data() + start, end - start);
    const auto input = prepare_batch<S>(data, chunk, eval_pipe, 0, 0);
    const auto fwd = model.forward(params, input, false, 0);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      const auto p = predict_one(fwd.outputs, b);
      const auto& r = data[chunk[b]];
      out.push_back({r.patch_id, p.score, p.label, r.consensus, r.domain.domain_id()});
    }
  }
  return out;
}

/// Balanced accuracy against consensus labels. When the slice holds a single
/// class the available recall is used instead.
inline double selection_metric(const PredictionSet& preds) {
  const auto m = metric_tuple(preds);
  if (m.balanced_accuracy) return *m.balanced_accuracy;
  return m.sensitivity.value_or(m.specificity.value_or(0.0));
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_balanced_accuracy = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::size_t best_epoch = 0;
  double best_val_balanced_accuracy = 0.0;
  std::size_t epochs_run = 0;
  std::vector<EpochRecord> history;
  std::filesystem::path best_checkpoint_path;
  ParamSet<float> best_params;
  PredictionSet best_val_predictions;
};

inline std::string history_to_csv(const std::vector<EpochRecord>& h) {
  std::string out = "epoch,train_loss,val_balanced_accuracy,lr\n";
  for (const auto& e : h)
    out += std::to_string(e.epoch) + "," + csv::format_double(e.train_loss) + "," +
           csv::format_double(e.val_balanced_accuracy) + "," + csv::format_double(e.lr) + "\n";
  return out;
}

inline nlohmann::json run_config_json(const ArchConfig& arch, const TrainConfig& cfg, const PipelineSpec& pipe) {
  return {{"arch", to_json(arch)}, {"train", to_json(cfg)}, {"pipeline", to_json(pipe)}};
}

/// Trains on every fold but `fold` and validates on `fold`. With a non-empty
/// run_dir, writes config.json, history.csv and best.ckpt there.
inline TrainResult train(const Dataset& data, const FoldAssignment& folds, int fold, const ArchConfig& arch,
                         const TrainConfig& cfg, const PipelineSpec& pipe, const std::filesystem::path& run_dir = {}) {
  cfg.validate();
  pipe.policy.validate();
  if (arch.input_channels != input_channels(pipe.mode))
    throw Error(ErrorCode::InvalidConfig, "arch.input_channels does not match input mode " + std::string(to_string(pipe.mode)));
  const auto [train_ids, val_ids] = fold_slices(folds, fold);
  const auto train_idx = indices_of(data, train_ids);
  const auto val_idx = indices_of(data, val_ids);
  if (train_idx.empty() || val_idx.empty()) throw Error(ErrorCode::EmptyInput, "fold leaves an empty train or val slice");

  const Model<float> model(arch);
  ParamSet<float> params = model.init_params(cfg.seed);
  auto state = AdamState<float>::for_params(params);
  std::vector<double> alpha_vec;
  if (arch.hardness_head_mode == HardnessHeadMode::four_class) alpha_vec = four_class_alpha(data, train_idx);

  TrainResult result;
  PredictionSet last_preds;
  const auto loop = run_epochs(
      cfg.max_epochs, cfg.patience,
      [&](std::size_t epoch) {
        const double lr = cosine_lr(epoch - 1, cfg, cfg.max_epochs);
        const double loss = run_epoch(model, params, state, data, train_idx, pipe, cfg, epoch, lr, alpha_vec);
        last_preds = predict_records(model, params, data, val_idx, pipe);
        const double ba = selection_metric(last_preds);
        result.history.push_back({epoch, loss, ba, lr});
        return ba;
      },
      [&](std::size_t) {
        result.best_params = params;
        result.best_val_predictions = last_preds;
      });
  result.best_epoch = loop.best_epoch;
  result.best_val_balanced_accuracy = loop.best_metric;
  result.epochs_run = loop.epochs_run;

  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    auto conf = run_config_json(arch, cfg, pipe);
    conf["fold"] = fold;
    conf["k"] = folds.k;
    conf["split_seed"] = folds.seed;
    csv::write_text(run_dir / "config.json", conf.dump(2) + "\n");
    csv::write_text(run_dir / "history.csv", history_to_csv(result.history));
    nlohmann::json meta = {{"fold", fold},
                           {"best_epoch", result.best_epoch},
                           {"val_balanced_accuracy", result.best_val_balanced_accuracy},
                           {"pipeline", to_json(pipe)}};
    result.best_checkpoint_path = run_dir / "best.ckpt";
    save_checkpoint(result.best_checkpoint_path, result.best_params, arch, meta);
  }
  return result;
}

}  // namespace mitoclass
