#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mitoclass/error.hpp"

namespace mitoclass {

/// alpha weights the positive (label 1) class, 1 - alpha the negative one.
struct FocalParams {
  double alpha = 0.25;
  double gamma = 2.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "focal alpha must lie in (0,1)");
    if (!(gamma >= 0.0)) throw Error(ErrorCode::InvalidConfig, "focal gamma must be >= 0");
  }
};

/// total = theta * mean(expert losses) + (1 - theta) * hardness loss.
struct LossCombination {
  double theta = 0.5;
};

constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) noexcept { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// (1-p)^gamma with 0^0 = 1.
inline double focal_weight(double one_minus_p, double gamma) noexcept {
  return gamma == 0.0 ? 1.0 : std::pow(one_minus_p, gamma);
}

/// Alpha-balanced focal loss on a probability. y is 0 or 1.
inline double focal_binary(double p, int y, const FocalParams& fp) {
  p = clamp_prob(p);
  if (y == 1) return -fp.alpha * focal_weight(1.0 - p, fp.gamma) * std::log(p);
  return -(1.0 - fp.alpha) * focal_weight(p, fp.gamma) * std::log1p(-p);
}

/// d focal_binary / dp, evaluated at the clamped probability.
inline double focal_binary_grad(double p, int y, const FocalParams& fp) {
  p = clamp_prob(p);
  const double g = fp.gamma;
  if (y == 1) {
    const double q = 1.0 - p;
    const double decay = g == 0.0 ? 0.0 : g * std::pow(q, g - 1.0) * std::log(p);
    return -fp.alpha * (focal_weight(q, g) / p - decay);
  }
  const double decay = g == 0.0 ? 0.0 : g * std::pow(p, g - 1.0) * std::log1p(-p);
  return (1.0 - fp.alpha) * (focal_weight(p, g) / (1.0 - p) - decay);
}

inline double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow.
inline double log_sigmoid(double z) noexcept { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

/// Focal loss of a sigmoid head, from its logit. Matches focal_binary(sigmoid(z))
/// whenever the probability is inside the clamp range.
inline double focal_binary_logit(double z, int y, const FocalParams& fp) {
  return focal_binary(sigmoid(z), y, fp);
}

/// d focal / d logit, computed in log space so saturated heads still receive
/// gradient:
///   y=1: -a [ (1-p)^(g+1) - g p (1-p)^g ln p ]
///   y=0:  (1-a) [ p^(g+1) - g (1-p) p^g ln(1-p) ]
inline double focal_binary_logit_grad(double z, int y, const FocalParams& fp) {
  const double g = fp.gamma;
  if (y == 1) {
    const double p = sigmoid(z), q = sigmoid(-z);
    const double lp = log_sigmoid(z);
    return -fp.alpha * (std::pow(q, g + 1.0) - (g == 0.0 ? 0.0 : g * p * std::pow(q, g) * lp));
  }
  const double p = sigmoid(z), q = sigmoid(-z);
  const double lq = log_sigmoid(-z);
  return (1.0 - fp.alpha) * (std::pow(p, g + 1.0) - (g == 0.0 ? 0.0 : g * q * std::pow(p, g) * lq));
}

inline void check_simplex(std::span<const double> probs) {
  if (probs.size() < 2) throw Error(ErrorCode::BadSimplex, "need at least 2 classes");
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::BadSimplex, "probability outside [0,1]");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-6) throw Error(ErrorCode::BadSimplex, "probabilities sum to " + std::to_string(s));
}

/// -alpha[y] (1 - p_y)^gamma ln p_y.
inline double focal_multiclass(std::span<const double> probs, std::size_t y, std::span<const double> alpha_vec,
                               double gamma) {
  check_simplex(probs);
  if (y >= probs.size() || alpha_vec.size() != probs.size())
    throw Error(ErrorCode::ShapeMismatch, "class index or alpha vector does not match K");
  const double p = clamp_prob(probs[y]);
  return -alpha_vec[y] * focal_weight(1.0 - p, gamma) * std::log(p);
}

/// Gradient of focal_multiclass(softmax(z)) w.r.t. the logits z.
/// dL/dz_j = (p_y dL/dp_y) (delta_yj - p_j).
inline std::vector<double> focal_multiclass_logit_grad(std::span<const double> probs, std::size_t y,
                                                       std::span<const double> alpha_vec, double gamma) {
  if (y >= probs.size() || alpha_vec.size() != probs.size())
    throw Error(ErrorCode::ShapeMismatch, "class index or alpha vector does not match K");
  const double p = clamp_prob(probs[y]);
  const double q = 1.0 - p;
  // p * dL/dp = -a [ (1-p)^g - g p (1-p)^(g-1) ln p ]
  const double decay = gamma == 0.0 ? 0.0 : gamma * p * std::pow(q, gamma - 1.0) * std::log(p);
  const double scale = -alpha_vec[y] * (focal_weight(q, gamma) - decay);
  std::vector<double> g(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) g[j] = scale * ((j == y ? 1.0 : 0.0) - probs[j]);
  return g;
}

/// Inverse class frequency normalised to mean 1. Absent classes count as 1.
inline std::vector<double> inverse_frequency_alpha(std::span<const std::size_t> counts) {
  std::vector<double> a(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) a[i] = 1.0 / static_cast<double>(std::max<std::size_t>(counts[i], 1));
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
  for (double& v : a) v /= mean;
  return a;
}

inline double combined_loss(const std::array<double, 3>& expert_losses, double hardness_loss, const LossCombination& comb) {
  const double expert_mean = (expert_losses[0] + expert_losses[1] + expert_losses[2]) / 3.0;
  return comb.theta * expert_mean + (1.0 - comb.theta) * hardness_loss;
}

}  // namespace mitoclass
