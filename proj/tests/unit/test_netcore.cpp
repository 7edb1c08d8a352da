#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "mitoclass/losses.hpp"
#include "mitoclass/netcore.hpp"
#include "grad_check.hpp"

using namespace mitoclass;
using namespace mitoclass::testing;

TEST(Forward, ShapesAndRange) {
  const Model<float> model(desk_arch());
  const auto p = model.init_params(1);
  const auto r = model.forward(p, random_batch<float>(2, 3, 64, 2), false, 0);
  EXPECT_EQ(r.outputs.batch, 2u);
  EXPECT_EQ(r.outputs.expert_probs.size(), 6u);
  EXPECT_EQ(r.outputs.hardness_probs.size(), 2u);
  for (double v : r.outputs.expert_probs) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_GT(r.outputs.hardness_probs[0], 0.0);
  EXPECT_LT(r.outputs.hardness_probs[0], 1.0);
}

TEST(Forward, FourClassRowsAreSimplices) {
  const Model<float> model(desk_arch(HardnessHeadMode::four_class));
  const auto r = model.forward(model.init_params(3), random_batch<float>(5, 3, 64, 4), false, 0);
  ASSERT_EQ(r.outputs.hardness_width, 4u);
  for (std::size_t b = 0; b < 5; ++b) {
    double s = 0.0;
    for (double v : r.outputs.hardness_row(b)) {
      EXPECT_GT(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, ZeroParamsGiveHalf) {
  for (auto mode : {HardnessHeadMode::binary, HardnessHeadMode::four_class}) {
    const Model<float> model(desk_arch(mode));
    const auto r = model.forward(model.zero_params(), random_batch<float>(3, 3, 64, 5), false, 0);
    for (double v : r.outputs.expert_probs) EXPECT_EQ(v, 0.5);
    for (double v : r.outputs.hardness_probs) EXPECT_EQ(v, mode == HardnessHeadMode::binary ? 0.5 : 0.25);
  }
}

TEST(Forward, EvalModeIsDeterministic) {
  const Model<float> model(desk_arch(HardnessHeadMode::binary, 3, 0.4));
  const auto p = model.init_params(9);
  const auto batch = random_batch<float>(3, 3, 64, 6);
  const auto a = model.forward(p, batch, false, 1);
  const auto b = model.forward(p, batch, false, 2);
  EXPECT_EQ(a.outputs.expert_probs, b.outputs.expert_probs);
  EXPECT_EQ(a.outputs.hardness_probs, b.outputs.hardness_probs);
}

TEST(Forward, DropoutZeroTrainEqualsEval) {
  const Model<float> model(desk_arch());
  const auto p = model.init_params(9);
  const auto batch = random_batch<float>(3, 3, 64, 6);
  EXPECT_EQ(model.forward(p, batch, true, 123).outputs.expert_logits, model.forward(p, batch, false, 0).outputs.expert_logits);
}

TEST(Forward, DropoutIsSeededInTraining) {
  const Model<float> model(desk_arch(HardnessHeadMode::binary, 3, 0.5));
  const auto p = model.init_params(9);
  const auto batch = random_batch<float>(3, 3, 64, 6);
  const auto a = model.forward(p, batch, true, 5).outputs.expert_logits;
  EXPECT_EQ(a, model.forward(p, batch, true, 5).outputs.expert_logits);
  EXPECT_NE(a, model.forward(p, batch, true, 6).outputs.expert_logits);
  EXPECT_NE(a, model.forward(p, batch, false, 5).outputs.expert_logits);
}

TEST(Forward, ChannelMismatchIsShapeError) {
  const Model<float> model(desk_arch());
  try {
    model.forward(model.init_params(0), random_batch<float>(1, 6, 64, 0), false, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(Forward, FiniteOnLargeInputs) {
  const Model<float> model(desk_arch(HardnessHeadMode::four_class, 6));
  auto batch = random_batch<float>(2, 6, 64, 7);
  for (auto& v : batch.data) v *= 20.0f;
  const auto r = model.forward(model.init_params(4), batch, false, 0);
  for (double v : r.outputs.expert_logits) EXPECT_TRUE(std::isfinite(v));
  for (double v : r.outputs.hardness_probs) EXPECT_TRUE(std::isfinite(v));
}

TEST(DeskBackbone, FeatureLength) {
  const DeskCnn<float> cnn;
  EXPECT_EQ(cnn.feature_dim(), 64u);
  for (int ch : {3, 6}) {
    const Model<float> model(desk_arch(HardnessHeadMode::binary, ch));
    const auto p = model.init_params(1);
    BackboneCache<float> cache;
    std::vector<float> feats;
    cnn.forward(p, random_batch<float>(2, ch, 64, 3), cache, feats);
    EXPECT_EQ(feats.size(), 2u * 64u);
  }
}

TEST(DeskBackbone, ZeroInputZeroBiasGivesZeroFeatures) {
  const Model<float> model(desk_arch());
  const auto p = model.init_params(1);  // biases start at zero
  InputBatch<float> batch{1, 3, 64, 64, std::vector<float>(3 * 64 * 64, 0.0f)};
  BackboneCache<float> cache;
  std::vector<float> feats;
  model.backbone().forward(p, batch, cache, feats);
  for (float v : feats) EXPECT_EQ(v, 0.0f);
}

TEST(DeskBackbone, LayerLayout) {
  const Model<float> model(desk_arch());
  const auto specs = model.param_specs();
  ASSERT_GE(specs.size(), 6u);
  EXPECT_EQ(specs[0].shape, (Shape{8, 3, 3, 3}));
  EXPECT_EQ(specs[2].shape, (Shape{16, 8, 3, 3}));
  EXPECT_EQ(specs[4].shape, (Shape{32, 16, 3, 3}));
  const auto p = model.init_params(0);
  EXPECT_EQ(p.at("shared.weight").shape, (Shape{64, 32}));
  EXPECT_EQ(p.at("head.hardness.weight").shape, (Shape{32, 1}));
  std::set<std::string> names;
  for (const auto& e : p.entries()) EXPECT_TRUE(names.insert(e.name).second);
  EXPECT_EQ(names.size(), 6u + 2u + 3u * 2u + 2u);
}

TEST(Init, HeUniformBoundsAndZeroBiases) {
  const Model<double> model(desk_arch());
  const auto p = model.init_params(42);
  for (const auto& spec : model.param_specs()) {
    const auto& t = p.at(spec.name);
    if (spec.fan_in == 0) {
      for (double v : t.data) EXPECT_EQ(v, 0.0);
      continue;
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(spec.fan_in));
    double max_abs = 0.0;
    for (double v : t.data) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LE(max_abs, bound);
    if (t.size() >= 64) {
      EXPECT_GT(max_abs, 0.5 * bound);
    }
  }
  EXPECT_EQ(model.init_params(42), p);
  EXPECT_NE(model.init_params(43), p);
}

TEST(Arch, ValidationAndJson) {
  const auto a = desk_arch(HardnessHeadMode::four_class, 6, 0.25);
  EXPECT_EQ(arch_from_json(to_json(a)), a);
  auto bad = a;
  bad.dropout = 1.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.input_channels = 4;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.n_expert_heads = 2;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.shared_dim = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = a;
  bad.feature_dim = 2048;
  EXPECT_THROW(Model<float>{bad}, Error);
}

TEST(Backward, DirectionalDerivativeDouble) {
  for (auto mode : {HardnessHeadMode::binary, HardnessHeadMode::four_class}) {
    for (int ch : {3, 6}) {
      const auto arch = desk_arch(mode, ch);
      const Model<double> model(arch);
      const auto p = model.init_params(11 + ch);
      EXPECT_LT(directional_check(arch, p, random_batch<double>(4, ch, 64, 21), true, 5), 1e-5)
          << to_string(mode) << " channels=" << ch;
    }
  }
}

TEST(Backward, DirectionalDerivativeWithDropout) {
  const auto arch = desk_arch(HardnessHeadMode::binary, 3, 0.3);
  const Model<double> model(arch);
  EXPECT_LT(directional_check(arch, model.init_params(2), random_batch<double>(4, 3, 64, 22), true, 6), 1e-5);
}

TEST(Backward, DirectionalDerivativeSingle) {
  for (auto mode : {HardnessHeadMode::binary, HardnessHeadMode::four_class}) {
    const auto arch = desk_arch(mode, 3);
    const Model<float> model(arch);
    EXPECT_LT(directional_check(arch, model.init_params(13), random_batch<float>(4, 3, 64, 23), true, 7), 1e-3)
        << to_string(mode);
  }
}

TEST(Backward, DeadHeadHasZeroGradient) {
  const Model<double> model(desk_arch());
  const auto p = model.init_params(3);
  const auto r = model.forward(p, random_batch<double>(3, 3, 64, 1), false, 0);
  LogitGrads lg;
  test_loss(r.outputs, random_labels(3, 1, 2), &lg);
  std::fill(lg.hardness.begin(), lg.hardness.end(), 0.0);
  for (std::size_t b = 0; b < 3; ++b) lg.expert[b * 3 + 1] = 0.0;
  const auto g = model.backward(p, r.cache, lg);
  for (const char* name : {"head.hardness.weight", "head.hardness.bias", "head.expert1.weight", "head.expert1.bias"})
    for (double v : g.at(name).data) EXPECT_EQ(v, 0.0) << name;
  double other = 0.0;
  for (double v : g.at("head.expert0.weight").data) other += std::abs(v);
  EXPECT_GT(other, 0.0);
}

TEST(Backward, DoublingLossDoublesGradients) {
  const Model<double> model(desk_arch(HardnessHeadMode::four_class));
  const auto p = model.init_params(3);
  const auto r = model.forward(p, random_batch<double>(3, 3, 64, 1), false, 0);
  LogitGrads lg;
  test_loss(r.outputs, random_labels(3, 4, 2), &lg);
  auto lg2 = lg;
  for (auto& v : lg2.expert) v *= 2.0;
  for (auto& v : lg2.hardness) v *= 2.0;
  const auto g1 = model.backward(p, r.cache, lg);
  const auto g2 = model.backward(p, r.cache, lg2);
  for (std::size_t i = 0; i < g1.entries().size(); ++i)
    for (std::size_t j = 0; j < g1.entries()[i].tensor.size(); ++j)
      EXPECT_EQ(g2.entries()[i].tensor.data[j], 2.0 * g1.entries()[i].tensor.data[j]);
}

TEST(Backward, StaleCacheAndShape) {
  const Model<float> model(desk_arch());
  auto p = model.init_params(3);
  const auto r = model.forward(p, random_batch<float>(2, 3, 64, 1), false, 0);
  LogitGrads lg{std::vector<double>(6, 0.1), std::vector<double>(2, 0.1)};
  EXPECT_NO_THROW(model.backward(p, r.cache, lg));
  p.at("shared.bias").data[0] += 1.0f;
  try {
    model.backward(p, r.cache, lg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StaleCache);
  }
  p.at("shared.bias").data[0] -= 1.0f;
  lg.hardness.push_back(0.0);
  EXPECT_THROW(model.backward(p, r.cache, lg), Error);
}

namespace {
HeadOutputs outputs_of(std::vector<double> expert, std::vector<double> hardness) {
  HeadOutputs o;
  o.batch = expert.size() / 3;
  o.hardness_width = hardness.size() / o.batch;
  o.expert_probs = std::move(expert);
  o.hardness_probs = std::move(hardness);
  return o;
}
}  // namespace

TEST(Predict, MeanProbabilityExamples) {
  const auto preds = predict(outputs_of({0.9, 0.8, 0.85, 0.2, 0.3, 0.4, 0.5, 0.5, 0.5}, {0.7, 0.2, 0.5}));
  ASSERT_EQ(preds.size(), 3u);
  EXPECT_NEAR(preds[0].score, 0.85, 1e-15);
  EXPECT_EQ(preds[0].label, ClassLabel::NMF);
  EXPECT_NEAR(preds[1].score, 0.3, 1e-15);
  EXPECT_EQ(preds[1].label, ClassLabel::AMF);
  EXPECT_EQ(preds[2].score, 0.5);
  EXPECT_EQ(preds[2].label, ClassLabel::NMF);
  EXPECT_EQ(preds[0].hardness, code(HardnessLabel::Easy));
  EXPECT_EQ(preds[1].hardness, code(HardnessLabel::Hard));
  EXPECT_EQ(preds[2].hardness, code(HardnessLabel::Easy));
}

TEST(Predict, FourClassArgmaxTiesGoLow) {
  const auto preds = predict(outputs_of({0.1, 0.1, 0.1, 0.6, 0.6, 0.6}, {0.1, 0.4, 0.4, 0.1, 0.25, 0.25, 0.25, 0.25}));
  EXPECT_EQ(preds[0].hardness, 1);
  EXPECT_EQ(preds[1].hardness, 0);
}

TEST(Predict, ClassDependsOnlyOnMeanSide) {
  Rng rng(4);
  for (int t = 0; t < 500; ++t) {
    std::vector<double> e = {rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99), rng.uniform(0.01, 0.99)};
    const double mean = (e[0] + e[1] + e[2]) / 3.0;
    const auto p = predict_one(outputs_of(e, {0.5}), 0);
    EXPECT_EQ(p.label, mean >= 0.5 ? ClassLabel::NMF : ClassLabel::AMF);
  }
}

TEST(FourClassTarget, Layout) {
  EXPECT_EQ(four_class_target(ClassLabel::NMF, HardnessLabel::Easy), 0);
  EXPECT_EQ(four_class_target(ClassLabel::NMF, HardnessLabel::Hard), 1);
  EXPECT_EQ(four_class_target(ClassLabel::AMF, HardnessLabel::Easy), 2);
  EXPECT_EQ(four_class_target(ClassLabel::AMF, HardnessLabel::Hard), 3);
}
