#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "acl/adaptation.hpp"

using namespace acl;

namespace {

UnitVector unit(Vector v) { return l2_normalize(v); }

PrototypeTable table_of(std::vector<std::pair<ClassId, Vector>> entries) {
  PrototypeTable t;
  for (auto& [c, v] : entries) t.prototypes.emplace(c, unit(v));
  return t;
}

// Three well separated Gaussian blobs in R^4.
LabeledDataset toy_data(std::size_t per_class, Rng& rng) {
  LabeledDataset d;
  d.split = "toy";
  for (ClassId c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Vector x(4, 0.0);
      x[c] = 2.0;
      for (auto& v : x) v += 0.3 * rng.normal();
      d.samples.push_back({x, c});
    }
  }
  return d;
}

Model toy_model(Rng& rng) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.hidden = {8};
  cfg.embed_dim = 4;
  cfg.adapter_rank = 2;
  auto [b, a] = init_model(cfg, rng);
  return Model{b, a};
}

}  // namespace

TEST(Prototypes, SymmetricPairGivesDiagonal) {
  const PrototypeTable t = prototypes_from_embeddings({unit({1.0, 0.0}), unit({0.0, 1.0})}, {0, 0});
  EXPECT_NEAR(t.prototypes.at(0)[0], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(t.prototypes.at(0)[1], std::sqrt(0.5), 1e-15);
}

TEST(Prototypes, SingleSampleIsItsOwnPrototype) {
  const UnitVector e = unit({0.3, -0.4, 1.2});
  const PrototypeTable t = prototypes_from_embeddings({e}, {7});
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(t.prototypes.at(7)[k], e[k], 1e-15);
}

TEST(Prototypes, AntipodalPairIsDegenerate) {
  EXPECT_THROW(prototypes_from_embeddings({unit({1.0, 0.0}), unit({-1.0, 0.0})}, {0, 0}), DegenerateVector);
}

TEST(Prototypes, ComputedFromModelCarrySourceHash) {
  Rng rng(5);
  const Model m = toy_model(rng);
  const LabeledDataset d = toy_data(5, rng);
  const PrototypeTable t = compute_prototypes(m, d);
  EXPECT_EQ(t.size(), 3u);
  EXPECT_EQ(t.source_hash, m.hash());
}

TEST(AclLoss, SinglePrototypeIsZero) {
  const PrototypeTable t = table_of({{3, {1.0, 2.0}}});
  const LossGrad lg = acl_loss(unit({-1.0, 0.5}), 3, t, 0.1);
  EXPECT_NEAR(lg.loss, 0.0, 1e-15);
  for (double g : lg.grad) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(AclLoss, ClosedFormAtOwnPrototype) {
  const PrototypeTable t = table_of({{0, {1.0, 0.0}}, {1, {0.0, 1.0}}});
  EXPECT_NEAR(acl_loss(unit({1.0, 0.0}), 0, t, 0.1).loss, 4.539889921686465e-05, 1e-19);
}

TEST(AclLoss, ClosedFormAtWrongPrototypeExceedsLog2) {
  const PrototypeTable t = table_of({{0, {1.0, 0.0}}, {1, {0.0, 1.0}}});
  const double loss = acl_loss(unit({0.0, 1.0}), 0, t, 0.1).loss;
  EXPECT_NEAR(loss, 10.000045398899218, 1e-12);
  EXPECT_GE(loss, std::numbers::ln2);
}

TEST(AclLoss, GradientMatchesClosedForm) {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    PrototypeTable t;
    for (ClassId c = 0; c < 4; ++c) t.prototypes.emplace(c, rng.unit_vector(5));
    const UnitVector e = rng.unit_vector(5);
    const ClassId y = static_cast<ClassId>(rng.index(4));
    const double tau = 0.2;
    Vector s;
    for (const auto& [c, p] : t.prototypes) s.push_back(dot(e.values(), p.values()) / tau);
    const Vector w = softmax(s);
    const LossGrad lg = acl_loss(e, y, t, tau);
    EXPECT_NEAR(lg.loss, log_sum_exp(s) - s[y], 1e-12);
    for (std::size_t k = 0; k < 5; ++k) {
      double expect = -t.prototypes.at(y)[k] / tau;
      for (ClassId c = 0; c < 4; ++c) expect += w[c] * t.prototypes.at(c)[k] / tau;
      EXPECT_NEAR(lg.grad[k], expect, 1e-12);
    }
  }
}

TEST(AclLoss, RejectsUnknownLabelAndBadTemperature) {
  const PrototypeTable t = table_of({{0, {1.0, 0.0}}});
  EXPECT_THROW(acl_loss(unit({1.0, 0.0}), 1, t, 0.1), UnknownLabel);
  EXPECT_THROW(acl_loss(unit({1.0, 0.0}), 0, t, 0.0), InvalidConfig);
}

TEST(CeAdaptLoss, UniformLogitsGiveLogC) {
  LinearHead h(2);
  h.add_classes({0, 1, 2});
  EXPECT_NEAR(ce_adapt_loss(unit({1.0, 0.0}), 1, h).loss, 1.0986122886681098, 1e-15);
}

TEST(CeAdaptLoss, LargeMarginApproachesZero) {
  LinearHead h(2);
  h.add_classes({0, 1});
  h.params[0].at(0, 0) = 60.0;
  EXPECT_LT(ce_adapt_loss(unit({1.0, 0.0}), 0, h).loss, 1e-20);
}

TEST(CeAdaptLoss, HeadGradientMatchesFiniteDifferences) {
  Rng rng(3);
  LinearHead h(4);
  h.add_classes({0, 1, 2});
  for (std::size_t t = 0; t < 2; ++t) {
    for (auto& v : h.params[t].data) v = rng.normal();
  }
  const UnitVector e = rng.unit_vector(4);
  const CeLossGrad ce = ce_adapt_loss(e, 2, h);
  const ParamSet fd = finite_diff_grad(
      [&](const ParamSet& ps) {
        LinearHead copy = h;
        copy.params = ps;
        return ce_adapt_loss(e, 2, copy).loss;
      },
      h.params, 1e-5);
  for (std::size_t t = 0; t < fd.size(); ++t) EXPECT_LE(relative_error(ce.d_head[t].data, fd[t].data), 1e-4);
  // d/de of W e + b through the softmax: W^T (softmax - onehot).
  Vector delta = softmax(h.logits(e.span()));
  delta[2] -= 1.0;
  const Vector expect = matvec_transposed(h.params[0], delta);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(ce.d_embedding[k], expect[k], 1e-14);
}

TEST(Adapt, ZeroEpochsReturnsModelUnchanged) {
  Rng rng(1);
  const Model m = toy_model(rng);
  AdaptConfig cfg;
  cfg.epochs = 0;
  const AdaptResult r = adapt(m, toy_data(10, rng), cfg, rng);
  EXPECT_EQ(r.model, m);
  EXPECT_TRUE(r.report.epochs.empty());
}

TEST(Adapt, DisabledModeReturnsModelUnchanged) {
  Rng rng(1);
  const Model m = toy_model(rng);
  AdaptConfig cfg;
  cfg.mode = AdaptMode::disabled;
  EXPECT_EQ(adapt(m, toy_data(10, rng), cfg, rng).model, m);
}

TEST(Adapt, ZeroLearningRateStillReports) {
  Rng rng(1);
  const Model m = toy_model(rng);
  AdaptConfig cfg;
  cfg.learning_rate = 0.0;
  const AdaptResult r = adapt(m, toy_data(10, rng), cfg, rng);
  EXPECT_EQ(r.model, m);
  ASSERT_EQ(r.report.epochs.size(), 1u);
  EXPECT_EQ(r.report.epochs[0].stability.lhs, 0.0);
  EXPECT_TRUE(r.report.all_bounds_pass());
}

TEST(Adapt, OneEpochReducesAclLossOnSeparableToyData) {
  Rng rng(2);
  const Model m = toy_model(rng);
  const LabeledDataset d = toy_data(40, rng);
  AdaptConfig cfg;
  cfg.learning_rate = 0.05;
  const AdaptResult r = adapt(m, d, cfg, rng);
  ASSERT_EQ(r.report.epochs.size(), 1u);
  EXPECT_LT(r.report.epochs[0].eval_acl_loss, r.report.initial_acl_loss);
  EXPECT_TRUE(r.report.all_bounds_pass());
  EXPECT_EQ(r.report.prototype_source, m.hash());
  EXPECT_NE(r.model.backbone, m.backbone);
  EXPECT_EQ(r.report.batch_markov.size(), (d.size() + cfg.batch_size - 1) / cfg.batch_size);
  EXPECT_EQ(r.report.threshold_checks, d.size());
  EXPECT_EQ(r.report.threshold_violations, 0u);
}

TEST(Adapt, LightweightOnlyFreezesBackbone) {
  Rng rng(4);
  const Model m = toy_model(rng);
  AdaptConfig cfg;
  cfg.mode = AdaptMode::lightweight_only;
  cfg.epochs = 2;
  const AdaptResult r = adapt(m, toy_data(20, rng), cfg, rng);
  EXPECT_EQ(r.model.backbone, m.backbone);
  EXPECT_NE(*r.model.adapter, *m.adapter);
  EXPECT_EQ(r.report.epochs.size(), 2u);

  Model bare = m;
  bare.adapter.reset();
  EXPECT_THROW(adapt(bare, toy_data(5, rng), cfg, rng), InvalidConfig);
}

TEST(Adapt, CeAblationStillChecksBounds) {
  Rng rng(6);
  const Model m = toy_model(rng);
  AdaptConfig cfg;
  cfg.mode = AdaptMode::ce_ablation;
  const AdaptResult r = adapt(m, toy_data(20, rng), cfg, rng);
  EXPECT_NE(r.model.backbone, m.backbone);
  EXPECT_TRUE(r.report.all_bounds_pass());
}

TEST(Adapt, DeterministicInSeed) {
  Rng rng(8);
  const Model m = toy_model(rng);
  const LabeledDataset d = toy_data(15, rng);
  Rng a(99), b(99);
  EXPECT_EQ(adapt(m, d, AdaptConfig{}, a).model, adapt(m, d, AdaptConfig{}, b).model);
}

TEST(AdaptConfig, Validation) {
  AdaptConfig c;
  c.temperature = -1.0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = AdaptConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c = AdaptConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidConfig);
}

TEST(AdaptMode, RoundTripsThroughStrings) {
  for (AdaptMode m : {AdaptMode::acl, AdaptMode::ce_ablation, AdaptMode::lightweight_only, AdaptMode::disabled}) {
    EXPECT_EQ(parse_adapt_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_adapt_mode("ACL"), InvalidConfig);
}
