#include <gtest/gtest.h>

#include "acl/verify.hpp"

using namespace acl;

TEST(Verification, DefaultBatteryPasses) {
  const auto results = run_verification(1993);
  ASSERT_EQ(results.size(), 6u);
  for (const auto& r : results) {
    EXPECT_TRUE(r.pass) << r.name << ": " << r.detail;
    EXPECT_GT(r.cases, 0u) << r.name;
  }
}

TEST(Verification, CampaignSizesAreHonoured) {
  const auto results = run_verification(5);
  EXPECT_EQ(results[0].cases, 3000u);  // 1000 pairs x 3 dims
  EXPECT_EQ(results[1].cases, 20u);
  EXPECT_EQ(results[2].cases, 10000u);
  EXPECT_EQ(results[3].cases, 500u);
  EXPECT_EQ(results[4].cases, 1000u);
  EXPECT_EQ(results[5].cases, 3u * 10u * 8u);  // seeds x probes x tensors
}

TEST(Verification, EmptyCampaignsPassVacuouslyWithWarning) {
  VerifySizes none;
  none.lemma1_pairs = none.lemma2_sets = none.threshold_draws = 0;
  none.markov_draws = none.stability_draws = none.grad_probes = 0;
  for (const auto& r : run_verification(1, none)) {
    EXPECT_TRUE(r.pass) << r.name;
    EXPECT_EQ(r.cases, 0u);
    EXPECT_EQ(r.detail.rfind("warning", 0), 0u) << r.name;
  }
}

TEST(Verification, DeterministicInSeed) {
  const auto a = run_verification(42);
  const auto b = run_verification(42);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].worst, b[i].worst) << a[i].name;
}

TEST(Verification, GradientCheckCatchesABrokenGradient) {
  // A deliberately wrong "analytic" gradient must be caught by the same
  // relative-error comparison the battery uses.
  Rng rng(1);
  ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.hidden = {4};
  cfg.embed_dim = 3;
  auto [b, a] = init_model(cfg, rng);
  const Vector x = rng.normal_vector(3);
  PrototypeTable t;
  for (ClassId c = 0; c < 3; ++c) t.prototypes.emplace(c, rng.unit_vector(3));
  ForwardResult fwd = embed_with_tape(b, &a, x);
  LossGrad lg = acl_loss(fwd.embedding, 1, t, 0.5);
  for (auto& g : lg.grad) g = -g;
  const ModelGrads wrong = backprop(b, &a, fwd.tape, lg.grad);
  const ParamSet fd = finite_diff_grad(
      [&](const ParamSet& ps) {
        Backbone bb{b.config, ps};
        return acl_loss(embed(bb, &a, x), 1, t, 0.5).loss;
      },
      b.params, kGradStep);
  EXPECT_GT(relative_error(wrong.backbone[0].data, fd[0].data), kGradTolerance);
}
