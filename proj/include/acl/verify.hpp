#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "acl/adaptation.hpp"
#include "acl/metrics.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

struct VerifySizes {
  std::size_t lemma1_pairs = 1000;
  std::vector<std::size_t> lemma1_dims = {2, 16, 64};
  std::size_t lemma2_sets = 20;
  std::size_t lemma2_points = 50;
  std::size_t lemma2_probes = 100;
  std::size_t threshold_draws = 10000;
  std::size_t markov_draws = 500;
  std::size_t stability_draws = 1000;
  std::size_t grad_probes = 10;
  std::size_t grad_seeds = 3;
};

struct CheckResult {
  std::string name;
  bool pass = true;
  double worst = 0.0;      // worst observed statistic
  double threshold = 0.0;  // pass iff worst <= threshold (or per-check rule)
  std::size_t cases = 0;
  std::string detail;      // failing case dump or warning
  double seconds = 0.0;
};

inline constexpr double kLemma1Tolerance = 1e-12;
inline constexpr double kThresholdTolerance = 1e-12;
inline constexpr double kGradStep = 1e-5;
inline constexpr double kGradTolerance = 1e-4;

namespace detail {

inline std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

inline std::string dump_vector(std::span<const double> v) {
  std::string s = "[";
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.17g", i ? "," : "", v[i]);
    s += buf;
  }
  return s + "]";
}

inline PrototypeTable random_table(std::size_t classes, std::size_t dim, Rng& rng) {
  PrototypeTable t;
  for (std::size_t c = 0; c < classes; ++c) t.prototypes.emplace(static_cast<ClassId>(c), rng.unit_vector(dim));
  return t;
}

// Unit vectors scattered around a random direction, so class structure and
// misclassifications both occur.
inline std::vector<UnitVector> clustered_units(std::size_t n, const UnitVector& center, double spread, Rng& rng) {
  std::vector<UnitVector> out;
  out.reserve(n);
  while (out.size() < n) {
    Vector v = center.values();
    for (auto& x : v) x += spread * rng.normal();
    if (norm(v) > kNormEpsilon) out.push_back(l2_normalize(v));
  }
  return out;
}

inline double pick_temperature(Rng& rng) {
  static constexpr double grid[] = {0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  return grid[rng.index(std::size(grid))];
}

template <typename Fn>
CheckResult timed(std::string name, Fn&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = body();
  r.name = std::move(name);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (r.cases == 0) {
    r.pass = true;
    r.detail = "warning: no cases run, vacuous pass";
  }
  return r;
}

}  // namespace detail

// | ||a - b||^2 - 2(1 - cos) | over random unit pairs in each dimension.
inline CheckResult check_lemma1(const VerifySizes& sizes, Rng rng) {
  return detail::timed("lemma1_identity", [&] {
    CheckResult r;
    r.threshold = kLemma1Tolerance;
    for (std::size_t dim : sizes.lemma1_dims) {
      Rng sub = rng.fork(dim);
      const double w = sizes.lemma1_pairs ? verify_lemma1(sizes.lemma1_pairs, dim, sub) : 0.0;
      r.cases += sizes.lemma1_pairs;
      if (w > r.worst) {
        r.worst = w;
        r.detail = "dim=" + std::to_string(dim);
      }
    }
    r.pass = r.worst <= r.threshold;
    return r;
  });
}

// The unnormalized mean against random probes, plus the zero gradient there.
inline CheckResult check_lemma2(const VerifySizes& sizes, Rng rng) {
  return detail::timed("lemma2_mean_minimizer", [&] {
    CheckResult r;
    r.threshold = 1e-12;
    double worst_gap = 0.0;
    for (std::size_t s = 0; s < sizes.lemma2_sets; ++s) {
      if (sizes.lemma2_points < 2) break;
      Rng sub = rng.fork(s + 1);
      const UnitVector center = sub.unit_vector(16);
      const auto points = detail::clustered_units(sizes.lemma2_points, center, 0.4, sub);
      const Lemma2Report rep = verify_lemma2(points, sub, sizes.lemma2_probes);
      ++r.cases;
      // Worst statistic: how far the mean is from winning, or the gradient residual.
      const double stat = std::max(-rep.bound.slack(), rep.gradient_residual);
      if (!std::isnan(rep.normalization_gap)) worst_gap = std::max(worst_gap, rep.normalization_gap);
      if (!rep.pass() && r.pass) {
        r.pass = false;
        r.detail = "set=" + std::to_string(s) + detail::fmt(" lhs=%.17g rhs=%.17g grad=%.3g", rep.bound.lhs,
                                                            rep.bound.rhs, rep.gradient_residual);
      }
      r.worst = std::max(r.worst, stat);
    }
    if (r.pass) r.detail = detail::fmt("max normalization gap %.6g (logged)", worst_gap);
    return r;
  });
}

// Every cosine-misclassified sample carries acl_loss >= log 2.
inline CheckResult check_threshold(const VerifySizes& sizes, Rng rng) {
  return detail::timed("misclassification_threshold", [&] {
    CheckResult r;
    r.threshold = kThresholdTolerance;
    r.worst = -std::numeric_limits<double>::infinity();
    std::size_t violations = 0;
    std::size_t misclassified = 0;
    for (std::size_t i = 0; i < sizes.threshold_draws; ++i) {
      const std::size_t dim = 2 + rng.index(15);
      const std::size_t classes = 2 + rng.index(9);
      const PrototypeTable table = detail::random_table(classes, dim, rng);
      const UnitVector e = rng.unit_vector(dim);
      const ClassId y = static_cast<ClassId>(rng.index(classes));
      const double tau = detail::pick_temperature(rng);
      const double loss = acl_loss(e, y, table, tau).loss;
      ++r.cases;
      if (nearest_prototype(table, e) == y) continue;
      ++misclassified;
      const double deficit = std::numbers::ln2 - loss;
      r.worst = std::max(r.worst, deficit);
      if (deficit > r.threshold) {
        if (violations++ == 0) {
          r.detail = "draw=" + std::to_string(i) + detail::fmt(" loss=%.17g tau=%g", loss, tau) +
                     " e=" + detail::dump_vector(e.values());
        }
      }
    }
    r.pass = violations == 0;
    if (misclassified == 0) r.worst = 0.0;
    if (r.pass) r.detail = std::to_string(misclassified) + " misclassified samples checked";
    return r;
  });
}

// Batch misclassification rate <= mean acl_loss / log 2.
inline CheckResult check_markov_campaign(const VerifySizes& sizes, Rng rng) {
  return detail::timed("markov_bound", [&] {
    CheckResult r;
    r.threshold = kMarkovTolerance;
    r.worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sizes.markov_draws; ++i) {
      const std::size_t dim = 4 + rng.index(13);
      const std::size_t classes = 2 + rng.index(7);
      const PrototypeTable table = detail::random_table(classes, dim, rng);
      const double tau = detail::pick_temperature(rng);
      const std::size_t batch = 1 + rng.index(64);
      std::vector<double> losses;
      std::vector<bool> correct;
      for (std::size_t b = 0; b < batch; ++b) {
        const ClassId y = static_cast<ClassId>(rng.index(classes));
        const auto e = detail::clustered_units(1, table.prototypes.at(y), rng.uniform(0.0, 1.5), rng).front();
        losses.push_back(acl_loss(e, y, table, tau).loss);
        correct.push_back(nearest_prototype(table, e) == y);
      }
      const BoundReport rep = check_markov_bound(losses, correct);
      ++r.cases;
      r.worst = std::max(r.worst, -rep.slack());
      if (!rep.pass() && r.pass) {
        r.pass = false;
        r.detail = "draw=" + std::to_string(i) + detail::fmt(" lhs=%.17g rhs=%.17g", rep.lhs, rep.rhs);
      }
    }
    if (r.cases == 0) r.worst = 0.0;
    return r;
  });
}

// mean drift <= 2 (new-to-proto + old-to-proto) on random unit triples.
inline CheckResult check_stability_campaign(const VerifySizes& sizes, Rng rng) {
  return detail::timed("stability_bound", [&] {
    CheckResult r;
    r.threshold = kStabilityTolerance;
    r.worst = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sizes.stability_draws; ++i) {
      const std::size_t dim = 2 + rng.index(31);
      const std::size_t classes = 1 + rng.index(5);
      const PrototypeTable table = detail::random_table(classes, dim, rng);
      const std::size_t n = 1 + rng.index(16);
      std::vector<UnitVector> olds, news;
      std::vector<ClassId> labels;
      for (std::size_t k = 0; k < n; ++k) {
        labels.push_back(static_cast<ClassId>(rng.index(classes)));
        olds.push_back(rng.unit_vector(dim));
        news.push_back(rng.unit_vector(dim));
      }
      const BoundReport rep = check_stability_bound(olds, news, table, labels);
      ++r.cases;
      r.worst = std::max(r.worst, -rep.slack());
      if (!rep.pass() && r.pass) {
        r.pass = false;
        r.detail = "draw=" + std::to_string(i) + detail::fmt(" lhs=%.17g rhs=%.17g", rep.lhs, rep.rhs);
      }
    }
    if (r.cases == 0) r.worst = 0.0;
    return r;
  });
}

// Analytic backprop through embed -> normalize -> acl_loss against central
// differences, per parameter tensor, on a small tanh net whose adapter
// up-projection is non-zero so every group carries gradient.
inline CheckResult check_gradients(const VerifySizes& sizes, std::uint64_t base_seed) {
  return detail::timed("gradient_check", [&] {
    CheckResult r;
    r.threshold = kGradTolerance;
    ModelConfig cfg;
    cfg.input_dim = 6;
    cfg.hidden = {8, 7};
    cfg.embed_dim = 5;
    cfg.adapter_rank = 3;
    cfg.activation = Activation::tanh;
    for (std::size_t s = 0; s < sizes.grad_seeds; ++s) {
      const std::uint64_t seed = base_seed + s;
      Rng rng(seed);
      auto [backbone, adapter] = init_model(cfg, rng);
      for (auto& v : adapter.params[1].data) v = rng.uniform(-0.5, 0.5);
      for (std::size_t l = 0; l < backbone.layer_count(); ++l) {
        for (auto& v : backbone.params[2 * l + 1].data) v = rng.uniform(-0.2, 0.2);
      }
      for (std::size_t p = 0; p < sizes.grad_probes; ++p) {
        const Vector x = rng.normal_vector(cfg.input_dim);
        const PrototypeTable table = detail::random_table(3, cfg.embed_dim, rng);
        const ClassId y = static_cast<ClassId>(rng.index(3));
        const double tau = 0.5;

        ForwardResult fwd = embed_with_tape(backbone, &adapter, x);
        const LossGrad lg = acl_loss(fwd.embedding, y, table, tau);
        const ModelGrads analytic = backprop(backbone, &adapter, fwd.tape, lg.grad);

        const ParamSet fd_backbone = finite_diff_grad(
            [&](const ParamSet& ps) {
              Backbone b{backbone.config, ps};
              return acl_loss(embed(b, &adapter, x), y, table, tau).loss;
            },
            backbone.params, kGradStep);
        const ParamSet fd_adapter = finite_diff_grad(
            [&](const ParamSet& ps) {
              Adapter a = adapter;
              a.params = ps;
              return acl_loss(embed(backbone, &a, x), y, table, tau).loss;
            },
            adapter.params, kGradStep);

        auto compare = [&](const ParamSet& a, const ParamSet& fd) {
          for (std::size_t t = 0; t < a.size(); ++t) {
            const double err = relative_error(a[t].data, fd[t].data);
            ++r.cases;
            if (err > r.worst) r.worst = err;
            if (err > r.threshold && r.pass) {
              r.pass = false;
              r.detail = "seed=" + std::to_string(seed) + " probe=" + std::to_string(p) + " group=" + a[t].name +
                         detail::fmt(" rel_err=%.6g", err) + " label=" + std::to_string(y) +
                         " x=" + detail::dump_vector(x);
            }
          }
        };
        compare(analytic.backbone, fd_backbone);
        compare(analytic.adapter, fd_adapter);
      }
    }
    return r;
  });
}

inline std::vector<CheckResult> run_verification(std::uint64_t seed, const VerifySizes& sizes = {}) {
  Rng root(seed);
  return {
      check_lemma1(sizes, root.fork(1)),
      check_lemma2(sizes, root.fork(2)),
      check_threshold(sizes, root.fork(3)),
      check_markov_campaign(sizes, root.fork(4)),
      check_stability_campaign(sizes, root.fork(5)),
      check_gradients(sizes, seed),
  };
}

}  // namespace acl
