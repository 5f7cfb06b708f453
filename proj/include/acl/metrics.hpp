#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "acl/errors.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

// a[b][j]: accuracy on task j's test set after learning task b (0-based
// here; row b holds b + 1 entries).
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t tasks = 0) : tasks_(tasks) {}

  std::size_t tasks() const noexcept { return tasks_; }
  std::size_t completed() const noexcept { return rows_.size(); }
  bool complete() const noexcept { return tasks_ > 0 && rows_.size() == tasks_; }

  void add_row(Vector row) {
    if (rows_.size() >= tasks_) throw DimensionMismatch("accuracy matrix already has all rows");
    if (row.size() != rows_.size() + 1) {
      throw DimensionMismatch("row " + std::to_string(rows_.size() + 1) + " must have " +
                              std::to_string(rows_.size() + 1) + " entries");
    }
    for (double a : row) {
      if (!(a >= 0.0 && a <= 1.0)) throw DimensionMismatch("accuracy outside [0, 1]");
    }
    rows_.push_back(std::move(row));
  }

  double at(std::size_t b, std::size_t j) const { return rows_.at(b).at(j); }
  const Vector& row(std::size_t b) const { return rows_.at(b); }

  // A_b: mean accuracy over tasks seen after stage b.
  double stage_accuracy(std::size_t b) const {
    const auto& r = rows_.at(b);
    double s = 0.0;
    for (double a : r) s += a;
    return s / static_cast<double>(r.size());
  }

 private:
  std::size_t tasks_;
  std::vector<Vector> rows_;
};

namespace detail {
inline void require_complete(const AccuracyMatrix& m, const char* what) {
  if (!m.complete()) throw IncompleteMatrix(std::string(what) + " needs a complete accuracy matrix");
}
}  // namespace detail

inline double last_accuracy(const AccuracyMatrix& m) {
  detail::require_complete(m, "last_accuracy");
  return m.stage_accuracy(m.tasks() - 1);
}

inline double avg_incremental_accuracy(const AccuracyMatrix& m) {
  detail::require_complete(m, "avg_incremental_accuracy");
  double s = 0.0;
  for (std::size_t b = 0; b < m.tasks(); ++b) s += m.stage_accuracy(b);
  return s / static_cast<double>(m.tasks());
}

// Mean over earlier tasks of (best accuracy before the last stage) minus
// (accuracy after the last stage). Negative values mean backward transfer.
inline double forgetting(const AccuracyMatrix& m) {
  if (m.tasks() < 2) throw SingleTask("forgetting needs at least two tasks");
  detail::require_complete(m, "forgetting");
  const std::size_t last = m.tasks() - 1;
  double s = 0.0;
  for (std::size_t j = 0; j < last; ++j) {
    double best = m.at(j, j);
    for (std::size_t b = j; b < last; ++b) best = std::max(best, m.at(b, j));
    s += best - m.at(last, j);
  }
  return s / static_cast<double>(last);
}

enum class PlasticityMode {
  best_over_history,  // max_{b >= j} a[b][j]
  just_learned,       // a[j][j]
};

inline double plasticity(const AccuracyMatrix& m, PlasticityMode mode = PlasticityMode::best_over_history) {
  detail::require_complete(m, "plasticity");
  double s = 0.0;
  for (std::size_t j = 0; j < m.tasks(); ++j) {
    double best = m.at(j, j);
    if (mode == PlasticityMode::best_over_history) {
      for (std::size_t b = j; b < m.tasks(); ++b) best = std::max(best, m.at(b, j));
    }
    s += best;
  }
  return s / static_cast<double>(m.tasks());
}

// One side-by-side evaluation of an inequality lhs <= rhs.
struct BoundReport {
  std::string context;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;

  double slack() const { return rhs - lhs; }
  bool pass() const { return slack() >= -tolerance; }
};

inline constexpr double kMarkovTolerance = 1e-12;
inline constexpr double kStabilityTolerance = 1e-9;

// Misclassification rate <= mean(loss) / log 2.
inline BoundReport check_markov_bound(std::span<const double> losses, const std::vector<bool>& correct,
                                      std::string context = "markov") {
  if (losses.size() != correct.size()) throw LengthMismatch("check_markov_bound: losses vs correctness flags");
  if (losses.empty()) throw EmptyInput("check_markov_bound: no samples");
  double wrong = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    wrong += correct[i] ? 0.0 : 1.0;
    total += losses[i];
  }
  const double n = static_cast<double>(losses.size());
  return {std::move(context), wrong / n, (total / n) / std::numbers::ln2, kMarkovTolerance};
}

// mean ||new - old||^2 <= 2 (mean ||new - p_y||^2 + mean ||old - p_y||^2).
inline BoundReport check_stability_bound(const std::vector<UnitVector>& old_embeddings,
                                         const std::vector<UnitVector>& new_embeddings,
                                         const PrototypeTable& prototypes, const std::vector<ClassId>& labels,
                                         std::string context = "stability") {
  if (old_embeddings.size() != new_embeddings.size() || old_embeddings.size() != labels.size()) {
    throw LengthMismatch("check_stability_bound: old/new/labels lengths differ");
  }
  if (labels.empty()) throw EmptyInput("check_stability_bound: no samples");
  double drift = 0.0;
  double new_to_proto = 0.0;
  double old_to_proto = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = prototypes.prototypes.find(labels[i]);
    if (it == prototypes.prototypes.end()) throw UnknownLabel("no prototype for class " + std::to_string(labels[i]));
    const auto& p = it->second.values();
    drift += squared_distance(new_embeddings[i].values(), old_embeddings[i].values());
    new_to_proto += squared_distance(new_embeddings[i].values(), p);
    old_to_proto += squared_distance(old_embeddings[i].values(), p);
  }
  const double n = static_cast<double>(labels.size());
  return {std::move(context), drift / n, 2.0 * (new_to_proto / n + old_to_proto / n), kStabilityTolerance};
}

// Largest | ||a - b||^2 - 2 (1 - cos(a, b)) | over n random unit pairs.
inline double verify_lemma1(std::size_t n, std::size_t dim, Rng& rng) {
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const UnitVector a = rng.unit_vector(dim);
    const UnitVector b = rng.unit_vector(dim);
    worst = std::max(worst, std::abs(squared_distance(a.values(), b.values()) - 2.0 * (1.0 - cosine_sim(a, b))));
  }
  return worst;
}

struct Lemma2Report {
  BoundReport bound;             // lhs: spread around the mean, rhs: best probe
  double gradient_residual = 0;  // max |(2/n) sum (mean - x_i)|
  double normalization_gap = 0;  // || normalize(mean) - mean ||, logged only
  bool pass() const { return bound.pass() && gradient_residual <= 1e-12; }
};

// Checks that the unnormalized class mean minimizes the mean squared distance
// to the class embeddings against `n_probes` random perturbations of it.
inline Lemma2Report verify_lemma2(const std::vector<UnitVector>& embeddings, Rng& rng, std::size_t n_probes,
                                  double probe_scale = 0.1) {
  if (embeddings.size() < 2) throw TooFewSamples("verify_lemma2 needs at least two embeddings");
  const std::size_t d = embeddings.front().dim();
  const double n = static_cast<double>(embeddings.size());
  Vector mean(d, 0.0);
  for (const auto& e : embeddings) {
    if (e.dim() != d) throw DimensionMismatch("verify_lemma2: embedding dims differ");
    for (std::size_t i = 0; i < d; ++i) mean[i] += e[i];
  }
  for (auto& m : mean) m /= n;

  auto spread = [&](std::span<const double> z) {
    double s = 0.0;
    for (const auto& e : embeddings) s += squared_distance(e.values(), z);
    return s / n;
  };

  Lemma2Report r;
  r.bound.context = "lemma2";
  r.bound.tolerance = 1e-12;
  r.bound.lhs = spread(mean);
  r.bound.rhs = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < n_probes; ++p) {
    Vector z = mean;
    for (auto& zi : z) zi += probe_scale * rng.normal();
    r.bound.rhs = std::min(r.bound.rhs, spread(z));
  }
  if (n_probes == 0) r.bound.rhs = r.bound.lhs;

  Vector grad(d, 0.0);
  for (const auto& e : embeddings) {
    for (std::size_t i = 0; i < d; ++i) grad[i] += 2.0 * (mean[i] - e[i]) / n;
  }
  for (double g : grad) r.gradient_residual = std::max(r.gradient_residual, std::abs(g));

  const double mean_norm = norm(mean);
  if (mean_norm > kNormEpsilon) {
    const UnitVector nm = l2_normalize(mean);
    r.normalization_gap = std::sqrt(squared_distance(nm.values(), mean));
  } else {
    r.normalization_gap = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace acl
