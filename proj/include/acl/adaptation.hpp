#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "acl/dataset.hpp"
#include "acl/errors.hpp"
#include "acl/metrics.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

enum class AdaptMode { acl, ce_ablation, lightweight_only, disabled };

inline std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::acl: return "acl";
    case AdaptMode::ce_ablation: return "ce_ablation";
    case AdaptMode::lightweight_only: return "lightweight_only";
    case AdaptMode::disabled: return "disabled";
  }
  return "?";
}

inline AdaptMode parse_adapt_mode(const std::string& s) {
  if (s == "acl") return AdaptMode::acl;
  if (s == "ce_ablation") return AdaptMode::ce_ablation;
  if (s == "lightweight_only") return AdaptMode::lightweight_only;
  if (s == "disabled") return AdaptMode::disabled;
  throw InvalidConfig("unknown adaptation mode '" + s + "'");
}

struct AdaptConfig {
  double temperature = 0.1;
  std::size_t epochs = 1;
  double learning_rate = 0.02;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  AdaptMode mode = AdaptMode::acl;
  bool first_task_only = false;

  void validate() const {
    if (!(temperature > 0.0)) throw InvalidConfig("adapt.temperature must be > 0");
    if (!(learning_rate >= 0.0)) throw InvalidConfig("adapt.lr must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("adapt.momentum must be in [0, 1)");
    if (batch_size < 1) throw InvalidConfig("adapt.batch_size must be >= 1");
  }
};

// Prototype of each class: the renormalized mean of its unit embeddings.
inline PrototypeTable prototypes_from_embeddings(const std::vector<UnitVector>& embeddings,
                                                 const std::vector<ClassId>& labels) {
  if (embeddings.size() != labels.size()) throw LengthMismatch("prototypes: embeddings vs labels");
  std::map<ClassId, std::pair<Vector, std::size_t>> sums;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    auto& [sum, count] = sums[labels[i]];
    if (sum.empty()) sum.assign(embeddings[i].dim(), 0.0);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += embeddings[i][k];
    ++count;
  }
  PrototypeTable table;
  for (auto& [c, entry] : sums) {
    auto& [sum, count] = entry;
    for (auto& x : sum) x /= static_cast<double>(count);
    if (!(norm(sum) > kNormEpsilon)) {
      throw DegenerateVector("class " + std::to_string(c) + " has a mean embedding of (near) zero norm");
    }
    table.prototypes.emplace(c, l2_normalize(sum));
  }
  return table;
}

inline PrototypeTable compute_prototypes(const Model& model, const LabeledDataset& data) {
  std::vector<UnitVector> embeddings;
  std::vector<ClassId> labels;
  embeddings.reserve(data.size());
  for (const auto& s : data.samples) {
    embeddings.push_back(model.embed(s.x));
    labels.push_back(s.y);
  }
  PrototypeTable table = prototypes_from_embeddings(embeddings, labels);
  table.source_hash = model.hash();
  return table;
}

struct LossGrad {
  double loss = 0.0;
  Vector grad;  // w.r.t. the unit embedding
};

// -log softmax_label(cos(e, p_j) / tau) over the table's classes, with its
// gradient w.r.t. e (the normalization Jacobian is applied by backprop):
//   dL/de = (sum_j softmax_j p_j - p_label) / tau.
inline LossGrad acl_loss(const UnitVector& embedding, ClassId label, const PrototypeTable& protos, double temperature) {
  if (!(temperature > 0.0)) throw InvalidConfig("acl_loss: temperature must be > 0");
  if (!protos.contains(label)) throw UnknownLabel("acl_loss: no prototype for class " + std::to_string(label));
  Vector scores;
  scores.reserve(protos.size());
  std::size_t label_index = 0;
  for (const auto& [c, p] : protos.prototypes) {
    if (c == label) label_index = scores.size();
    scores.push_back(cosine_sim(embedding, p) / temperature);
  }
  LossGrad out;
  out.loss = softmax_xent(scores, label_index);
  const Vector weights = softmax(scores);
  out.grad.assign(embedding.dim(), 0.0);
  std::size_t j = 0;
  for (const auto& [c, p] : protos.prototypes) {
    const double w = weights[j++] - (c == label ? 1.0 : 0.0);
    for (std::size_t k = 0; k < out.grad.size(); ++k) out.grad[k] += w * p[k] / temperature;
  }
#ifdef ACL_INJECT_GRAD_SIGN_FLIP
  for (auto& g : out.grad) g = -g;
#endif
  return out;
}

struct CeLossGrad {
  double loss = 0.0;
  Vector d_embedding;
  ParamSet d_head;  // same layout as LinearHead::params
};

// Softmax cross-entropy on the linear logits W e + b.
inline CeLossGrad ce_adapt_loss(const UnitVector& embedding, ClassId label, const LinearHead& head) {
  const auto row = head.row_of(label);
  if (!row) throw UnknownLabel("ce_adapt_loss: head has no class " + std::to_string(label));
  if (embedding.dim() != head.embed_dim) throw DimensionMismatch("ce_adapt_loss: embedding dim");
  const Vector logits = head.logits(embedding.span());
  CeLossGrad out;
  out.loss = softmax_xent(logits, *row);
  Vector delta = softmax(logits);
  delta[*row] -= 1.0;
  out.d_embedding = matvec_transposed(head.params[0], delta);
  out.d_head = head.params.zeros_like();
  add_outer(out.d_head[0], delta, embedding.span());
  out.d_head[1].data = delta;
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;   // 1-based
  double mean_loss = 0.0;  // mean training loss of the mode's objective
  BoundReport stability;   // full task set after the epoch
  BoundReport markov;      // all samples seen during the epoch
  double eval_acl_loss = 0.0;  // full-set ACL loss after the epoch
};

struct AdaptReport {
  AdaptMode mode = AdaptMode::disabled;
  std::uint64_t prototype_source = 0;
  double initial_acl_loss = 0.0;  // full-set ACL loss before any update
  std::vector<EpochRecord> epochs;
  std::vector<BoundReport> batch_markov;    // one per mini-batch
  std::vector<BoundReport> lemma1_bridge;   // one per epoch
  std::size_t threshold_checks = 0;
  std::size_t threshold_violations = 0;  // misclassified samples with loss < log 2

  bool all_bounds_pass() const {
    if (threshold_violations != 0) return false;
    for (const auto& b : batch_markov) {
      if (!b.pass()) return false;
    }
    for (const auto& b : lemma1_bridge) {
      if (!b.pass()) return false;
    }
    for (const auto& e : epochs) {
      if (!e.stability.pass() || !e.markov.pass()) return false;
    }
    return true;
  }
};

struct AdaptResult {
  Model model;
  AdaptReport report;
};

namespace detail {

inline std::vector<UnitVector> embed_all(const Model& model, const LabeledDataset& data) {
  std::vector<UnitVector> out;
  out.reserve(data.size());
  for (const auto& s : data.samples) out.push_back(model.embed(s.x));
  return out;
}

inline double mean_acl_loss(const std::vector<UnitVector>& embeddings, const LabeledDataset& data,
                            const PrototypeTable& protos, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    total += acl_loss(embeddings[i], data.samples[i].y, protos, temperature).loss;
  }
  return total / static_cast<double>(embeddings.size());
}

}  // namespace detail

// Adaptation phase: prototypes are taken once from the incoming model and
// kept fixed, then `epochs` passes of mini-batch momentum SGD on the mode's
// loss. Every batch also records the ACL-loss Markov bound and the per-sample
// log 2 threshold; every epoch records the feature-drift bound.
inline AdaptResult adapt(const Model& initial, const LabeledDataset& data, const AdaptConfig& config, Rng& rng) {
  config.validate();
  AdaptResult result{initial, {}};
  AdaptReport& report = result.report;
  report.mode = config.mode;
  if (config.mode == AdaptMode::disabled || config.epochs == 0) return result;
  if (data.empty()) throw EmptyInput("adapt: no training data");
  if (config.mode == AdaptMode::lightweight_only && !initial.adapter) {
    throw InvalidConfig("adapt: lightweight_only mode needs an adapter");
  }

  const PrototypeTable protos = compute_prototypes(initial, data);
  report.prototype_source = protos.source_hash;
  const std::vector<UnitVector> before = detail::embed_all(initial, data);
  std::vector<ClassId> labels;
  for (const auto& s : data.samples) labels.push_back(s.y);
  report.initial_acl_loss = detail::mean_acl_loss(before, data, protos, config.temperature);

  Model& model = result.model;
  const bool train_backbone = config.mode != AdaptMode::lightweight_only;
  const bool train_adapter = model.adapter.has_value();
  LinearHead head(model.backbone.config.embed_dim);
  if (config.mode == AdaptMode::ce_ablation) head.add_classes(data.classes());

  OptimizerState backbone_opt{config.learning_rate, config.momentum, {}};
  OptimizerState adapter_opt{config.learning_rate, config.momentum, {}};
  OptimizerState head_opt{config.learning_rate, config.momentum, {}};

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    std::vector<double> epoch_acl;
    std::vector<bool> epoch_correct;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      ModelGrads grads = zero_grads(model.backbone, model.adapter_ptr());
      ParamSet head_grads = head.params.zeros_like();
      std::vector<double> batch_acl;
      std::vector<bool> batch_correct;
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = data.samples[order[b]];
        ForwardResult fwd = model.forward(s.x);
        LossGrad acl = acl_loss(fwd.embedding, s.y, protos, config.temperature);
        const bool correct = nearest_prototype(protos, fwd.embedding) == s.y;
        ++report.threshold_checks;
        if (!correct && acl.loss < std::numbers::ln2 - 1e-12) ++report.threshold_violations;
        batch_acl.push_back(acl.loss);
        batch_correct.push_back(correct);

        double loss = acl.loss;
        Vector upstream = std::move(acl.grad);
        if (config.mode == AdaptMode::ce_ablation) {
          CeLossGrad ce = ce_adapt_loss(fwd.embedding, s.y, head);
          loss = ce.loss;
          upstream = std::move(ce.d_embedding);
          head_grads.add_scaled(ce.d_head, inv_batch);
        }
        if (!std::isfinite(loss)) throw NonFiniteLoss("adapt: non-finite loss in epoch " + std::to_string(epoch));
        epoch_loss += loss;
        for (auto& g : upstream) g *= inv_batch;
        backprop_accumulate(model.backbone, model.adapter_ptr(), fwd.tape, upstream, grads);
      }
      report.batch_markov.push_back(check_markov_bound(
          batch_acl, batch_correct, "markov:epoch" + std::to_string(epoch) + ":batch" +
                                        std::to_string(start / config.batch_size + 1)));
      epoch_acl.insert(epoch_acl.end(), batch_acl.begin(), batch_acl.end());
      epoch_correct.insert(epoch_correct.end(), batch_correct.begin(), batch_correct.end());

      if (train_backbone) sgd_step(model.backbone.params, grads.backbone, backbone_opt);
      if (train_adapter) sgd_step(model.adapter->params, grads.adapter, adapter_opt);
      if (config.mode == AdaptMode::ce_ablation) sgd_step(head.params, head_grads, head_opt);
      if (!model.backbone.params.all_finite() || (model.adapter && !model.adapter->params.all_finite())) {
        throw NonFiniteLoss("adapt: parameters became non-finite in epoch " + std::to_string(epoch));
      }
    }

    const std::vector<UnitVector> after = detail::embed_all(model, data);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = epoch_loss / static_cast<double>(data.size());
    rec.stability = check_stability_bound(before, after, protos, labels, "stability:epoch" + std::to_string(epoch));
    rec.markov = check_markov_bound(epoch_acl, epoch_correct, "markov:epoch" + std::to_string(epoch));
    rec.eval_acl_loss = detail::mean_acl_loss(after, data, protos, config.temperature);

    // Distance form and cosine form of the adapted-to-prototype term.
    double dist_form = 0.0;
    double cos_form = 0.0;
    for (std::size_t i = 0; i < after.size(); ++i) {
      const UnitVector& p = protos.prototypes.at(labels[i]);
      dist_form += squared_distance(after[i].values(), p.values());
      cos_form += 2.0 * (1.0 - cosine_sim(after[i], p));
    }
    const double n = static_cast<double>(after.size());
    report.lemma1_bridge.push_back(
        BoundReport{"lemma1_bridge:epoch" + std::to_string(epoch), std::abs(dist_form / n - cos_form / n), 0.0, 1e-10});
    report.epochs.push_back(std::move(rec));
  }
  if (protos.source_hash != report.prototype_source) throw BoundViolation("prototype table changed during adaptation");
  return result;
}

}  // namespace acl
