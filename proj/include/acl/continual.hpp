#pragma once

#include <string>
#include <vector>

#include "acl/adaptation.hpp"
#include "acl/dataset.hpp"
#include "acl/errors.hpp"
#include "acl/metrics.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

enum class CoreStrategy { ncm, linear };

inline std::string to_string(CoreStrategy s) { return s == CoreStrategy::ncm ? "ncm" : "linear"; }

inline CoreStrategy parse_core_strategy(const std::string& s) {
  if (s == "ncm") return CoreStrategy::ncm;
  if (s == "linear") return CoreStrategy::linear;
  throw InvalidConfig("unknown core strategy '" + s + "'");
}

struct CoreConfig {
  CoreStrategy strategy = CoreStrategy::ncm;
  std::size_t epochs = 5;
  double learning_rate = 0.1;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  bool tune_adapter = false;  // linear strategy: also fine-tune the adapter
};

struct ExperimentState {
  Model model;
  Classifier classifier;
  std::size_t task_index = 0;  // number of tasks learned so far
};

inline ExperimentState make_initial_state(Model model, CoreStrategy strategy) {
  ExperimentState s{std::move(model), {}, 0};
  if (strategy == CoreStrategy::ncm) {
    s.classifier.head = PrototypeTable{};
  } else {
    s.classifier.head = LinearHead(s.model.backbone.config.embed_dim);
  }
  return s;
}

// SimpleCIL-style core learner: append prototypes of the new classes computed
// with the current (frozen) model. Existing prototypes are never touched.
inline void core_learn_ncm(ExperimentState& state, const LabeledDataset& train) {
  auto& store = state.classifier.prototypes();
  const PrototypeTable fresh = compute_prototypes(state.model, train);
  for (const auto& [c, p] : fresh.prototypes) {
    if (store.contains(c)) throw InvalidConfig("core_learn_ncm: class " + std::to_string(c) + " already learned");
  }
  for (const auto& [c, p] : fresh.prototypes) store.prototypes.emplace(c, p);
  store.source_hash = fresh.source_hash;
}

// Cross-entropy fine-tuning of the linear head (and optionally the adapter)
// on the current task only. The backbone stays bit-identical.
inline void core_learn_linear(ExperimentState& state, const LabeledDataset& train, const CoreConfig& config,
                              Rng& rng) {
  auto& head = state.classifier.linear();
  const std::uint64_t backbone_before = state.model.backbone.params.hash();
  head.add_classes(train.classes());
  const bool tune_adapter = config.tune_adapter && state.model.adapter.has_value();
  OptimizerState head_opt{config.learning_rate, config.momentum, {}};
  OptimizerState adapter_opt{config.learning_rate, config.momentum, {}};
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      ParamSet head_grads = head.params.zeros_like();
      ModelGrads grads = zero_grads(state.model.backbone, state.model.adapter_ptr());
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = train.samples[order[b]];
        ForwardResult fwd = state.model.forward(s.x);
        CeLossGrad ce = ce_adapt_loss(fwd.embedding, s.y, head);
        if (!std::isfinite(ce.loss)) throw NonFiniteLoss("core_learn_linear: non-finite loss");
        head_grads.add_scaled(ce.d_head, inv_batch);
        if (tune_adapter) {
          for (auto& g : ce.d_embedding) g *= inv_batch;
          backprop_accumulate(state.model.backbone, state.model.adapter_ptr(), fwd.tape, ce.d_embedding, grads);
        }
      }
      sgd_step(head.params, head_grads, head_opt);
      if (tune_adapter) sgd_step(state.model.adapter->params, grads.adapter, adapter_opt);
    }
  }
  if (state.model.backbone.params.hash() != backbone_before) {
    throw BoundViolation("core_learn_linear modified the frozen backbone");
  }
}

// Row k of the accuracy matrix: accuracy on each seen task's test set using
// the classifier over every class seen so far.
inline Vector evaluate(const ExperimentState& state, const TaskStream& stream, std::size_t up_to_task) {
  if (up_to_task == 0 || up_to_task > state.task_index || up_to_task > stream.size()) {
    throw DimensionMismatch("evaluate: task " + std::to_string(up_to_task) + " not learned yet");
  }
  Vector row;
  for (std::size_t j = 0; j < up_to_task; ++j) {
    const auto& test = stream.tasks[j].test;
    std::size_t hits = 0;
    for (const auto& s : test.samples) {
      hits += classify(state.classifier, state.model.embed(s.x)).label == s.y ? 1 : 0;
    }
    row.push_back(test.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(test.size()));
  }
  return row;
}

struct RunResult {
  AccuracyMatrix matrix;
  std::vector<AdaptReport> reports;  // one per task (empty epochs when skipped)
  std::size_t adapt_calls = 0;
  bool completed = false;
  std::string error;  // set when a task failed; matrix then holds the finished rows
  ExperimentState final_state;
};

// Adapt -> freeze -> core-learn -> evaluate, for every task in order.
inline RunResult run_acl(const TaskStream& stream, const Model& initial, const AdaptConfig& adapt_config,
                         const CoreConfig& core_config, Rng& rng) {
  stream.validate();
  adapt_config.validate();
  RunResult result{AccuracyMatrix(stream.size()), {}, 0, false, {}, make_initial_state(initial, core_config.strategy)};
  ExperimentState& state = result.final_state;
  try {
    for (std::size_t k = 0; k < stream.size(); ++k) {
      const Task& task = stream.tasks[k];
      Rng task_rng = rng.fork(k + 1);
      const bool skip = adapt_config.mode == AdaptMode::disabled || (adapt_config.first_task_only && k > 0);
      if (skip) {
        result.reports.push_back(AdaptReport{});
      } else {
        AdaptResult adapted = adapt(state.model, task.train, adapt_config, task_rng);
        ++result.adapt_calls;
        state.model = std::move(adapted.model);
        result.reports.push_back(std::move(adapted.report));
      }
      if (core_config.strategy == CoreStrategy::ncm) {
        core_learn_ncm(state, task.train);
      } else {
        core_learn_linear(state, task.train, core_config, task_rng);
      }
      state.task_index = k + 1;
      result.matrix.add_row(evaluate(state, stream, k + 1));
    }
    result.completed = true;
  } catch (const std::exception& e) {
    result.error = e.what();
  }
  return result;
}

}  // namespace acl
