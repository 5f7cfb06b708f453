#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "acl/errors.hpp"
#include "acl/numerics.hpp"

namespace acl {

using ClassId = int;

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw InvalidConfig("unknown activation '" + s + "'");
}

inline double activate(Activation a, double z) { return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

// Derivative expressed through the pre-activation z and output h = act(z).
inline double activate_grad(Activation a, double z, double h) {
  return a == Activation::tanh ? 1.0 - h * h : (z > 0.0 ? 1.0 : 0.0);
}

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> hidden = {64, 64};
  Activation activation = Activation::tanh;
  std::size_t adapter_rank = 8;

  void validate() const {
    if (input_dim < 1) throw InvalidConfig("model.input_dim must be >= 1");
    if (embed_dim < 2) throw InvalidConfig("model.embed_dim must be >= 2");
    if (hidden.empty()) throw InvalidConfig("model.hidden needs at least one layer");
    for (auto w : hidden) {
      if (w < 1) throw InvalidConfig("model.hidden widths must be >= 1");
    }
    if (adapter_rank < 1) throw InvalidConfig("model.adapter_rank must be >= 1");
  }
};

// Feed-forward embedding network. Tensors are stored as
// [layer0.weight, layer0.bias, layer1.weight, ...]; every layer but the last
// applies the activation.
struct Backbone {
  ModelConfig config;
  ParamSet params;

  std::size_t layer_count() const noexcept { return params.size() / 2; }
  const Tensor& weight(std::size_t l) const { return params[2 * l]; }
  const Tensor& bias(std::size_t l) const { return params[2 * l + 1]; }

  friend bool operator==(const Backbone& a, const Backbone& b) { return a.params == b.params; }
};

// Residual bottleneck applied to the raw embedding before normalization:
// e <- e + up * act(down * e).
struct Adapter {
  std::size_t embed_dim = 0;
  std::size_t rank = 0;
  Activation activation = Activation::tanh;
  ParamSet params;  // [adapter.down (rank x d), adapter.up (d x rank)]

  const Tensor& down() const { return params[0]; }
  const Tensor& up() const { return params[1]; }

  friend bool operator==(const Adapter& a, const Adapter& b) { return a.params == b.params; }
};

namespace detail {

inline void fill_uniform(Tensor& t, double bound, Rng& rng) {
  for (auto& x : t.data) x = rng.uniform(-bound, bound);
}

}  // namespace detail

inline Backbone init_backbone(const ModelConfig& config, Rng& rng) {
  config.validate();
  Backbone b{config, {}};
  std::size_t fan_in = config.input_dim;
  std::vector<std::size_t> widths = config.hidden;
  widths.push_back(config.embed_dim);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    auto& w = b.params.add("backbone.layer" + std::to_string(l) + ".weight", widths[l], fan_in);
    detail::fill_uniform(w, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
    b.params.add("backbone.layer" + std::to_string(l) + ".bias", widths[l], 1);
    fan_in = widths[l];
  }
  return b;
}

inline Adapter init_adapter(const ModelConfig& config, Rng& rng) {
  config.validate();
  Adapter a{config.embed_dim, config.adapter_rank, config.activation, {}};
  auto& down = a.params.add("adapter.down", config.adapter_rank, config.embed_dim);
  detail::fill_uniform(down, 1.0 / std::sqrt(static_cast<double>(config.embed_dim)), rng);
  a.params.add("adapter.up", config.embed_dim, config.adapter_rank);  // zero: adapter starts as identity
  return a;
}

inline std::pair<Backbone, Adapter> init_model(const ModelConfig& config, Rng& rng) {
  Backbone b = init_backbone(config, rng);
  Adapter a = init_adapter(config, rng);
  return {std::move(b), std::move(a)};
}

// Activations of one forward pass. Single use: backprop marks it consumed.
struct Tape {
  std::vector<Vector> layer_inputs;  // h_l fed into layer l
  std::vector<Vector> pre_activations;
  bool has_adapter = false;
  Vector raw;                 // backbone output
  Vector adapter_pre;         // down * raw
  Vector adapter_hidden;      // act(adapter_pre)
  Vector residual;            // raw (+ adapter branch)
  double residual_norm = 0.0;
  UnitVector output;
  bool consumed = false;
};

struct ForwardResult {
  UnitVector embedding;
  Tape tape;
};

inline ForwardResult embed_with_tape(const Backbone& backbone, const Adapter* adapter, std::span<const double> x) {
  if (x.size() != backbone.config.input_dim) {
    throw DimensionMismatch("embed: input dim " + std::to_string(x.size()) + ", expected " +
                            std::to_string(backbone.config.input_dim));
  }
  Tape tape;
  const Activation act = backbone.config.activation;
  const std::size_t layers = backbone.layer_count();
  Vector h(x.begin(), x.end());
  for (std::size_t l = 0; l < layers; ++l) {
    Vector z = affine(backbone.weight(l), backbone.bias(l), h);
    tape.layer_inputs.push_back(std::move(h));
    if (l + 1 < layers) {
      h.resize(z.size());
      for (std::size_t i = 0; i < z.size(); ++i) h[i] = activate(act, z[i]);
    } else {
      h = z;
    }
    tape.pre_activations.push_back(std::move(z));
  }
  tape.raw = h;
  tape.residual = h;
  if (adapter != nullptr) {
    if (adapter->embed_dim != h.size()) throw DimensionMismatch("adapter embed_dim does not match backbone");
    tape.has_adapter = true;
    tape.adapter_pre = matvec(adapter->down(), tape.raw);
    tape.adapter_hidden.resize(tape.adapter_pre.size());
    for (std::size_t i = 0; i < tape.adapter_pre.size(); ++i) {
      tape.adapter_hidden[i] = activate(adapter->activation, tape.adapter_pre[i]);
    }
    const Vector branch = matvec(adapter->up(), tape.adapter_hidden);
    for (std::size_t i = 0; i < branch.size(); ++i) tape.residual[i] += branch[i];
  }
  tape.residual_norm = norm(tape.residual);
  UnitVector out = l2_normalize(tape.residual);
  tape.output = out;
  return {std::move(out), std::move(tape)};
}

inline UnitVector embed(const Backbone& backbone, const Adapter* adapter, std::span<const double> x) {
  return embed_with_tape(backbone, adapter, x).embedding;
}

struct ModelGrads {
  ParamSet backbone;
  ParamSet adapter;  // empty when no adapter took part in the forward pass
};

inline ModelGrads zero_grads(const Backbone& backbone, const Adapter* adapter) {
  return {backbone.params.zeros_like(), adapter ? adapter->params.zeros_like() : ParamSet{}};
}

// Gradient of x / ||x|| applied to an upstream gradient:
// (I - u u^T) g / ||x||.
inline Vector normalize_backward(const UnitVector& u, double input_norm, std::span<const double> upstream) {
  const double proj = dot(u.span(), upstream);
  Vector g(upstream.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (upstream[i] - u[i] * proj) / input_norm;
  return g;
}

// Adds the gradient of <embedding, d_embedding> w.r.t. all parameters to
// `grads` and consumes the tape.
inline void backprop_accumulate(const Backbone& backbone, const Adapter* adapter, Tape& tape,
                                std::span<const double> d_embedding, ModelGrads& grads) {
  if (tape.consumed) throw TapeConsumed("tape already used by backprop");
  if (d_embedding.size() != tape.output.dim()) {
    throw DimensionMismatch("backprop: upstream gradient dim " + std::to_string(d_embedding.size()));
  }
  if (tape.has_adapter != (adapter != nullptr)) {
    throw DimensionMismatch("backprop: adapter presence differs from the forward pass");
  }
  if (!grads.backbone.same_shape(backbone.params) ||
      (adapter != nullptr && !grads.adapter.same_shape(adapter->params))) {
    throw ShapeMismatch("backprop: gradient buffers do not match the model");
  }
  tape.consumed = true;

  Vector g = normalize_backward(tape.output, tape.residual_norm, d_embedding);

  if (adapter != nullptr) {
    // residual = raw + up * s, s = act(down * raw)
    add_outer(grads.adapter[1], g, tape.adapter_hidden);
    Vector g_hidden = matvec_transposed(adapter->up(), g);
    for (std::size_t i = 0; i < g_hidden.size(); ++i) {
      g_hidden[i] *= activate_grad(adapter->activation, tape.adapter_pre[i], tape.adapter_hidden[i]);
    }
    add_outer(grads.adapter[0], g_hidden, tape.raw);
    const Vector through_down = matvec_transposed(adapter->down(), g_hidden);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += through_down[i];
  }

  const Activation act = backbone.config.activation;
  for (std::size_t l = backbone.layer_count(); l-- > 0;) {
    add_outer(grads.backbone[2 * l], g, tape.layer_inputs[l]);
    auto& db = grads.backbone[2 * l + 1].data;
    for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
    if (l == 0) break;
    Vector g_in = matvec_transposed(backbone.weight(l), g);
    const Vector& z_prev = tape.pre_activations[l - 1];
    const Vector& h_prev = tape.layer_inputs[l];
    for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] *= activate_grad(act, z_prev[i], h_prev[i]);
    g = std::move(g_in);
  }
}

inline ModelGrads backprop(const Backbone& backbone, const Adapter* adapter, Tape& tape,
                           std::span<const double> d_embedding) {
  ModelGrads grads = zero_grads(backbone, adapter);
  backprop_accumulate(backbone, adapter, tape, d_embedding, grads);
  return grads;
}

// Class prototypes on the unit sphere. `source_hash` identifies the model
// state (backbone + adapter parameter hash) the prototypes were built from.
struct PrototypeTable {
  std::map<ClassId, UnitVector> prototypes;
  std::uint64_t source_hash = 0;

  bool contains(ClassId c) const { return prototypes.count(c) != 0; }
  std::size_t size() const { return prototypes.size(); }
  bool empty() const { return prototypes.empty(); }
};

// Linear head W e + b over an ordered list of class ids.
struct LinearHead {
  std::size_t embed_dim = 0;
  std::vector<ClassId> class_ids;
  ParamSet params;  // [head.weight (C x d), head.bias (C x 1)]

  explicit LinearHead(std::size_t dim = 0) : embed_dim(dim) {
    params.add("head.weight", 0, dim);
    params.add("head.bias", 0, 1);
  }

  std::size_t size() const noexcept { return class_ids.size(); }

  std::optional<std::size_t> row_of(ClassId c) const {
    for (std::size_t i = 0; i < class_ids.size(); ++i) {
      if (class_ids[i] == c) return i;
    }
    return std::nullopt;
  }

  // Appends zero-initialized rows for classes not yet present.
  void add_classes(const std::vector<ClassId>& ids) {
    for (ClassId c : ids) {
      if (row_of(c)) throw InvalidConfig("linear head already has class " + std::to_string(c));
      class_ids.push_back(c);
      auto& w = params[0];
      w.rows += 1;
      w.data.resize(w.rows * w.cols, 0.0);
      auto& b = params[1];
      b.rows += 1;
      b.data.resize(b.rows, 0.0);
    }
  }

  Vector logits(std::span<const double> e) const { return affine(params[0], params[1], e); }
};

struct Classifier {
  std::variant<PrototypeTable, LinearHead> head;

  bool is_cosine() const { return std::holds_alternative<PrototypeTable>(head); }
  PrototypeTable& prototypes() { return std::get<PrototypeTable>(head); }
  const PrototypeTable& prototypes() const { return std::get<PrototypeTable>(head); }
  LinearHead& linear() { return std::get<LinearHead>(head); }
  const LinearHead& linear() const { return std::get<LinearHead>(head); }

  std::vector<ClassId> class_ids() const {
    if (is_cosine()) {
      std::vector<ClassId> ids;
      for (const auto& [c, p] : prototypes().prototypes) ids.push_back(c);
      return ids;
    }
    return linear().class_ids;
  }
};

struct Prediction {
  ClassId label = -1;
  std::vector<ClassId> class_ids;  // aligned with logits
  Vector logits;
};

// Highest logit wins; ties go to the lowest class id.
inline Prediction classify(const Classifier& classifier, const UnitVector& embedding) {
  Prediction p;
  if (classifier.is_cosine()) {
    const auto& table = classifier.prototypes();
    if (table.empty()) throw EmptyClassifier("cosine classifier has no prototypes");
    for (const auto& [c, proto] : table.prototypes) {
      p.class_ids.push_back(c);
      p.logits.push_back(cosine_sim(embedding, proto));
    }
  } else {
    const auto& head = classifier.linear();
    if (head.size() == 0) throw EmptyClassifier("linear classifier has no classes");
    if (head.embed_dim != embedding.dim()) throw DimensionMismatch("classify: embedding dim");
    p.class_ids = head.class_ids;
    p.logits = head.logits(embedding.span());
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.logits.size(); ++i) {
    if (p.logits[i] > p.logits[best] || (p.logits[i] == p.logits[best] && p.class_ids[i] < p.class_ids[best])) {
      best = i;
    }
  }
  p.label = p.class_ids[best];
  return p;
}

// Cosine-classifier decision without materializing the logits.
inline ClassId nearest_prototype(const PrototypeTable& table, const UnitVector& embedding) {
  if (table.empty()) throw EmptyClassifier("cosine classifier has no prototypes");
  ClassId best = table.prototypes.begin()->first;
  double best_score = -std::numeric_limits<double>::infinity();
  for (const auto& [c, proto] : table.prototypes) {
    const double s = cosine_sim(embedding, proto);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

inline std::uint64_t model_hash(const Backbone& backbone, const Adapter* adapter) {
  std::uint64_t h = backbone.params.hash();
  if (adapter != nullptr) h ^= Rng::mix64(adapter->params.hash());
  return h;
}

// Backbone plus the optional adapter: the full embedding path.
struct Model {
  Backbone backbone;
  std::optional<Adapter> adapter;

  const Adapter* adapter_ptr() const { return adapter ? &*adapter : nullptr; }
  UnitVector embed(std::span<const double> x) const { return acl::embed(backbone, adapter_ptr(), x); }
  ForwardResult forward(std::span<const double> x) const { return embed_with_tape(backbone, adapter_ptr(), x); }
  std::uint64_t hash() const { return model_hash(backbone, adapter_ptr()); }

  friend bool operator==(const Model&, const Model&) = default;
};

}  // namespace acl
