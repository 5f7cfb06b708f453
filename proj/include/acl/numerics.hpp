#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acl/errors.hpp"

namespace acl {

using Vector = std::vector<double>;

// Vectors with norm at or below this are treated as having no direction.
inline constexpr double kNormEpsilon = 1e-8;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("dot: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("squared_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// A point on the unit sphere. Instances only come out of l2_normalize or
// from_unit, both of which check the norm.
class UnitVector {
 public:
  UnitVector() = default;

  // Wraps values already known to be unit length (|norm - 1| <= 1e-9).
  static UnitVector from_unit(Vector values) {
    const double n = norm(values);
    if (values.empty() || std::abs(n - 1.0) > 1e-9) {
      throw DegenerateVector("from_unit: norm " + std::to_string(n) + " is not 1");
    }
    UnitVector u;
    u.values_ = std::move(values);
    return u;
  }

  const Vector& values() const noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }
  std::size_t dim() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }

  friend bool operator==(const UnitVector&, const UnitVector&) = default;

 private:
  friend UnitVector l2_normalize(std::span<const double> v);
  Vector values_;
};

inline UnitVector l2_normalize(std::span<const double> v) {
  if (v.empty()) throw EmptyInput("l2_normalize of an empty vector");
  const double n = norm(v);
  if (!(n > kNormEpsilon)) {
    throw DegenerateVector("l2_normalize: norm " + std::to_string(n) + " <= 1e-8");
  }
  UnitVector u;
  u.values_.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u.values_[i] = v[i] / n;
  return u;
}

// Dot product of two unit vectors, clamped to [-1, 1].
inline double cosine_sim(const UnitVector& a, const UnitVector& b) {
  if (a.dim() != b.dim()) {
    throw DimensionMismatch("cosine_sim: " + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  return std::clamp(dot(a.span(), b.span()), -1.0, 1.0);
}

inline double log_sum_exp(std::span<const double> logits) {
  if (logits.empty()) throw EmptyInput("log_sum_exp of an empty sequence");
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double x : logits) s += std::exp(x - m);
  return m + std::log(s);
}

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptyInput("softmax of an empty sequence");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += p[i] = std::exp(logits[i] - m);
  for (double& v : p) v /= s;
  return p;
}

// log_sum_exp(logits) - logits[target], keeping full relative precision when
// the target dominates (the loss is then tiny and lse - s_y would cancel).
inline double softmax_xent(std::span<const double> logits, std::size_t target) {
  if (target >= logits.size()) throw DimensionMismatch("softmax_xent: target out of range");
  const auto top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const double m = logits[top];
  double rest = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (i != top) rest += std::exp(logits[i] - m);
  }
  return (m - logits[target]) + std::log1p(rest);
}

// SplitMix64 run as a counter-based generator: draw i is
// mix64(seed + (i + 1) * 0x9E3779B97F4A7C15). Integer-only, so the u64
// stream is identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  // Independent generator for a named sub-stream; does not advance this one.
  Rng fork(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ULL))); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::size_t>(wide >> 64);
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) std::swap(items[i - 1], items[index(i)]);
  }

  Vector normal_vector(std::size_t dim) {
    Vector v(dim);
    for (auto& x : v) x = normal();
    return v;
  }

  UnitVector unit_vector(std::size_t dim) {
    for (;;) {
      Vector v = normal_vector(dim);
      if (norm(v) > 1e-6) return l2_normalize(v);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// A named, row-major parameter array. Vectors are stored as rows x 1.
struct Tensor {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::size_t size() const noexcept { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// y = W x + b for a weight tensor W (out x in) and bias tensor b (out x 1).
inline Vector affine(const Tensor& weight, const Tensor& bias, std::span<const double> x) {
  if (x.size() != weight.cols) throw DimensionMismatch("affine: input dim " + std::to_string(x.size()));
  Vector y(weight.rows);
  for (std::size_t r = 0; r < weight.rows; ++r) y[r] = bias.data[r] + dot(weight.row(r), x);
  return y;
}

inline Vector matvec(const Tensor& weight, std::span<const double> x) {
  if (x.size() != weight.cols) throw DimensionMismatch("matvec: input dim " + std::to_string(x.size()));
  Vector y(weight.rows);
  for (std::size_t r = 0; r < weight.rows; ++r) y[r] = dot(weight.row(r), x);
  return y;
}

// y = W^T g
inline Vector matvec_transposed(const Tensor& weight, std::span<const double> g) {
  if (g.size() != weight.rows) throw DimensionMismatch("matvec_transposed");
  Vector y(weight.cols, 0.0);
  for (std::size_t r = 0; r < weight.rows; ++r) {
    const double gr = g[r];
    if (gr == 0.0) continue;
    const auto w = weight.row(r);
    for (std::size_t c = 0; c < weight.cols; ++c) y[c] += gr * w[c];
  }
  return y;
}

// W += scale * g x^T
inline void add_outer(Tensor& weight, std::span<const double> g, std::span<const double> x, double scale = 1.0) {
  for (std::size_t r = 0; r < weight.rows; ++r) {
    const double gr = scale * g[r];
    if (gr == 0.0) continue;
    auto w = weight.row(r);
    for (std::size_t c = 0; c < weight.cols; ++c) w[c] += gr * x[c];
  }
}

// Ordered collection of named tensors. Model parameters, their gradients and
// optimizer buffers all use this type so they can be walked uniformly.
class ParamSet {
 public:
  Tensor& add(std::string name, std::size_t rows, std::size_t cols, double fill = 0.0) {
    tensors_.push_back(Tensor{std::move(name), rows, cols, std::vector<double>(rows * cols, fill)});
    return tensors_.back();
  }

  std::size_t size() const noexcept { return tensors_.size(); }
  bool empty() const noexcept { return tensors_.empty(); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  const Tensor* find(const std::string& name) const {
    for (const auto& t : tensors_) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  ParamSet zeros_like() const {
    ParamSet z;
    for (const auto& t : tensors_) z.add(t.name, t.rows, t.cols);
    return z;
  }

  bool same_shape(const ParamSet& other) const {
    if (size() != other.size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].rows != other[i].rows || tensors_[i].cols != other[i].cols) return false;
    }
    return true;
  }

  void scale(double s) {
    for (auto& t : tensors_) {
      for (auto& x : t.data) x *= s;
    }
  }

  void add_scaled(const ParamSet& other, double s) {
    if (!same_shape(other)) throw ShapeMismatch("add_scaled");
    for (std::size_t i = 0; i < size(); ++i) {
      auto& dst = tensors_[i].data;
      const auto& src = other[i].data;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
    }
  }

  bool all_finite() const {
    return std::all_of(tensors_.begin(), tensors_.end(), [](const Tensor& t) { return acl::all_finite(t.data); });
  }

  // FNV-1a over names, shapes and the bit patterns of every value.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xFF;
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& t : tensors_) {
      for (char c : t.name) mix(static_cast<unsigned char>(c));
      mix(t.rows);
      mix(t.cols);
      for (double x : t.data) mix(std::bit_cast<std::uint64_t>(x));
    }
    return h;
  }

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<Tensor> tensors_;
};

struct OptimizerState {
  double learning_rate = 0.01;
  double momentum = 0.0;
  ParamSet velocity;  // lazily shaped on the first step
};

// Momentum SGD, no weight decay: v <- momentum * v + g ; p <- p - lr * v.
inline void sgd_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  if (!params.same_shape(grads)) throw ShapeMismatch("sgd_step: gradients do not match parameters");
  if (state.velocity.empty()) state.velocity = params.zeros_like();
  if (!state.velocity.same_shape(params)) throw ShapeMismatch("sgd_step: velocity buffer does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    auto& v = state.velocity[i].data;
    const auto& g = grads[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      p[j] -= state.learning_rate * v[j];
    }
  }
}

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every scalar in
// `params`. `loss_fn` is called with a perturbed copy.
template <typename LossFn>
ParamSet finite_diff_grad(LossFn&& loss_fn, const ParamSet& params, double h) {
  if (!(h > 0.0)) throw InvalidConfig("finite_diff_grad: step must be positive");
  ParamSet probe = params;
  ParamSet grad = params.zeros_like();
  for (std::size_t t = 0; t < probe.size(); ++t) {
    auto& values = probe[t].data;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss_fn(std::as_const(probe));
      values[i] = saved - h;
      const double down = loss_fn(std::as_const(probe));
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NonFiniteLoss("finite_diff_grad: loss not finite while probing " + probe[t].name);
      }
      grad[t].data[i] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

// ||a - b|| / max(||a||, ||b||, floor). The floor keeps groups whose true
// gradient is numerically zero from reporting noise as relative error.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  const double diff = std::sqrt(squared_distance(a, b));
  const double scale = std::max({norm(a), norm(b), floor});
  return diff / scale;
}

}  // namespace acl
