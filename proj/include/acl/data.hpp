#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "acl/adaptation.hpp"
#include "acl/dataset.hpp"
#include "acl/errors.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

// Gaussian-cluster benchmark. Class centers are unit vectors inside a
// `signal_dim`-dimensional subspace of R^D; samples add N(0, spread^2 I).
// Incremental-phase centers come from the same family and are then moved by
// the domain shift: a rotation that tilts the signal subspace towards an
// orthogonal one (angle min(shift * rotation_rate, pi/2)) plus a translation
// of length `shift` along a random direction.
struct SyntheticSpec {
  std::size_t input_dim = 32;
  std::size_t signal_dim = 4;
  std::size_t pretrain_classes = 10;
  std::size_t incremental_classes = 8;
  std::size_t tasks = 4;
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 50;
  double spread = 0.3;
  double shift = 2.0;
  double rotation_rate = std::numbers::pi / 6.0;
  std::uint64_t seed = 1993;

  void validate() const {
    if (input_dim < 2) throw InvalidSpec("data.input_dim must be >= 2");
    if (signal_dim < 1 || 2 * signal_dim > input_dim) throw InvalidSpec("data.signal_dim must be in [1, input_dim/2]");
    if (pretrain_classes < 2 || incremental_classes < 2) throw InvalidSpec("class counts must be >= 2");
    if (tasks < 1 || incremental_classes % tasks != 0) {
      throw InvalidSpec("data.incremental_classes must split evenly into data.tasks");
    }
    if (train_per_class < 1 || test_per_class < 1) throw InvalidSpec("samples per class must be >= 1");
    if (!(spread > 0.0)) throw InvalidSpec("data.spread must be > 0");
    if (!(shift >= 0.0)) throw InvalidSpec("data.shift must be >= 0");
    if (!(rotation_rate >= 0.0)) throw InvalidSpec("data.rotation_rate must be >= 0");
  }

  std::uint64_t hash() const {
    std::ostringstream os;
    os.precision(17);
    os << input_dim << ',' << signal_dim << ',' << pretrain_classes << ',' << incremental_classes << ',' << tasks << ','
       << train_per_class << ',' << test_per_class << ',' << spread << ',' << shift << ',' << rotation_rate << ','
       << seed;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : os.str()) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

// x -> R x + t, with R = I + sum over planes of the Givens rotation pieces.
struct DomainShift {
  std::vector<Vector> rotation;  // D x D, row-major rows
  Vector translation;
  double angle = 0.0;

  Vector apply(std::span<const double> x) const {
    Vector y(translation);
    for (std::size_t r = 0; r < y.size(); ++r) y[r] += dot(rotation[r], x);
    return y;
  }

  bool is_identity() const {
    for (std::size_t r = 0; r < rotation.size(); ++r) {
      for (std::size_t c = 0; c < rotation[r].size(); ++c) {
        if (rotation[r][c] != (r == c ? 1.0 : 0.0)) return false;
      }
    }
    for (double t : translation) {
      if (t != 0.0) return false;
    }
    return true;
  }
};

struct SyntheticData {
  LabeledDataset pretrain_train;
  LabeledDataset pretrain_test;  // held out, same distribution as pretraining
  TaskStream stream;
  DomainShift shift;
};

namespace detail {

// Gram-Schmidt on Gaussian draws: `count` orthonormal vectors in R^dim.
inline std::vector<Vector> random_orthonormal(std::size_t count, std::size_t dim, Rng& rng) {
  std::vector<Vector> basis;
  while (basis.size() < count) {
    Vector v = rng.normal_vector(dim);
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= p * b[i];
    }
    const double n = norm(v);
    if (n < 1e-6) continue;
    for (auto& x : v) x /= n;
    basis.push_back(std::move(v));
  }
  return basis;
}

inline void draw_samples(LabeledDataset& out, ClassId label, std::span<const double> center, std::size_t count,
                         double spread, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    Vector x(center.begin(), center.end());
    for (auto& xi : x) xi += spread * rng.normal();
    out.samples.push_back({std::move(x), label});
  }
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Rng geometry = rng.fork(1);
  Rng samples = rng.fork(2);
  Rng order = rng.fork(3);
  const std::size_t D = spec.input_dim;
  const std::size_t m = spec.signal_dim;
  const std::uint64_t spec_hash = spec.hash();

  // First m vectors span the signal subspace, next m are its rotation targets.
  const auto basis = detail::random_orthonormal(2 * m, D, geometry);
  auto center_in_signal = [&](Rng& r) {
    const UnitVector u = r.unit_vector(m);
    Vector c(D, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t i = 0; i < D; ++i) c[i] += u[k] * basis[k][i];
    }
    return c;
  };

  SyntheticData out;
  out.shift.angle = std::min(spec.shift * spec.rotation_rate, std::numbers::pi / 2.0);
  out.shift.rotation.assign(D, Vector(D, 0.0));
  for (std::size_t i = 0; i < D; ++i) out.shift.rotation[i][i] = 1.0;
  out.shift.translation.assign(D, 0.0);
  const UnitVector direction = geometry.unit_vector(D);
  if (spec.shift > 0.0) {
    const double c = std::cos(out.shift.angle);
    const double s = std::sin(out.shift.angle);
    // In each plane span(a, b): a -> c a + s b, b -> -s a + c b.
    for (std::size_t k = 0; k < m; ++k) {
      const Vector& a = basis[k];
      const Vector& b = basis[m + k];
      for (std::size_t r = 0; r < D; ++r) {
        for (std::size_t q = 0; q < D; ++q) {
          out.shift.rotation[r][q] += (c - 1.0) * (a[r] * a[q] + b[r] * b[q]) + s * (b[r] * a[q] - a[r] * b[q]);
        }
      }
    }
    for (std::size_t i = 0; i < D; ++i) out.shift.translation[i] = spec.shift * direction[i];
  }

  out.pretrain_train.split = "pretrain_train";
  out.pretrain_test.split = "pretrain_test";
  out.pretrain_train.spec_hash = out.pretrain_test.spec_hash = spec_hash;
  for (std::size_t c = 0; c < spec.pretrain_classes; ++c) {
    const Vector center = center_in_signal(geometry);
    detail::draw_samples(out.pretrain_train, static_cast<ClassId>(c), center, spec.train_per_class, spec.spread,
                         samples);
    detail::draw_samples(out.pretrain_test, static_cast<ClassId>(c), center, spec.test_per_class, spec.spread,
                         samples);
  }

  std::vector<Vector> centers;
  for (std::size_t c = 0; c < spec.incremental_classes; ++c) centers.push_back(out.shift.apply(center_in_signal(geometry)));

  std::vector<ClassId> class_order(spec.incremental_classes);
  for (std::size_t c = 0; c < class_order.size(); ++c) class_order[c] = static_cast<ClassId>(c);
  order.shuffle(class_order);
  const std::size_t per_task = spec.incremental_classes / spec.tasks;
  for (std::size_t k = 0; k < spec.tasks; ++k) {
    Task task;
    task.classes.assign(class_order.begin() + k * per_task, class_order.begin() + (k + 1) * per_task);
    std::sort(task.classes.begin(), task.classes.end());
    task.train.split = "train";
    task.test.split = "test";
    task.train.spec_hash = task.test.spec_hash = spec_hash;
    for (ClassId c : task.classes) {
      detail::draw_samples(task.train, c, centers[c], spec.train_per_class, spec.spread, samples);
      detail::draw_samples(task.test, c, centers[c], spec.test_per_class, spec.spread, samples);
    }
    out.stream.tasks.push_back(std::move(task));
  }
  return out;
}

struct PretrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.03;
  double momentum = 0.9;
  std::size_t batch_size = 32;
};

// Supervised pretraining of the backbone alone through a throwaway linear
// head with softmax cross-entropy.
inline Backbone pretrain_backbone(Backbone backbone, const LabeledDataset& data, const PretrainConfig& config,
                                  Rng& rng) {
  if (data.empty()) throw EmptyInput("pretrain_backbone: no data");
  if (config.epochs == 0) return backbone;
  LinearHead head(backbone.config.embed_dim);
  head.add_classes(data.classes());
  OptimizerState backbone_opt{config.learning_rate, config.momentum, {}};
  OptimizerState head_opt{config.learning_rate, config.momentum, {}};
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      ModelGrads grads = zero_grads(backbone, nullptr);
      ParamSet head_grads = head.params.zeros_like();
      for (std::size_t b = start; b < end; ++b) {
        const Sample& s = data.samples[order[b]];
        ForwardResult fwd = embed_with_tape(backbone, nullptr, s.x);
        CeLossGrad ce = ce_adapt_loss(fwd.embedding, s.y, head);
        if (!std::isfinite(ce.loss)) throw NonFiniteLoss("pretrain_backbone: non-finite loss");
        for (auto& g : ce.d_embedding) g *= inv_batch;
        head_grads.add_scaled(ce.d_head, inv_batch);
        backprop_accumulate(backbone, nullptr, fwd.tape, ce.d_embedding, grads);
      }
      sgd_step(backbone.params, grads.backbone, backbone_opt);
      sgd_step(head.params, head_grads, head_opt);
    }
  }
  if (!backbone.params.all_finite()) throw NonFiniteLoss("pretrain_backbone: parameters became non-finite");
  return backbone;
}

// Nearest-class-mean accuracy on `test` with prototypes built from `train`.
inline double ncm_accuracy(const Model& model, const LabeledDataset& train, const LabeledDataset& test) {
  const PrototypeTable protos = compute_prototypes(model, train);
  std::size_t hits = 0;
  for (const auto& s : test.samples) hits += nearest_prototype(protos, model.embed(s.x)) == s.y ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

// CSV with header `y,x_1,...,x_D`.
inline void write_csv_dataset(const LabeledDataset& data, std::ostream& os) {
  os << "y";
  for (std::size_t i = 1; i <= data.dim(); ++i) os << ",x_" << i;
  os << '\n';
  char buf[32];
  for (const auto& s : data.samples) {
    os << s.y;
    for (double x : s.x) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      os << ',' << buf;
    }
    os << '\n';
  }
}

inline LabeledDataset read_csv_dataset(std::istream& is, std::string split = "file") {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError(1, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header[0] != "y") throw ParseError(1, "header must be y,x_1,...,x_D");
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i] != "x_" + std::to_string(i)) throw ParseError(1, "unexpected header column '" + header[i] + "'");
  }
  const std::size_t D = header.size() - 1;
  LabeledDataset data;
  data.split = std::move(split);
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != D + 1) {
      throw ParseError(line_no, "expected " + std::to_string(D + 1) + " fields, found " + std::to_string(cells.size()));
    }
    Sample s;
    try {
      std::size_t used = 0;
      s.y = std::stoi(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument("trailing characters");
      s.x.reserve(D);
      for (std::size_t i = 1; i <= D; ++i) {
        const double v = std::stod(cells[i], &used);
        if (used != cells[i].size() || !std::isfinite(v)) throw std::invalid_argument("bad number");
        s.x.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "malformed number");
    }
    data.samples.push_back(std::move(s));
  }
  data.validate();
  return data;
}

inline LabeledDataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open " + path);
  return read_csv_dataset(in, path);
}

}  // namespace acl
