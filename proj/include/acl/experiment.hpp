#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "acl/checkpoint.hpp"
#include "acl/config.hpp"
#include "acl/continual.hpp"
#include "acl/data.hpp"
#include "acl/metrics.hpp"
#include "acl/verify.hpp"

namespace acl {

inline constexpr const char* kToolVersion = "acl-toolkit 1.0.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2 };

// Everything shared by the variants of one seed: the data and the pretrained
// backbone (plus a fresh adapter).
struct SeedMaterial {
  std::uint64_t seed = 0;
  SyntheticSpec spec;
  SyntheticData data;
  Model pretrained;
  double pretrain_ncm = 0.0;
  double generate_seconds = 0.0;
  double pretrain_seconds = 0.0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline std::string num(const char* fmt, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string g12(double v) { return num("%.12g", v); }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// results[i] = fn(i), computed on up to `workers` threads.
template <typename Fn>
auto parallel_map(std::size_t n, std::size_t workers, Fn&& fn) {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min(std::max<std::size_t>(workers, 1), std::max<std::size_t>(n, 1));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  std::vector<R> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

}  // namespace detail

inline SeedMaterial prepare_seed(const RunConfig& config, std::uint64_t seed) {
  SeedMaterial m;
  m.seed = seed;
  auto t0 = detail::Clock::now();
  m.spec = config.data;
  m.spec.seed = seed;
  m.data = generate_synthetic(m.spec);
  m.generate_seconds = detail::seconds_since(t0);

  t0 = detail::Clock::now();
  Rng rng(seed);
  Rng model_rng = rng.fork(10);
  auto [backbone, adapter] = init_model(config.model, model_rng);
  Rng pretrain_rng = rng.fork(11);
  backbone = pretrain_backbone(std::move(backbone), m.data.pretrain_train, config.pretrain, pretrain_rng);
  m.pretrained.backbone = std::move(backbone);
  if (config.use_adapter) m.pretrained.adapter = std::move(adapter);
  m.pretrain_ncm = ncm_accuracy(m.pretrained, m.data.pretrain_train, m.data.pretrain_test);
  m.pretrain_seconds = detail::seconds_since(t0);
  return m;
}

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  RunResult run;
  double seconds = 0.0;

  bool bounds_pass() const {
    for (const auto& r : run.reports) {
      if (!r.all_bounds_pass()) return false;
    }
    return true;
  }
  bool ok() const { return run.completed && bounds_pass(); }
  std::string status() const {
    if (!run.completed) return "failed";
    return bounds_pass() ? "ok" : "bound_violation";
  }
  std::string run_id() const { return variant + "-" + std::to_string(seed); }
};

inline CellResult run_cell(const RunConfig& config, const SeedMaterial& material, const Variant& variant) {
  const auto t0 = detail::Clock::now();
  AdaptConfig ac = config.adapt;
  ac.mode = variant.mode;
  ac.first_task_only = variant.first_task_only;
  Rng rng(material.seed);
  Rng run_rng = rng.fork(20);
  CellResult c{variant.name, material.seed, run_acl(material.data.stream, material.pretrained, ac, config.core, run_rng),
               0.0};
  c.seconds = detail::seconds_since(t0);
  return c;
}

struct Summary {
  std::optional<double> la, aia, forgetting, plasticity;
};

inline Summary summarize(const AccuracyMatrix& m, PlasticityMode mode) {
  Summary s;
  if (!m.complete()) return s;
  s.la = last_accuracy(m);
  s.aia = avg_incremental_accuracy(m);
  if (m.tasks() >= 2) s.forgetting = forgetting(m);
  s.plasticity = plasticity(m, mode);
  return s;
}

inline std::string metrics_header() { return "run_id,seed,mode,LA,AIA,forgetting,plasticity,status\n"; }

inline std::string metrics_row(const CellResult& c, PlasticityMode mode) {
  const Summary s = summarize(c.run.matrix, mode);
  auto cell = [](const std::optional<double>& v) { return v ? detail::g12(*v) : std::string(); };
  return c.run_id() + "," + std::to_string(c.seed) + "," + c.variant + "," + cell(s.la) + "," + cell(s.aia) + "," +
         cell(s.forgetting) + "," + cell(s.plasticity) + "," + c.status() + "\n";
}

inline std::string bounds_header() { return "run_id,seed,mode,task,context,lhs,rhs,slack,pass\n"; }

inline std::string bounds_rows(const CellResult& c) {
  std::string out;
  auto row = [&](std::size_t task, const BoundReport& b) {
    out += c.run_id() + "," + std::to_string(c.seed) + "," + c.variant + "," + std::to_string(task) + "," +
           b.context + "," + detail::num("%.17g", b.lhs) + "," + detail::num("%.17g", b.rhs) + "," +
           detail::num("%.17g", b.slack()) + "," + (b.pass() ? "1" : "0") + "\n";
  };
  for (std::size_t k = 0; k < c.run.reports.size(); ++k) {
    const AdaptReport& r = c.run.reports[k];
    if (r.epochs.empty() && r.batch_markov.empty()) continue;
    for (const auto& b : r.batch_markov) row(k + 1, b);
    for (const auto& e : r.epochs) {
      row(k + 1, e.markov);
      row(k + 1, e.stability);
    }
    for (const auto& b : r.lemma1_bridge) row(k + 1, b);
    row(k + 1, BoundReport{"threshold_violations", static_cast<double>(r.threshold_violations), 0.0, 0.0});
  }
  return out;
}

inline std::string accuracy_matrix_csv(const AccuracyMatrix& m) {
  std::string out = "after_task";
  for (std::size_t j = 1; j <= m.tasks(); ++j) out += ",task_" + std::to_string(j);
  out += "\n";
  for (std::size_t b = 0; b < m.completed(); ++b) {
    out += std::to_string(b + 1);
    for (std::size_t j = 0; j < m.tasks(); ++j) out += "," + (j <= b ? detail::g12(m.at(b, j)) : std::string());
    out += "\n";
  }
  return out;
}

inline std::string adapt_report_csv(const RunResult& run) {
  std::string out = "task,epoch,mean_loss,bound_lhs,bound_rhs,markov_lhs,markov_rhs\n";
  for (std::size_t k = 0; k < run.reports.size(); ++k) {
    for (const auto& e : run.reports[k].epochs) {
      out += std::to_string(k + 1) + "," + std::to_string(e.epoch) + "," + detail::num("%.17g", e.mean_loss) + "," +
             detail::num("%.17g", e.stability.lhs) + "," + detail::num("%.17g", e.stability.rhs) + "," +
             detail::num("%.17g", e.markov.lhs) + "," + detail::num("%.17g", e.markov.rhs) + "\n";
    }
  }
  return out;
}

struct ExperimentOutcome {
  std::vector<CellResult> cells;  // seed-major, variant-minor
  bool ok = true;
};

// Runs every (seed, variant) cell on prepared material and writes the
// per-cell files plus the aggregate CSVs under `out`. Cells may run on
// `config.workers` threads; all files are written afterwards in fixed order.
inline ExperimentOutcome run_experiment(const RunConfig& config, const std::vector<SeedMaterial>& materials,
                                        const std::filesystem::path& out, nlohmann::ordered_json& manifest) {
  const std::size_t n_variants = config.variants.size();
  std::vector<CellResult> cells = detail::parallel_map(materials.size() * n_variants, config.workers,
                                                       [&](std::size_t i) {
                                                         return run_cell(config, materials[i / n_variants],
                                                                         config.variants[i % n_variants]);
                                                       });
  ExperimentOutcome outcome;
  std::vector<std::string> files = {"metrics.csv", "bounds.csv"};
  std::string metrics = metrics_header();
  std::string bounds = bounds_header();
  auto& seeds_json = manifest["seeds"];
  for (std::size_t s = 0; s < materials.size(); ++s) {
    const SeedMaterial& m = materials[s];
    nlohmann::ordered_json sj;
    sj["seed"] = m.seed;
    sj["pretrain_ncm_accuracy"] = m.pretrain_ncm;
    sj["seconds"] = {{"generate", m.generate_seconds}, {"pretrain", m.pretrain_seconds}};
    for (std::size_t v = 0; v < n_variants; ++v) {
      const CellResult& c = cells[s * n_variants + v];
      const std::string stem = std::to_string(m.seed);
      const std::filesystem::path dir = out / c.variant;
      detail::write_text(dir / ("accuracy_matrix_" + stem + ".csv"), accuracy_matrix_csv(c.run.matrix));
      detail::write_text(dir / ("adapt_report_" + stem + ".csv"), adapt_report_csv(c.run));
      save_checkpoint(Checkpoint{m.seed, c.variant, m.spec, c.run.final_state.model},
                      (dir / ("checkpoint_" + stem + ".txt")).string());
      files.push_back(c.variant + "/accuracy_matrix_" + stem + ".csv");
      files.push_back(c.variant + "/adapt_report_" + stem + ".csv");
      files.push_back(c.variant + "/checkpoint_" + stem + ".txt");
      metrics += metrics_row(c, config.plasticity);
      bounds += bounds_rows(c);
      nlohmann::ordered_json cj;
      cj["status"] = c.status();
      cj["adapt_calls"] = c.run.adapt_calls;
      cj["seconds"] = c.seconds;
      if (!c.run.error.empty()) cj["error"] = c.run.error;
      sj["modes"][c.variant] = cj;
      outcome.ok = outcome.ok && c.ok();
    }
    seeds_json.push_back(sj);
  }
  detail::write_text(out / "metrics.csv", metrics);
  detail::write_text(out / "bounds.csv", bounds);
  manifest["files"] = files;
  outcome.cells = std::move(cells);
  return outcome;
}

inline nlohmann::ordered_json base_manifest(const RunConfig& config, const std::string& command) {
  nlohmann::ordered_json j;
  j["tool"] = kToolVersion;
  j["command"] = command;
  j["config"] = config.source_text;
  j["data_spec_hash"] = config.data.hash();
  j["seeds"] = nlohmann::ordered_json::array();
  return j;
}

inline void write_manifest(const std::filesystem::path& out, const nlohmann::ordered_json& manifest) {
  detail::write_text(out / "manifest.json", manifest.dump(2) + "\n");
}

inline int cmd_run(const RunConfig& config, std::ostream& log = std::cerr) {
  const std::filesystem::path out = config.out_dir;
  auto manifest = base_manifest(config, "run");
  const auto t0 = detail::Clock::now();
  int code = kExitOk;
  try {
    const auto materials = detail::parallel_map(config.seeds.size(), config.workers,
                                                [&](std::size_t i) { return prepare_seed(config, config.seeds[i]); });
    const ExperimentOutcome outcome = run_experiment(config, materials, out, manifest);
    for (const auto& c : outcome.cells) {
      const Summary s = summarize(c.run.matrix, config.plasticity);
      log << c.run_id() << ": " << c.status();
      if (s.la) log << " LA=" << detail::g12(*s.la);
      if (!c.run.error.empty()) log << " (" << c.run.error << ")";
      log << "\n";
    }
    code = outcome.ok ? kExitOk : kExitFailure;
  } catch (const std::exception& e) {
    manifest["error"] = e.what();
    log << "run failed: " << e.what() << "\n";
    code = kExitFailure;
  }
  manifest["exit_code"] = code;
  manifest["seconds_total"] = detail::seconds_since(t0);
  write_manifest(out, manifest);
  return code;
}

enum class SweepAxis { temperature, epochs };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "temperature") return SweepAxis::temperature;
  if (s == "epochs") return SweepAxis::epochs;
  throw InvalidConfig("sweep axis must be temperature or epochs, got '" + s + "'");
}

inline RunConfig with_axis_value(RunConfig config, SweepAxis axis, const std::string& value) {
  if (axis == SweepAxis::temperature) {
    config.adapt.temperature = detail::to_double("adapt.temperature", value);
  } else {
    config.adapt.epochs = detail::to_uint("adapt.epochs", value);
  }
  config.validate();
  return config;
}

// One run per value on shared seed material; each cell lands in
// out/<axis>_<value>/, aggregates in out/sweep.csv and out/sweep_summary.csv.
inline int cmd_sweep(const RunConfig& config, const std::string& axis_name, const std::vector<std::string>& values,
                     std::ostream& log = std::cerr) {
  const SweepAxis axis = parse_sweep_axis(axis_name);
  if (values.empty()) throw InvalidConfig("sweep needs at least one value");
  std::vector<RunConfig> cells;
  for (const auto& v : values) cells.push_back(with_axis_value(config, axis, v));

  const std::filesystem::path out = config.out_dir;
  auto manifest = base_manifest(config, "sweep");
  manifest["axis"] = axis_name;
  manifest["values"] = values;
  const auto t0 = detail::Clock::now();
  int code = kExitOk;
  try {
    const auto materials = detail::parallel_map(config.seeds.size(), config.workers,
                                                [&](std::size_t i) { return prepare_seed(config, config.seeds[i]); });

    std::string sweep = "axis,value,seed,mode,LA,AIA,status\n";
    // mode -> metric -> per-value mean
    std::map<std::string, std::map<std::string, std::vector<std::string>>> summary;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const std::filesystem::path cell_dir = out / (axis_name + "_" + values[i]);
      auto cell_manifest = base_manifest(cells[i], "sweep-cell");
      ExperimentOutcome outcome;
      try {
        outcome = run_experiment(cells[i], materials, cell_dir, cell_manifest);
      } catch (const std::exception& e) {
        cell_manifest["error"] = e.what();
        outcome.ok = false;
        log << "sweep cell " << values[i] << " failed: " << e.what() << "\n";
      }
      write_manifest(cell_dir, cell_manifest);
      if (!outcome.ok) code = kExitFailure;
      std::map<std::string, std::pair<double, std::size_t>> la_sum, aia_sum;
      for (const auto& c : outcome.cells) {
        const Summary s = summarize(c.run.matrix, config.plasticity);
        sweep += axis_name + "," + values[i] + "," + std::to_string(c.seed) + "," + c.variant + "," +
                 (s.la ? detail::g12(*s.la) : "") + "," + (s.aia ? detail::g12(*s.aia) : "") + "," + c.status() + "\n";
        if (s.la) {
          la_sum[c.variant].first += *s.la;
          la_sum[c.variant].second += 1;
          aia_sum[c.variant].first += *s.aia;
          aia_sum[c.variant].second += 1;
        }
      }
      for (const auto& v : config.variants) {
        auto mean = [&](auto& acc) {
          auto it = acc.find(v.name);
          return it == acc.end() || it->second.second == 0 ? std::string()
                                                           : detail::g12(it->second.first / it->second.second);
        };
        summary[v.name]["mean_LA"].push_back(mean(la_sum));
        summary[v.name]["mean_AIA"].push_back(mean(aia_sum));
      }
      log << "sweep " << axis_name << "=" << values[i] << (outcome.ok ? " ok" : " failed") << "\n";
    }
    std::string table = "mode,metric";
    for (const auto& v : values) table += "," + axis_name + "_" + v;
    table += "\n";
    for (const auto& v : config.variants) {
      for (const char* metric : {"mean_LA", "mean_AIA"}) {
        table += v.name + "," + metric;
        for (const auto& x : summary[v.name][metric]) table += "," + x;
        table += "\n";
      }
    }
    detail::write_text(out / "sweep.csv", sweep);
    detail::write_text(out / "sweep_summary.csv", table);
    manifest["files"] = {"sweep.csv", "sweep_summary.csv"};
  } catch (const std::exception& e) {
    manifest["error"] = e.what();
    log << "sweep failed: " << e.what() << "\n";
    code = kExitFailure;
  }
  manifest["exit_code"] = code;
  manifest["seconds_total"] = detail::seconds_since(t0);
  write_manifest(out, manifest);
  return code;
}

inline int cmd_verify(std::uint64_t seed, const VerifySizes& sizes, std::ostream& os = std::cout) {
  const auto results = run_verification(seed, sizes);
  bool all = true;
  char line[512];
  std::snprintf(line, sizeof line, "%-30s %-5s %12s %10s %8s %8s\n", "check", "pass", "worst", "threshold", "cases",
                "seconds");
  os << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-30s %-5s %12.4g %10.3g %8zu %8.3f\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                  r.worst, r.threshold, r.cases, r.seconds);
    os << line;
    if (!r.detail.empty() && (!r.pass || r.detail.rfind("warning", 0) == 0)) os << "  " << r.detail << "\n";
    all = all && r.pass;
  }
  os << (all ? "all checks passed" : "verification FAILED") << " (seed " << seed << ")\n";
  return all ? kExitOk : kExitFailure;
}

enum class SplitSelection { train, test, all };

inline SplitSelection parse_split_selection(const std::string& s) {
  if (s == "train") return SplitSelection::train;
  if (s == "test") return SplitSelection::test;
  if (s == "all") return SplitSelection::all;
  throw InvalidConfig("split must be train, test or all");
}

// Rows `task,class,split,e_1..e_d` for the incremental stream regenerated from
// `spec`.
inline std::size_t write_embeddings_csv(const Checkpoint& ck, const SyntheticSpec& spec, SplitSelection which,
                                        std::ostream& os) {
  const SyntheticData data = generate_synthetic(spec);
  const std::size_t d = ck.model.backbone.config.embed_dim;
  os << "task,class,split";
  for (std::size_t i = 1; i <= d; ++i) os << ",e_" << i;
  os << "\n";
  std::size_t rows = 0;
  char buf[32];
  auto emit = [&](std::size_t task, const LabeledDataset& set, const char* split) {
    for (const auto& s : set.samples) {
      const UnitVector e = ck.model.embed(s.x);
      os << task << ',' << s.y << ',' << split;
      for (double v : e.values()) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ',' << buf;
      }
      os << "\n";
      ++rows;
    }
  };
  for (std::size_t k = 0; k < data.stream.size(); ++k) {
    if (which != SplitSelection::test) emit(k + 1, data.stream.tasks[k].train, "train");
    if (which != SplitSelection::train) emit(k + 1, data.stream.tasks[k].test, "test");
  }
  return rows;
}

inline int cmd_dump_embeddings(const std::string& checkpoint_path, const std::optional<RunConfig>& config,
                               const std::filesystem::path& out, SplitSelection which,
                               std::ostream& log = std::cerr) {
  Checkpoint ck;
  try {
    ck = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    log << "cannot load checkpoint: " << e.what() << "\n";
    return kExitFailure;
  }
  SyntheticSpec spec = ck.data;
  if (config) {
    spec = config->data;
    spec.seed = ck.data.seed;
  }
  if (spec.input_dim != ck.model.backbone.config.input_dim) {
    log << "data input_dim " << spec.input_dim << " does not match the checkpoint model\n";
    return kExitFailure;
  }
  std::filesystem::create_directories(out);
  std::ofstream os(out / "embeddings.csv", std::ios::binary);
  if (!os) {
    log << "cannot write " << (out / "embeddings.csv").string() << "\n";
    return kExitFailure;
  }
  const std::size_t rows = write_embeddings_csv(ck, spec, which, os);
  log << "wrote " << rows << " rows to " << (out / "embeddings.csv").string() << "\n";
  return kExitOk;
}

}  // namespace acl
