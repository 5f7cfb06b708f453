// Acceptance battery: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "acl/experiment.hpp"

namespace fs = std::filesystem;
using namespace acl;

namespace {

// Tolerances and envelopes, pinned.
constexpr double kLemma1Tol = 1e-12;
constexpr double kLemma1Seconds = 1.0;
constexpr double kLemma2Seconds = 5.0;
constexpr double kGradSeconds = 30.0;
constexpr double kBenchmarkCpuSeconds = 300.0;
constexpr double kForgettingMargin = 0.05;
constexpr double kMetricTol = 1e-15;
constexpr std::uint64_t kSeed = 1993;

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Line> lines;

void report(int id, bool pass, const std::string& detail) {
  lines.push_back({id, pass, detail});
  std::printf("criterion %2d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
}

std::string f(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

CheckResult run_check(const std::function<CheckResult(Rng)>& fn, std::uint64_t stream) {
  Rng root(kSeed);
  return fn(root.fork(stream));
}

void criteria_1_to_3() {
  const VerifySizes sizes;
  const CheckResult l1 = run_check([&](Rng r) { return check_lemma1(sizes, r); }, 1);
  report(1, l1.pass && l1.worst <= kLemma1Tol && l1.cases == 3000 && l1.seconds < kLemma1Seconds,
         f("max residual %.3g over %.0f pairs, %.3f s", l1.worst, static_cast<double>(l1.cases), l1.seconds));

  const CheckResult l2 = run_check([&](Rng r) { return check_lemma2(sizes, r); }, 2);
  report(2, l2.pass && l2.cases == 20 && l2.seconds < kLemma2Seconds,
         f("%.0f sets, worst %.3g, %.3f s", static_cast<double>(l2.cases), l2.worst, l2.seconds) + "; " + l2.detail);

  const CheckResult th = run_check([&](Rng r) { return check_threshold(sizes, r); }, 3);
  report(3, th.pass && th.cases == 10000,
         f("%.0f draws, worst shortfall %.3g", static_cast<double>(th.cases), th.worst) + "; " + th.detail);
}

void criterion_6() {
  const VerifySizes sizes;
  const CheckResult g = check_gradients(sizes, kSeed);
  report(6, g.pass && g.worst <= kGradTolerance && g.seconds < kGradSeconds,
         f("max relative error %.3g over %.0f comparisons, %.3f s", g.worst, static_cast<double>(g.cases),
           g.seconds));
}

struct BenchmarkRuns {
  RunConfig config;
  std::vector<CellResult> cells;
  double cpu = 0.0;
  std::string error;
};

BenchmarkRuns run_default_benchmark(const fs::path& out) {
  BenchmarkRuns b;
  try {
    b.config = load_run_config(std::string(ACL_SOURCE_DIR) + "/configs/default.conf");
    b.config.out_dir = out.string();
    const double c0 = cpu_seconds();
    std::vector<SeedMaterial> materials;
    for (auto s : b.config.seeds) materials.push_back(prepare_seed(b.config, s));
    auto manifest = base_manifest(b.config, "acceptance");
    b.cells = run_experiment(b.config, materials, out, manifest).cells;
    b.cpu = cpu_seconds() - c0;
  } catch (const std::exception& e) {
    b.error = e.what();
  }
  return b;
}

const CellResult* find_cell(const BenchmarkRuns& b, const std::string& mode, std::uint64_t seed) {
  for (const auto& c : b.cells) {
    if (c.variant == mode && c.seed == seed) return &c;
  }
  return nullptr;
}

void criteria_4_5(const BenchmarkRuns& b) {
  std::size_t batches = 0, batch_bad = 0, epochs = 0, epoch_bad = 0, runs = 0;
  bool all_completed = true;
  for (const auto& c : b.cells) {
    if (c.variant == "disabled") continue;
    ++runs;
    all_completed = all_completed && c.run.completed;
    for (const auto& rep : c.run.reports) {
      for (const auto& m : rep.batch_markov) {
        ++batches;
        batch_bad += !m.pass();
      }
      for (const auto& e : rep.epochs) {
        ++epochs;
        epoch_bad += !e.stability.pass();
      }
    }
  }
  const bool ok = b.error.empty() && all_completed && runs == 10;
  report(4, ok && batches > 0 && batch_bad == 0,
         f("%.0f batches across %.0f adaptation runs, %.0f violations", static_cast<double>(batches),
           static_cast<double>(runs), static_cast<double>(batch_bad)) + b.error);
  report(5, ok && epochs > 0 && epoch_bad == 0,
         f("%.0f epochs, %.0f violations", static_cast<double>(epochs), static_cast<double>(epoch_bad)) + b.error);
}

void criteria_7_8(const BenchmarkRuns& b) {
  if (!b.error.empty()) {
    report(7, false, "benchmark failed: " + b.error);
    report(8, false, "benchmark failed: " + b.error);
    return;
  }
  const auto& seeds = b.config.seeds;
  const double n = static_cast<double>(seeds.size());
  double la_acl = 0, la_frozen = 0, la_first = 0, pl_acl = 0, pl_frozen = 0, fg_acl = 0, fg_frozen = 0;
  double min_gain = 1.0;
  bool per_seed = true, complete = true;
  for (auto s : seeds) {
    const CellResult* acl = find_cell(b, "acl", s);
    const CellResult* frozen = find_cell(b, "disabled", s);
    const CellResult* first = find_cell(b, "first_task_only", s);
    if (!acl || !frozen || !first || !acl->run.completed || !frozen->run.completed || !first->run.completed) {
      complete = false;
      continue;
    }
    const auto& ma = acl->run.matrix;
    const auto& mf = frozen->run.matrix;
    la_acl += last_accuracy(ma);
    la_frozen += last_accuracy(mf);
    la_first += last_accuracy(first->run.matrix);
    pl_acl += plasticity(ma, b.config.plasticity);
    pl_frozen += plasticity(mf, b.config.plasticity);
    fg_acl += forgetting(ma);
    fg_frozen += forgetting(mf);
    const double gain = last_accuracy(ma) - last_accuracy(mf);
    min_gain = std::min(min_gain, gain);
    per_seed = per_seed && gain > 0.0;
  }
  la_acl /= n, la_frozen /= n, la_first /= n, pl_acl /= n, pl_frozen /= n, fg_acl /= n, fg_frozen /= n;
  const bool a = complete && per_seed;
  const bool pl = complete && pl_acl > pl_frozen;
  const bool fg = complete && fg_acl <= fg_frozen + kForgettingMargin;
  const bool fast = b.cpu < kBenchmarkCpuSeconds;
  report(7, a && pl && fg && fast,
         f("(a) min per-seed LA gain %.4f; ", min_gain) +
             f("(b) plasticity %.4f vs %.4f; ", pl_acl, pl_frozen) +
             f("(c) forgetting %.4f vs %.4f; ", fg_acl, fg_frozen) + f("%.1f CPU s", b.cpu));
  report(8, complete && la_acl >= la_first && la_first >= la_frozen && fast,
         f("mean LA acl %.4f >= first_task_only %.4f >= frozen %.4f", la_acl, la_first, la_frozen));
}

struct HandCase {
  const char* name;
  std::vector<Vector> rows;
  double la, aia, plast;
  std::optional<double> forget;
};

void criterion_9() {
  const std::vector<HandCase> cases = {
      {"single", {{0.75}}, 0.75, 0.75, 0.75, std::nullopt},
      {"backward-transfer", {{0.5}, {0.75, 0.25}}, 0.5, 0.5, 0.5, -0.25},
      {"drop", {{1.0}, {0.5, 1.0}}, 0.75, 0.875, 1.0, 0.5},
      {"uniform", {{0.5}, {0.5, 0.5}, {0.5, 0.5, 0.5}}, 0.5, 0.5, 0.5, 0.0},
      {"three-task", {{0.9}, {0.7, 0.8}, {0.75, 0.5, 0.6}}, 0.6166666666666667, 0.7555555555555555,
       0.7666666666666667, 0.225},
      {"four-task", {{1.0}, {0.5, 1.0}, {0.5, 0.5, 1.0}, {0.25, 0.5, 0.75, 1.0}}, 0.625, 0.7604166666666666, 1.0,
       0.5},
  };
  std::size_t good = 0;
  std::string bad;
  for (const auto& c : cases) {
    AccuracyMatrix m(c.rows.size());
    for (const auto& r : c.rows) m.add_row(r);
    bool ok = std::abs(last_accuracy(m) - c.la) <= kMetricTol &&
              std::abs(avg_incremental_accuracy(m) - c.aia) <= kMetricTol &&
              std::abs(plasticity(m) - c.plast) <= kMetricTol;
    if (c.forget) {
      ok = ok && std::abs(forgetting(m) - *c.forget) <= kMetricTol;
    } else {
      try {
        forgetting(m);
        ok = false;
      } catch (const SingleTask&) {
      }
    }
    if (ok) {
      ++good;
    } else {
      bad += std::string(" ") + c.name;
    }
  }
  report(9, good == cases.size(),
         f("%.0f/%.0f hand matrices match", static_cast<double>(good), static_cast<double>(cases.size())) + bad);
}

void criterion_10(const fs::path& scratch) {
  const std::string cfg = std::string(ACL_SOURCE_DIR) + "/configs/default.conf";
  auto run = [&](const fs::path& out) {
    fs::remove_all(out);
    const std::string cmd = std::string("\"") + ACL_CLI_PATH + "\" run --config \"" + cfg + "\" --seeds " +
                            std::to_string(kSeed) + " --out \"" + out.string() + "\" > \"" +
                            (scratch / (out.filename().string() + ".log")).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const fs::path a = scratch / "det_a", b = scratch / "det_b";
  const int ra = run(a), rb = run(b);
  std::vector<std::string> files = {"metrics.csv", "bounds.csv"};
  for (const char* mode : {"acl", "disabled", "first_task_only"}) {
    files.push_back(std::string(mode) + "/accuracy_matrix_" + std::to_string(kSeed) + ".csv");
  }
  std::size_t same = 0;
  std::string diff;
  for (const auto& file : files) {
    const std::string x = slurp(a / file), y = slurp(b / file);
    if (!x.empty() && x == y) {
      ++same;
    } else {
      diff += " " + file;
    }
  }
  report(10, ra == 0 && rb == 0 && same == files.size(),
         f("exit codes %.0f/%.0f, %.0f", ra, rb, static_cast<double>(same)) +
             f("/%.0f files byte-identical", static_cast<double>(files.size())) + diff);
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "acl_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  criteria_1_to_3();
  const BenchmarkRuns bench = run_default_benchmark(scratch / "benchmark");
  criteria_4_5(bench);
  criterion_6();
  criteria_7_8(bench);
  criterion_9();
  criterion_10(scratch);

  std::size_t failed = 0;
  for (const auto& l : lines) failed += !l.pass;
  std::printf("%zu/%zu criteria passed\n", lines.size() - failed, lines.size());
  return failed == 0 ? 0 : 1;
}
