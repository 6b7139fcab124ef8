// Acceptance checks. Prints one PASS/FAIL line per criterion; exits non-zero
// when any requested criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nona/baselines.hpp"
#include "nona/cli.hpp"
#include "nona/csv.hpp"
#include "nona/theory_checks.hpp"
#include "nona/training.hpp"
#include "test_util.hpp"

using namespace nona;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

void report(int n, const std::string& label, const Verdict& v) {
  std::cout << "CRITERION " << n << label << " " << (v.pass ? "PASS" : "FAIL") << ": " << v.detail << std::endl;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// 1. Tape gradients of the full model loss against central differences.
bool criterion_1() {
  const double h = 1e-5, tol = 1e-4;
  std::vector<std::pair<SoftStepFamily, ParamMode>> variants{{SoftStepFamily::None, ParamMode::Global}};
  for (auto f : {SoftStepFamily::S1, SoftStepFamily::S2}) {
    for (auto m : {ParamMode::Global, ParamMode::Pointwise}) variants.emplace_back(f, m);
  }
  Rng rng(1001);
  double worst = 0.0, worst_fine = 0.0;
  std::size_t configs = 0, checked = 0;
  std::string worst_where;
  for (auto sim : {SimilarityKind::NegL2, SimilarityKind::NegL1, SimilarityKind::Dot, SimilarityKind::Cosine}) {
    for (auto [family, mode] : variants) {
      ModelConfig mc;
      mc.head = HeadKind::Nona;
      mc.mlp = {2, 6, 4, 1};
      mc.similarity = sim;
      mc.softstep = {family, mode, 1e-6, 1e-3};
      Model model(mc, 7 + configs);
      for (Parameter* p : model.parameters()) {
        if (p->name.rfind("softstep.", 0) == 0) p->value = nona::testing::random_tensor(p->value.shape(), rng, -2, 2);
      }
      const Tensor X = nona::testing::random_tensor({8, 2}, rng, -1, 1);
      const Tensor y = nona::testing::random_tensor({8}, rng, -1, 1);
      const auto loss = [&](Tape& t) { return mse_loss(model.forward_train(t, X, y), t.constant(y)); };

      Tape tape;
      const GradientMap grads = tape.backward(loss(tape));
      for (Parameter* p : model.parameters()) {
        const Tensor saved = p->value;
        const auto numeric = [&](double step) {
          return nona::testing::finite_difference(
              [&](const Tensor& v) {
                p->value = v;
                Tape t(false);
                const double out = loss(t).value().item();
                p->value = saved;
                return out;
              },
              saved, step);
        };
        const double err = nona::testing::max_relative_error(grads.at(p), numeric(h));
        // Diagnostic only: a smaller step separates truncation error from a
        // wrong derivative.
        worst_fine = std::max(worst_fine, nona::testing::max_relative_error(grads.at(p), numeric(h / 10)));
        checked += saved.size();
        if (err > worst) {
          worst = err;
          worst_where = to_string(sim) + "/" + to_string(family) + "/" + to_string(mode) + " " + p->name;
        }
      }
      ++configs;
    }
  }
  const Verdict v{worst <= tol, std::to_string(configs) + " configs, " + std::to_string(checked) +
                                    " parameter entries, worst relative error " + fmt(worst) + " (" + worst_where +
                                    "), tolerance " + fmt(tol) + "; with step 1e-6 the worst is " +
                                    fmt(worst_fine)};
  report(1, "", v);
  return v.pass;
}

// 2. Attention rows of random training batches are probability vectors with
// an exactly zero diagonal.
bool criterion_2() {
  Rng rng(1002);
  const SimilarityKind sims[] = {SimilarityKind::NegL2, SimilarityKind::NegL1, SimilarityKind::Dot,
                                 SimilarityKind::Cosine};
  const SoftStepFamily fams[] = {SoftStepFamily::None, SoftStepFamily::S1, SoftStepFamily::S2};
  double worst_sum = 0.0;
  std::size_t bad_range = 0, bad_diag = 0, rows = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t b = 2 + rng.below(63), d = 1 + rng.below(8);
    const auto mode = rng.below(2) ? ParamMode::Pointwise : ParamMode::Global;
    NonaHead head(sims[rng.below(4)], {fams[rng.below(3)], mode, 1e-6, 1e-3}, d);
    for (Parameter* p : head.parameters()) p->value = nona::testing::random_tensor(p->value.shape(), rng, -3, 3);
    Tape tape(false);
    const Tensor Z = nona::testing::random_tensor({b, d}, rng);
    const Tensor y = nona::testing::random_tensor({b}, rng);
    const Tensor P = head.forward_train(tape.constant(Z), tape.constant(y)).attention.value();
    for (std::size_t i = 0; i < b; ++i, ++rows) {
      double s = 0.0;
      for (std::size_t j = 0; j < b; ++j) {
        const double p = P(i, j);
        if (!(p >= 0.0 && p <= 1.0)) ++bad_range;
        s += p;
      }
      if (P(i, i) != 0.0) ++bad_diag;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
  }
  const Verdict v{worst_sum <= 1e-12 && bad_range == 0 && bad_diag == 0,
                  "1000 batches, " + std::to_string(rows) + " rows, worst |row sum - 1| " + fmt(worst_sum) +
                      ", out-of-range weights " + std::to_string(bad_range) + ", nonzero diagonals " +
                      std::to_string(bad_diag)};
  report(2, "", v);
  return v.pass;
}

std::string coverage_text(const SuiteReport& r) {
  std::string s;
  for (const auto& [name, count] : r.coverage) s += ", " + name + "=" + std::to_string(count);
  return s;
}

bool suite_criterion(int n, const SuiteReport& r, bool needs_coverage) {
  bool covered = true;
  for (const auto& [name, count] : r.coverage) covered = covered && count > 0;
  const Verdict v{r.passed() && (!needs_coverage || covered),
                  std::to_string(r.instances) + " instances, " + std::to_string(r.failures) + " failures, worst " +
                      fmt(r.worst) + ", tolerance " + fmt(r.tolerance) + coverage_text(r)};
  report(n, "", v);
  return v.pass;
}

bool criterion_3() { return suite_criterion(3, run_decomposition_suite(1003, 1000, 64), false); }
bool criterion_4() { return suite_criterion(4, run_triplet_suite(1004, 10000, 1e-4), true); }
bool criterion_5() { return suite_criterion(5, run_simplex_suite(1005, 1000, 200), false); }

// Benchmarks at the default configuration, shared by criteria 6 and 7.
struct DatasetBench {
  Target target;
  BenchmarkResult result;
};

std::vector<DatasetBench> run_all_benchmarks(double& seconds) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<DatasetBench> out;
  for (Target t : {Target::Radial, Target::Spiral, Target::Checkerboard, Target::Linear}) {
    ExperimentConfig c;
    c.dataset.target = t;
    out.push_back({t, run_benchmark(c, 5, 1)});
    const BenchmarkResult& r = out.back().result;
    std::cout << "  " << to_string(t) << ": dense " << fmt(r.dense.mean) << " dense+knn " << fmt(r.dense_knn.mean)
              << " nona " << fmt(r.nona.mean) << " nona+knn " << fmt(r.nona_knn.mean) << " lr "
              << fmt(r.linear_regression.mean) << " raw knn " << fmt(r.raw_knn.mean) << std::endl;
  }
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// 6. Qualitative ordering against the linear and k-NN baselines.
bool criterion_6() {
  double seconds = 0.0;
  const auto benches = run_all_benchmarks(seconds);
  bool all = true;
  for (const DatasetBench& b : benches) {
    const BenchmarkResult& r = b.result;
    Verdict v;
    if (b.target == Target::Linear) {
      v.pass = r.nona.mean <= 1.5 * r.linear_regression.mean;
      v.detail = "nona " + fmt(r.nona.mean) + " <= 1.5 x lr " + fmt(r.linear_regression.mean);
    } else {
      const bool vs_lr = r.nona.mean <= 0.5 * r.linear_regression.mean;
      const bool vs_knn = r.nona.mean <= 2.0 * r.raw_knn.mean;
      v.pass = vs_lr && vs_knn;
      v.detail = "nona " + fmt(r.nona.mean) + " <= 0.5 x lr " + fmt(r.linear_regression.mean) + " [" +
                 (vs_lr ? "ok" : "no") + "], <= 2 x knn " + fmt(r.raw_knn.mean) + " [" + (vs_knn ? "ok" : "no") + "]";
    }
    report(6, "." + to_string(b.target), v);
    all = all && v.pass;
  }
  const Verdict time{seconds <= 900.0, "wall time " + fmt(seconds) + " s for 4 datasets x 5 seeds (limit 900 s)"};
  report(6, ".runtime", time);
  all = all && time.pass;
  report(6, "", {all, all ? "all sub-checks pass" : "see failing sub-checks above"});
  return all;
}

// 7. NONA or NONA+kNN at least matches the better dense variant.
bool criterion_7() {
  double seconds = 0.0;
  const auto benches = run_all_benchmarks(seconds);
  bool all = true;
  for (const DatasetBench& b : benches) {
    if (b.target == Target::Linear) continue;
    const BenchmarkResult& r = b.result;
    const double nona = std::min(r.nona.mean, r.nona_knn.mean);
    const double dense = std::min(r.dense.mean, r.dense_knn.mean);
    const Verdict v{nona <= dense, "min(nona, nona+knn) " + fmt(nona) + " vs min(dense, dense+knn) " + fmt(dense)};
    report(7, "." + to_string(b.target), v);
    all = all && v.pass;
  }
  report(7, "", {all, all ? "all datasets pass" : "see failing datasets above"});
  return all;
}

// 8. Limit shapes of the two mask families at t = t_clamp.
bool criterion_8() {
  const double t = 1e-3;
  const std::pair<double, double> bounds[] = {{0.1, 0.9}, {0.0, 1.0}, {0.3, 0.5}, {0.25, 0.8}, {0.6, 0.95}};
  double worst1 = 0.0;
  for (auto [a, b] : bounds) {
    const double mid = 0.5 * (a + b);
    for (int i = 0; i <= 100000; ++i) {
      const double x = i * 1e-5;
      if (std::abs(x - mid) < 0.01) continue;
      worst1 = std::max(worst1, std::abs(s1(x, a, b, t) - (x >= mid ? 1.0 : 0.0)));
    }
  }
  const Verdict v1{worst1 <= 1e-3, "S1 worst deviation from the step outside +/-0.01 of (a+b)/2: " + fmt(worst1)};
  report(8, ".s1", v1);

  double worst2 = 0.0, worst_x = 0.0, worst_b = 0.0;
  for (double b : {0.2, 0.5, 0.9, 1.0}) {
    for (int i = 0; i < 100000; ++i) {
      const double x = b * i / 100000.0;
      const double gap = 1.0 - s2(x, b, t);
      if (gap > worst2) {
        worst2 = gap;
        worst_x = x;
        worst_b = b;
      }
    }
  }
  // Largest x / b at which S2 still falls short, for the report.
  double last_short = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double x = i / 100000.0;
    if (1.0 - s2(x, 1.0, t) > 1e-3) last_short = x;
  }
  const Verdict v2{worst2 <= 1e-3, "S2 worst 1 - S2 on [0, b): " + fmt(worst2) + " at x=" + fmt(worst_x) +
                                       ", b=" + fmt(worst_b) + "; with b=1, 1 - S2 > 1e-3 for x up to " +
                                       fmt(last_short)};
  report(8, ".s2", v2);
  report(8, "", {v1.pass && v2.pass, v1.pass && v2.pass ? "both families pass" : "see failing family above"});
  return v1.pass && v2.pass;
}

// 9. With a0 -> 1 and t at its clamp, S1 keeps only the nearest neighbor.
bool criterion_9() {
  Rng rng(1009);
  NonaHead head(SimilarityKind::NegL2, {SoftStepFamily::S1, ParamMode::Global, 1e-6, 1e-3}, 4);
  head.softstep().global_raw().value = Tensor::matrix({{40.0, 0.0, -40.0}});
  const Tensor Zb = nona::testing::random_tensor({50, 4}, rng, -1, 1);
  const Tensor yb = nona::testing::random_tensor({50}, rng, -1, 1);
  head.set_neighbor_bank(Zb, yb);
  const Tensor Q = nona::testing::random_tensor({100, 4}, rng, -1, 1);
  const Tensor got = head.predict(Q);
  const Tensor want = knn_fit_predict({1, 2, KnnWeighting::Uniform}, Zb, yb, Q);
  double worst = 0.0;
  for (std::size_t i = 0; i < 100; ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
  const Verdict v{worst <= 1e-3, "100 queries against a 50-point bank, worst |nona - 1nn| " + fmt(worst)};
  report(9, "", v);
  return v.pass;
}

std::map<std::string, std::string> snapshot_files(const fs::path& dir, const std::vector<std::string>& names) {
  std::map<std::string, std::string> out;
  for (const auto& n : names) {
    std::ifstream in(dir / n, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    out[n] = ss.str();
  }
  return out;
}

// 10. Same config, same bytes.
bool criterion_10() {
  const fs::path dir = fs::path(NONA_ACCEPTANCE_SCRATCH) / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  std::ofstream(cfg) << R"({
  "dataset": {"target": "spiral", "n_points": 400},
  "model": {"hidden_dim": 32, "embedding_dim": 8},
  "train": {"max_epochs": 15},
  "seed": 10
})";

  struct Command {
    std::string name;
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::string out = (dir / "out").string();
  const std::vector<Command> commands{
      {"train", {"nona", "train", "--config", cfg.string(), "--out", out, "--with-knn"},
       {"metrics.json", "trace.csv", "dataset.csv", "checkpoint/manifest.json"}},
      {"benchmark", {"nona", "benchmark", "--config", cfg.string(), "--repeats", "2", "--jobs", "2", "--out", out},
       {"benchmark.csv", "baselines.csv", "benchmark_repeats.csv"}},
      {"ablate", {"nona", "ablate", "--config", cfg.string(), "--axes", "similarity,softstep", "--seeds", "1", "--out", out},
       {"ablation_similarity.csv", "ablation_softstep.csv", "ablation_final_config.json"}},
  };
  bool all = true;
  std::string detail;
  for (const Command& c : commands) {
    std::ostringstream sink, err;
    std::map<std::string, std::string> first;
    bool ok = true;
    for (int round = 0; round < 2 && ok; ++round) {
      if (run_cli(c.args, sink, err) != kExitOk) {
        ok = false;
        detail += c.name + " failed: " + err.str();
        break;
      }
      const auto files = snapshot_files(out, c.files);
      for (const auto& [name, bytes] : files) ok = ok && !bytes.empty();
      if (round == 0) {
        first = files;
      } else {
        ok = ok && files == first;
      }
    }
    if (!detail.empty()) detail += "; ";
    detail += c.name + (ok ? " identical" : " differs");
    all = all && ok;
  }
  report(10, "", {all, detail});
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::function<bool()>> criteria{
      {1, criterion_1}, {2, criterion_2}, {3, criterion_3}, {4, criterion_4},  {5, criterion_5},
      {6, criterion_6}, {7, criterion_7}, {8, criterion_8}, {9, criterion_9}, {10, criterion_10}};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: nona_acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty()) {
    for (const auto& [n, f] : criteria) selected.push_back(n);
  }
  bool all = true;
  for (int n : selected) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    try {
      all = it->second() && all;
    } catch (const std::exception& e) {
      report(n, "", {false, std::string("threw: ") + e.what()});
      all = false;
    }
  }
  return all ? 0 : 1;
}
