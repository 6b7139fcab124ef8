#include "nona/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "nona/checkpoint.hpp"
#include "nona/config.hpp"
#include "nona/csv.hpp"
#include "nona/errors.hpp"
#include "nona/theory_checks.hpp"
#include "nona/training.hpp"

namespace nona {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string> provenance(const ExperimentConfig& config) {
  return {"format_version=" + std::to_string(kFormatVersion), "config=" + config_echo(config)};
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(origin + " must be a non-negative integer, got '" + text + "'");
  }
  return v;
}

// Seed precedence: --seed flag, then NONA_SEED, then the config file.
void apply_seed_override(ExperimentConfig& config, const std::optional<std::uint64_t>& flag) {
  if (flag) {
    config.seed = *flag;
  } else if (const char* env = std::getenv("NONA_SEED"); env && *env) {
    config.seed = parse_seed(env, "NONA_SEED");
  }
}

Dataset read_labeled_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  const CsvTable table = read_csv(in);
  if (table.header.size() < 2) throw ConfigError(path.string() + " needs feature columns and a label column");
  const std::size_t d = table.header.size() - 1;
  Tensor X(Shape{table.rows.size(), d});
  Tensor y(Shape{table.rows.size()});
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) X(i, k) = table.rows[i][k];
    y[i] = table.rows[i][d];
  }
  return Dataset{std::move(X), std::move(y)};
}

int cmd_train(const fs::path& config_path, std::optional<std::uint64_t> seed, const std::string& out_flag, bool with_knn,
              std::ostream& out) {
  ExperimentConfig config = load_config(config_path);
  apply_seed_override(config, seed);
  if (!out_flag.empty()) config.output_dir = out_flag;
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);

  const TrainingOutcome run = run_training(config, with_knn);
  save_checkpoint(dir / "checkpoint", run.model, config, {run.result.best_epoch, run.result.best_val_mse});

  {
    auto f = open_output(dir / "trace.csv");
    CsvWriter csv(f, {"epoch", "train_mse", "val_mse"}, provenance(config));
    for (const EpochRecord& e : run.result.trace) {
      const double row[] = {static_cast<double>(e.epoch), e.train_mse, e.val_mse};
      csv.row(row);
    }
  }
  {
    SyntheticSpec spec = config.dataset;
    spec.seed = derive_seed(config.seed, streams::kData);
    auto f = open_output(dir / "dataset.csv");
    write_dataset_csv(f, generate(spec));
  }
  json metrics{{"format_version", kFormatVersion},
               {"config", config_to_json(config)},
               {"epochs_run", run.result.trace.size()},
               {"best_epoch", run.result.best_epoch},
               {"best_val_mse", run.result.best_val_mse},
               {"test_mse", run.result.test_mse},
               {"split_sizes", {{"train", run.data.train.size()}, {"val", run.data.val.size()}, {"test", run.data.test.size()}}}};
  if (run.knn) {
    metrics["knn"] = {{"k", run.knn->config.k},
                      {"p", run.knn->config.p},
                      {"weighting", to_string(run.knn->config.weighting)},
                      {"val_mse", run.knn->val_mse},
                      {"test_mse", run.knn->test_mse}};
  }
  open_output(dir / "metrics.json") << metrics.dump(2) << "\n";

  out << "trained " << to_string(config.model.head) << " head: " << run.result.trace.size() << " epochs, best epoch "
      << run.result.best_epoch << ", test MSE " << format_double(run.result.test_mse) << "\n";
  if (run.knn) out << "k-NN on embeddings (" << to_string(run.knn->config) << "): test MSE " << format_double(run.knn->test_mse) << "\n";
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_surface(const fs::path& checkpoint, std::size_t resolution, const std::string& predictor, const fs::path& out_path,
                std::ostream& out) {
  if (resolution < 2) throw ConfigError("--resolution must be at least 2");
  const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.config.model.mlp.input_dim != 2) throw ConfigError("surface export needs a model with 2-D inputs");

  Tensor grid(Shape{resolution * resolution, 2});
  for (std::size_t r = 0; r < resolution; ++r) {
    for (std::size_t c = 0; c < resolution; ++c) {
      const auto coord = [&](std::size_t i) {
        if (i == 0) return -1.0;
        if (i + 1 == resolution) return 1.0;
        return -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(resolution - 1);
      };
      grid(r * resolution + c, 0) = coord(c);
      grid(r * resolution + c, 1) = coord(r);
    }
  }

  Tensor pred;
  if (predictor == "model") {
    pred = ckpt.model.predict(grid);
  } else {
    const SplitData data = prepare_data(ckpt.config, derive_seed(ckpt.config.seed, streams::kSplit));
    if (predictor == "knn") {
      const Model& m = ckpt.model;
      const Tensor Z_train = m.embed(data.train.X);
      const auto search = knn_grid_search(Z_train, data.train.y, m.embed(data.val.X), data.val.y);
      pred = knn_fit_predict(search.best, Z_train, data.train.y, m.embed(grid));
    } else if (predictor == "raw-knn") {
      const auto search = knn_grid_search(data.train.X, data.train.y, data.val.X, data.val.y);
      pred = knn_fit_predict(search.best, data.train.X, data.train.y, grid);
    } else if (predictor == "lr") {
      pred = linear_regression_fit(data.train.X, data.train.y).predict(grid);
    } else {
      throw ConfigError("unknown predictor '" + predictor + "' (expected model, knn, lr or raw-knn)");
    }
  }

  auto f = open_output(out_path);
  std::vector<std::string> meta = provenance(ckpt.config);
  meta.push_back("predictor=" + predictor);
  CsvWriter csv(f, {"x1", "x2", "y_hat"}, meta);
  for (std::size_t i = 0; i < grid.rows(); ++i) {
    const double row[] = {grid(i, 0), grid(i, 1), pred[i]};
    csv.row(row);
  }
  out << "wrote " << grid.rows() << " surface points to " << out_path.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const fs::path& config_path, const std::vector<std::string>& axis_names, std::size_t seeds,
               std::size_t jobs, std::optional<std::uint64_t> seed, const std::string& out_flag, std::ostream& out) {
  ExperimentConfig config = load_config(config_path);
  apply_seed_override(config, seed);
  if (!out_flag.empty()) config.output_dir = out_flag;
  std::vector<AblationAxis> axes;
  for (const std::string& a : axis_names) axes.push_back(parse_ablation_axis(a));
  if (axes.empty()) axes = {AblationAxis::Similarity, AblationAxis::SoftStep, AblationAxis::BatchSize, AblationAxis::EmbeddingDim};

  const AblationResult result = run_ablation(config, axes, seeds, jobs);
  const fs::path dir = config.output_dir;
  for (const AblationStage& stage : result.stages) {
    auto f = open_output(dir / ("ablation_" + to_string(stage.axis) + ".csv"));
    std::vector<std::string> meta = provenance(config);
    meta.push_back("seeds=" + std::to_string(seeds));
    meta.push_back("rows=test_mse,val_mse (mean±std)");
    meta.push_back("winner=" + stage.cells[stage.winner].label);
    std::vector<std::string> header, test_row, val_row;
    for (const AblationCell& c : stage.cells) {
      header.push_back(c.label);
      test_row.push_back(format_mean_std(c.test));
      val_row.push_back(format_mean_std(c.val));
    }
    CsvWriter csv(f, header, meta);
    csv.row(test_row);
    csv.row(val_row);
    out << to_string(stage.axis) << ": winner " << stage.cells[stage.winner].label << "\n";
  }
  ExperimentConfig final_config = config;
  final_config.model = result.final_model;
  final_config.train = result.final_train;
  open_output(dir / "ablation_final_config.json") << config_to_json(final_config).dump(2) << "\n";
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_benchmark(const fs::path& config_path, std::size_t repeats, std::size_t jobs, std::optional<std::uint64_t> seed,
                  const std::string& out_flag, std::ostream& out) {
  ExperimentConfig config = load_config(config_path);
  apply_seed_override(config, seed);
  if (!out_flag.empty()) config.output_dir = out_flag;
  const BenchmarkResult result = run_benchmark(config, repeats, jobs);
  const fs::path dir = config.output_dir;
  std::vector<std::string> meta = provenance(config);
  meta.push_back("repeats=" + std::to_string(repeats));
  const std::string name = to_string(config.dataset.target);
  {
    auto f = open_output(dir / "benchmark.csv");
    CsvWriter csv(f, {"dataset", "dense", "dense_knn", "nona", "nona_knn"}, meta);
    csv.row(std::vector<std::string>{name, format_mean_std(result.dense), format_mean_std(result.dense_knn),
                                     format_mean_std(result.nona), format_mean_std(result.nona_knn)});
  }
  {
    auto f = open_output(dir / "baselines.csv");
    CsvWriter csv(f, {"dataset", "lr", "raw_knn"}, meta);
    csv.row(std::vector<std::string>{name, format_mean_std(result.linear_regression), format_mean_std(result.raw_knn)});
  }
  {
    auto f = open_output(dir / "benchmark_repeats.csv");
    CsvWriter csv(f, {"repeat", "dense", "dense_knn", "nona", "nona_knn", "lr", "raw_knn"}, meta);
    for (std::size_t r = 0; r < result.repeats.size(); ++r) {
      const BenchmarkRepeat& x = result.repeats[r];
      const double row[] = {static_cast<double>(r), x.dense, x.dense_knn, x.nona, x.nona_knn, x.linear_regression, x.raw_knn};
      csv.row(row);
    }
  }
  out << name << ": dense " << format_mean_std(result.dense) << ", dense_knn " << format_mean_std(result.dense_knn)
      << ", nona " << format_mean_std(result.nona) << ", nona_knn " << format_mean_std(result.nona_knn) << "\n";
  out << "wrote " << dir.string() << "\n";
  return kExitOk;
}

int cmd_theory_check(const std::string& checkpoint, const fs::path& out_dir, std::uint64_t seed, std::ostream& out) {
  const std::vector<SuiteReport> reports{run_decomposition_suite(derive_seed(seed, 11)),
                                         run_triplet_suite(derive_seed(seed, 12)),
                                         run_simplex_suite(derive_seed(seed, 13))};
  bool ok = true;
  {
    auto f = open_output(out_dir / "theory_summary.csv");
    std::vector<std::string> meta{"format_version=" + std::to_string(kFormatVersion), "seed=" + std::to_string(seed)};
    for (const SuiteReport& r : reports) {
      for (const auto& [branch, count] : r.coverage) meta.push_back(r.name + "." + branch + "=" + std::to_string(count));
    }
    CsvWriter csv(f, {"suite", "instances", "failures", "worst", "tolerance", "passed"}, meta);
    for (const SuiteReport& r : reports) {
      csv.row(std::vector<std::string>{r.name, std::to_string(r.instances), std::to_string(r.failures), format_double(r.worst),
                                       format_double(r.tolerance), r.passed() ? "1" : "0"});
      out << (r.passed() ? "PASS " : "FAIL ") << r.name << ": " << r.failures << "/" << r.instances
          << " failures, worst " << format_double(r.worst) << " (tolerance " << format_double(r.tolerance) << ")\n";
      ok = ok && r.passed();
    }
  }
  if (!checkpoint.empty()) {
    const LoadedCheckpoint ckpt = load_checkpoint(checkpoint);
    if (ckpt.config.model.head != HeadKind::Nona ||
        ckpt.config.model.softstep.family == SoftStepFamily::None) {
      out << "audit skipped: the checkpoint has no SoftStep-masked NONA head\n";
    } else {
      const SplitData data = prepare_data(ckpt.config, derive_seed(ckpt.config.seed, streams::kSplit));
      const TripletAudit audit = empirical_triplet_audit(ckpt.model.nona(), ckpt.model.embed(data.train.X), data.train.y,
                                                         200, derive_seed(seed, streams::kAudit));
      auto f = open_output(out_dir / "triplet_audit.csv");
      write_audit_csv(f, audit, provenance(ckpt.config));
      out << "audit: " << audit.rows.size() << " anchors, " << audit.excluded << " excluded, median |deviation| "
          << format_double(audit.median_abs_deviation) << "\n";
    }
  }
  return ok ? kExitOk : kExitValidationFailure;
}

int cmd_knn(const fs::path& train_path, const fs::path& val_path, const std::string& query_path,
            const std::string& predictions_path, std::ostream& out) {
  const Dataset train = read_labeled_csv(train_path);
  const Dataset val = read_labeled_csv(val_path);
  if (train.X.cols() != val.X.cols()) throw ConfigError("training and validation CSVs have different widths");
  const KnnSearchResult search = knn_grid_search(train.X, train.y, val.X, val.y);
  out << "best " << to_string(search.best) << " val_mse " << format_double(search.val_mse) << "\n";
  if (!query_path.empty()) {
    if (predictions_path.empty()) throw ConfigError("--query needs --predictions");
    std::ifstream in(query_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + query_path);
    const CsvTable table = read_csv(in);
    const std::size_t d = train.X.cols();
    // A query file may carry a trailing label column, which is ignored.
    if (table.header.size() != d && table.header.size() != d + 1) {
      throw ConfigError("query CSV must have " + std::to_string(d) + " feature columns");
    }
    Tensor Q(Shape{table.rows.size(), d});
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) Q(i, k) = table.rows[i][k];
    }
    const Tensor pred = knn_fit_predict(search.best, train.X, train.y, Q);
    auto f = open_output(predictions_path);
    CsvWriter csv(f, {"prediction"}, {"format_version=" + std::to_string(kFormatVersion), "knn=" + to_string(search.best)});
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double row[] = {pred[i]};
      csv.row(row);
    }
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"NONA regression: training, baselines, ablations and theory checks"};
  app.require_subcommand(1);

  std::string config_path, out_path, checkpoint, predictor = "model", train_csv, val_csv, query_csv, predictions_csv;
  std::optional<std::uint64_t> seed;
  std::uint64_t theory_seed = 0;
  std::size_t resolution = 100, repeats = 10, jobs = 1, seeds = 3;
  std::vector<std::string> axes;
  bool with_knn = false;

  auto* train = app.add_subcommand("train", "Train one model and write checkpoint, trace and metrics");
  train->add_option("--config", config_path, "JSON config file")->required();
  train->add_option("--seed", seed, "Override the config seed");
  train->add_option("--out", out_path, "Output directory (default: config output_dir)");
  train->add_flag("--with-knn", with_knn, "Also grid-search k-NN on the final embeddings");

  auto* surface = app.add_subcommand("surface", "Export predictions on a uniform grid over [-1, 1]^2");
  surface->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  surface->add_option("--resolution", resolution, "Grid points per axis");
  surface->add_option("--predictor", predictor, "model, knn, lr or raw-knn");
  surface->add_option("--out", out_path, "Output CSV")->required();

  auto* ablate = app.add_subcommand("ablate", "Serialized ablation of a NONA model");
  ablate->add_option("--config", config_path, "JSON config file")->required();
  ablate->add_option("--axes", axes, "similarity, softstep, batch_size, embedding_dim")->delimiter(',');
  ablate->add_option("--seeds", seeds, "Runs per cell");
  ablate->add_option("--jobs", jobs, "Concurrent runs");
  ablate->add_option("--seed", seed, "Override the config seed");
  ablate->add_option("--out", out_path, "Output directory (default: config output_dir)");

  auto* bench = app.add_subcommand("benchmark", "Repeated dense vs NONA comparison with k-NN and linear baselines");
  bench->add_option("--config", config_path, "JSON config file")->required();
  bench->add_option("--repeats", repeats, "Number of reseeded repeats");
  bench->add_option("--jobs", jobs, "Concurrent repeats");
  bench->add_option("--seed", seed, "Override the config seed");
  bench->add_option("--out", out_path, "Output directory (default: config output_dir)");

  auto* theory = app.add_subcommand("theory-check", "Run the optimality oracle suites");
  theory->add_option("--checkpoint", checkpoint, "Optional NONA checkpoint to audit");
  theory->add_option("--seed", theory_seed, "Seed of the random instances");
  theory->add_option("--out", out_path, "Output directory")->required();

  auto* knn = app.add_subcommand("knn", "Grid-search k-NN on embedding CSVs (feature columns, then label)");
  knn->add_option("--train", train_csv, "Training CSV")->required();
  knn->add_option("--val", val_csv, "Validation CSV")->required();
  knn->add_option("--query", query_csv, "Query CSV to predict");
  knn->add_option("--predictions", predictions_csv, "Output CSV for query predictions");

  try {
    std::vector<std::string> rest(args.rbegin(), args.rend());
    if (!rest.empty()) rest.pop_back();  // program name
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(config_path, seed, out_path, with_knn, out);
    if (*surface) return cmd_surface(checkpoint, resolution, predictor, out_path, out);
    if (*ablate) return cmd_ablate(config_path, axes, seeds, jobs, seed, out_path, out);
    if (*bench) return cmd_benchmark(config_path, repeats, jobs, seed, out_path, out);
    if (*theory) return cmd_theory_check(checkpoint, out_path, theory_seed, out);
    if (*knn) return cmd_knn(train_csv, val_csv, query_csv, predictions_csv, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidationFailure;
  }
  return kExitUsage;
}

}  // namespace nona
