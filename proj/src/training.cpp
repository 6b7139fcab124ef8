#include "nona/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include "nona/csv.hpp"
#include "nona/errors.hpp"

namespace nona {

namespace {

// Inference on large query sets is chunked to bound the attention matrix.
constexpr std::size_t kPredictChunk = 1024;

// Runs task(i) for i in [0, n) on up to `jobs` threads. The first exception
// is rethrown after all workers finish.
template <class Task>
void parallel_for(std::size_t n, std::size_t jobs, Task task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::string to_string(HeadKind kind) { return kind == HeadKind::Dense ? "dense" : "nona"; }
std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "sgd"; }

HeadKind parse_head_kind(std::string_view name) {
  if (name == "dense") return HeadKind::Dense;
  if (name == "nona") return HeadKind::Nona;
  throw ConfigError("unknown head '" + std::string(name) + "' (expected dense or nona)");
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adam or sgd)");
}

void validate(const ModelConfig& config) {
  if (config.mlp.input_dim == 0 || config.mlp.embedding_dim == 0) throw ConfigError("model dimensions must be positive");
  if (config.mlp.depth > 0 && config.mlp.hidden_dim == 0) throw ConfigError("model.hidden_dim must be positive");
  if (!(config.softstep.epsilon > 0.0)) throw ConfigError("softstep.epsilon must be positive");
  if (!(config.softstep.t_clamp > 0.0 && config.softstep.t_clamp < 0.5)) {
    throw ConfigError("softstep.t_clamp must lie in (0, 0.5)");
  }
}

void validate(const TrainConfig& config, HeadKind head) {
  if (config.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  if (head == HeadKind::Nona && config.batch_size < 2) throw ConfigError("train.batch_size must be at least 2 for a NONA head");
  if (!(config.learning_rate > 0.0) || !std::isfinite(config.learning_rate)) {
    throw ConfigError("train.learning_rate must be positive");
  }
  if (config.max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
  if (config.patience == 0) throw ConfigError("train.patience must be at least 1");
  if (!(config.min_improvement >= 0.0)) throw ConfigError("train.min_improvement must be non-negative");
  const AdamConfig& a = config.adam;
  if (!(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0)) {
    throw ConfigError("train.adam betas must lie in [0, 1)");
  }
  if (!(a.epsilon > 0.0)) throw ConfigError("train.adam.epsilon must be positive");
}

Model::Model(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  validate(config);
  Rng rng(init_seed);
  mlp_ = Mlp(config.mlp, rng);
  if (config.head == HeadKind::Dense) {
    dense_ = DenseHead(config.mlp.embedding_dim, rng);
  } else {
    nona_ = NonaHead(config.similarity, config.softstep, config.mlp.embedding_dim);
  }
}

Var Model::forward_train(Tape& tape, const Tensor& X, const Tensor& y) const {
  const Var Z = mlp_.embed(tape.constant(X));
  if (config_.head == HeadKind::Dense) return dense_.predict(Z);
  return nona_.forward_train(Z, tape.constant(y)).prediction;
}

Tensor Model::embed(const Tensor& X) const { return mlp_.embed(X); }

Tensor Model::predict(const Tensor& X) const {
  if (X.rank() != 2) throw DimensionError("model input must be a matrix");
  const std::size_t n = X.rows();
  Tensor out(Shape{n});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t stop = std::min(n, start + kPredictChunk);
    idx.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
    const Tensor Z = mlp_.embed(start == 0 && stop == n ? X : X.gather_rows(idx));
    const Tensor pred = config_.head == HeadKind::Dense ? dense_.predict(Z) : nona_.predict(Z);
    std::copy(pred.data().begin(), pred.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

void Model::refresh_bank(const Dataset& data) {
  if (config_.head != HeadKind::Nona) return;
  nona_.set_neighbor_bank(mlp_.embed(data.X), data.y);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = mlp_.parameters();
  const auto head = config_.head == HeadKind::Dense ? dense_.parameters() : nona_.parameters();
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

std::vector<Tensor> Model::snapshot() const {
  std::vector<Tensor> out;
  for (const Parameter* p : parameters()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<Tensor>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw ContractError("snapshot does not match the model's parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!values[i].same_shape(params[i]->value)) {
      throw DimensionError("snapshot shape mismatch for parameter " + params[i]->name);
    }
    params[i]->value = values[i];
  }
}

Var mse_loss(Var prediction, Var target) {
  const Tensor& p = prediction.value();
  const Tensor& y = target.value();
  if (p.size() == 0) throw ContractError("MSE of an empty batch");
  if (p.shape() != y.shape()) {
    throw ContractError("MSE operands differ in shape: " + shape_string(p.shape()) + " vs " + shape_string(y.shape()));
  }
  const Var r = prediction - target;
  return mean(r * r);
}

double mse(const Tensor& prediction, const Tensor& target) {
  if (prediction.size() == 0) throw ContractError("MSE of an empty set");
  if (prediction.size() != target.size()) throw ContractError("MSE operands differ in length");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double r = prediction[i] - target[i];
    s += r * r;
  }
  return s / static_cast<double>(target.size());
}

namespace {

const Tensor& gradient_for(const GradientMap& grads, const Parameter* p) {
  const auto it = grads.find(p);
  if (it == grads.end()) throw ContractError("no gradient for parameter " + p->name);
  return it->second;
}

}  // namespace

void Sgd::step(const std::vector<Parameter*>& params, const GradientMap& grads) {
  for (Parameter* p : params) {
    const Tensor& g = gradient_for(grads, p);
    auto w = p->value.data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr_ * g[i];
  }
}

void Adam::step(const std::vector<Parameter*>& params, const GradientMap& grads) {
  if (m_.empty()) {
    for (Parameter* p : params) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam parameter list changed between steps");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor& g = gradient_for(grads, params[k]);
    auto w = params[k]->value.data();
    auto m = m_[k].data();
    auto v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config) {
  if (config.optimizer == OptimizerKind::SGD) return std::make_unique<Sgd>(config.learning_rate);
  return std::make_unique<Adam>(config.learning_rate, config.adam);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw ContractError("batch size must be positive");
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start), perm.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

double evaluate(const Model& model, const Dataset& data) { return mse(model.predict(data.X), data.y); }

RunResult train_model(Model& model, const SplitData& data, const TrainConfig& config) {
  validate(config, model.config().head);
  if (model.config().head == HeadKind::Nona && data.train.size() < 2) {
    throw ContractError("NONA training needs at least 2 training points");
  }
  const auto started = std::chrono::steady_clock::now();
  Rng batch_rng(config.seed);
  auto optimizer = make_optimizer(config);
  auto params = model.parameters();

  RunResult result;
  result.best_val_mse = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best = model.snapshot();

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (const auto& batch : make_batches(data.train.size(), config.batch_size, batch_rng)) {
      const Dataset b = data.train.subset(batch);
      Tape tape;
      const Var loss = mse_loss(model.forward_train(tape, b.X, b.y), tape.constant(b.y));
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw DivergenceError(epoch, "training loss became non-finite");
      const GradientMap grads = tape.backward(loss);
      optimizer->step(params, grads);
      loss_sum += value * static_cast<double>(batch.size());
    }

    model.refresh_bank(data.train);
    const double val = evaluate(model, data.val);
    if (!std::isfinite(val)) throw DivergenceError(epoch, "validation loss became non-finite");
    result.trace.push_back({epoch, loss_sum / static_cast<double>(data.train.size()), val});

    if (val <= result.best_val_mse - config.min_improvement) {
      result.best_val_mse = val;
      result.best_epoch = epoch;
      best = model.snapshot();
    } else if (epoch - result.best_epoch >= config.patience) {
      break;
    }
  }

  model.restore(best);
  model.refresh_bank(data.train);
  result.test_mse = evaluate(model, data.test);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

KnnStage knn_on_embeddings(const Model& model, const SplitData& data) {
  const Tensor Z_train = model.embed(data.train.X);
  const Tensor Z_val = model.embed(data.val.X);
  const auto search = knn_grid_search(Z_train, data.train.y, Z_val, data.val.y);
  const Tensor pred = knn_fit_predict(search.best, Z_train, data.train.y, model.embed(data.test.X));
  return KnnStage{search.best, search.val_mse, mse(pred, data.test.y)};
}

KnnStage knn_on_inputs(const SplitData& data) {
  const auto search = knn_grid_search(data.train.X, data.train.y, data.val.X, data.val.y);
  const Tensor pred = knn_fit_predict(search.best, data.train.X, data.train.y, data.test.X);
  return KnnStage{search.best, search.val_mse, mse(pred, data.test.y)};
}

double linear_regression_test_mse(const SplitData& data) {
  const LinearModel lr = linear_regression_fit(data.train.X, data.train.y);
  return mse(lr.predict(data.test.X), data.test.y);
}

void validate(const ExperimentConfig& config) {
  if (config.dataset.n_points < 10) throw ConfigError("dataset.n_points must be at least 10");
  if (!(config.dataset.noise_std >= 0.0)) throw ConfigError("dataset.noise_std must be non-negative");
  validate(config.model);
  validate(config.train, config.model.head);
}

SplitData prepare_data(const ExperimentConfig& config, std::uint64_t split_seed) {
  SyntheticSpec spec = config.dataset;
  spec.seed = derive_seed(config.seed, streams::kData);
  const Dataset all = generate(spec);
  SplitPlan plan;
  plan.seed = split_seed;
  return apply_split(all, split(all.size(), plan));
}

TrainingOutcome run_training(const ExperimentConfig& config, std::uint64_t run_seed, bool with_knn) {
  validate(config);
  SplitData data = prepare_data(config, derive_seed(run_seed, streams::kSplit));
  Model model(config.model, derive_seed(run_seed, streams::kInit));
  TrainConfig train = config.train;
  train.seed = derive_seed(run_seed, streams::kBatch);
  RunResult result = train_model(model, data, train);
  std::optional<KnnStage> knn;
  if (with_knn) knn = knn_on_embeddings(model, data);
  return TrainingOutcome{std::move(model), std::move(result), std::move(data), knn};
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat) {
  return derive_seed(derive_seed(seed, streams::kRepeat), repeat);
}

MeanStd summarize(const std::vector<double>& values) {
  if (values.empty()) throw ContractError("cannot summarize an empty sample");
  double s = 0.0;
  for (double v : values) s += v;
  MeanStd out;
  out.mean = s / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

std::string format_mean_std(const MeanStd& m) { return format_double(m.mean) + "±" + format_double(m.std); }

BenchmarkResult run_benchmark(const ExperimentConfig& config, std::size_t repeats, std::size_t jobs) {
  if (repeats == 0) throw ConfigError("benchmark needs at least one repeat");
  ExperimentConfig nona_config = config;
  nona_config.model.head = HeadKind::Nona;
  ExperimentConfig dense_config = config;
  dense_config.model.head = HeadKind::Dense;
  validate(nona_config);
  validate(dense_config);

  BenchmarkResult out;
  out.repeats.resize(repeats);
  parallel_for(repeats, jobs, [&](std::size_t r) {
    const std::uint64_t seed = repeat_seed(config.seed, r);
    const TrainingOutcome dense = run_training(dense_config, seed, true);
    const TrainingOutcome nona = run_training(nona_config, seed, true);
    BenchmarkRepeat& rep = out.repeats[r];
    rep.dense = dense.result.test_mse;
    rep.dense_knn = dense.knn->test_mse;
    rep.nona = nona.result.test_mse;
    rep.nona_knn = nona.knn->test_mse;
    rep.linear_regression = linear_regression_test_mse(nona.data);
    rep.raw_knn = knn_on_inputs(nona.data).test_mse;
  });

  const auto column = [&](double BenchmarkRepeat::*field) {
    std::vector<double> v;
    for (const auto& rep : out.repeats) v.push_back(rep.*field);
    return summarize(v);
  };
  out.dense = column(&BenchmarkRepeat::dense);
  out.dense_knn = column(&BenchmarkRepeat::dense_knn);
  out.nona = column(&BenchmarkRepeat::nona);
  out.nona_knn = column(&BenchmarkRepeat::nona_knn);
  out.linear_regression = column(&BenchmarkRepeat::linear_regression);
  out.raw_knn = column(&BenchmarkRepeat::raw_knn);
  return out;
}

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::Similarity: return "similarity";
    case AblationAxis::SoftStep: return "softstep";
    case AblationAxis::BatchSize: return "batch_size";
    case AblationAxis::EmbeddingDim: return "embedding_dim";
  }
  return "unknown";
}

AblationAxis parse_ablation_axis(std::string_view name) {
  if (name == "similarity") return AblationAxis::Similarity;
  if (name == "softstep") return AblationAxis::SoftStep;
  if (name == "batch_size" || name == "batch") return AblationAxis::BatchSize;
  if (name == "embedding_dim" || name == "dim") return AblationAxis::EmbeddingDim;
  throw ConfigError("unknown ablation axis '" + std::string(name) +
                    "' (expected similarity, softstep, batch_size or embedding_dim)");
}

namespace {

std::vector<AblationCell> stage_cells(AblationAxis axis, const ModelConfig& model, const TrainConfig& train) {
  std::vector<AblationCell> cells;
  const auto add = [&](std::string label, ModelConfig m, TrainConfig t) {
    AblationCell c;
    c.label = std::move(label);
    c.model = m;
    c.train = t;
    cells.push_back(std::move(c));
  };
  switch (axis) {
    case AblationAxis::Similarity:
      for (SimilarityKind k : {SimilarityKind::NegL1, SimilarityKind::NegL2, SimilarityKind::Dot, SimilarityKind::Cosine}) {
        ModelConfig m = model;
        m.similarity = k;
        add(to_string(k), m, train);
      }
      break;
    case AblationAxis::SoftStep: {
      ModelConfig none = model;
      none.softstep.family = SoftStepFamily::None;
      add("none", none, train);
      for (SoftStepFamily f : {SoftStepFamily::S1, SoftStepFamily::S2}) {
        for (ParamMode p : {ParamMode::Global, ParamMode::Pointwise}) {
          ModelConfig m = model;
          m.softstep.family = f;
          m.softstep.param_mode = p;
          add(to_string(f) + "_" + to_string(p), m, train);
        }
      }
      break;
    }
    case AblationAxis::BatchSize:
      for (std::size_t b : {32, 64, 128, 256}) {
        TrainConfig t = train;
        t.batch_size = b;
        add(std::to_string(b), model, t);
      }
      break;
    case AblationAxis::EmbeddingDim:
      for (std::size_t d : {25, 50, 100}) {
        ModelConfig m = model;
        m.mlp.embedding_dim = d;
        add(std::to_string(d), m, train);
      }
      break;
  }
  return cells;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& config, const std::vector<AblationAxis>& axes, std::size_t seeds,
                            std::size_t jobs) {
  if (seeds == 0) throw ConfigError("ablation needs at least one seed per cell");
  if (axes.empty()) throw ConfigError("ablation needs at least one axis");
  AblationResult result;
  result.final_model = config.model;
  result.final_model.head = HeadKind::Nona;
  result.final_model.softstep.family = SoftStepFamily::None;
  result.final_model.mlp.embedding_dim = 50;
  result.final_train = config.train;
  result.final_train.batch_size = 128;

  for (AblationAxis axis : {AblationAxis::Similarity, AblationAxis::SoftStep, AblationAxis::BatchSize,
                            AblationAxis::EmbeddingDim}) {
    if (std::find(axes.begin(), axes.end(), axis) == axes.end()) continue;
    AblationStage stage{axis, stage_cells(axis, result.final_model, result.final_train), 0};
    const std::size_t n_cells = stage.cells.size();
    for (auto& cell : stage.cells) {
      cell.val_mse.assign(seeds, 0.0);
      cell.test_mse.assign(seeds, 0.0);
    }
    parallel_for(n_cells * seeds, jobs, [&](std::size_t task) {
      AblationCell& cell = stage.cells[task / seeds];
      const std::size_t s = task % seeds;
      ExperimentConfig run = config;
      run.model = cell.model;
      run.train = cell.train;
      const TrainingOutcome outcome = run_training(run, repeat_seed(config.seed, s), false);
      cell.val_mse[s] = outcome.result.best_val_mse;
      cell.test_mse[s] = outcome.result.test_mse;
    });
    for (std::size_t c = 0; c < n_cells; ++c) {
      AblationCell& cell = stage.cells[c];
      cell.val = summarize(cell.val_mse);
      cell.test = summarize(cell.test_mse);
      if (cell.val.mean < stage.cells[stage.winner].val.mean) stage.winner = c;
    }
    result.final_model = stage.cells[stage.winner].model;
    result.final_train = stage.cells[stage.winner].train;
    result.stages.push_back(std::move(stage));
  }
  return result;
}

}  // namespace nona
