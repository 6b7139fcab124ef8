#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nona/autodiff.hpp"
#include "nona/baselines.hpp"
#include "nona/feature_extractor.hpp"
#include "nona/nona_head.hpp"
#include "nona/synthetic_data.hpp"

namespace nona {

enum class HeadKind { Dense, Nona };
enum class OptimizerKind { Adam, SGD };

std::string to_string(HeadKind kind);
std::string to_string(OptimizerKind kind);
HeadKind parse_head_kind(std::string_view name);
OptimizerKind parse_optimizer(std::string_view name);

struct ModelConfig {
  HeadKind head = HeadKind::Nona;
  MlpConfig mlp;
  SimilarityKind similarity = SimilarityKind::NegL2;
  SoftStepConfig softstep;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::size_t max_epochs = 300;
  std::size_t patience = 10;
  OptimizerKind optimizer = OptimizerKind::Adam;
  AdamConfig adam;
  // A validation MSE counts as an improvement only when it beats the best
  // so far by at least this much.
  double min_improvement = 1e-9;
  // Seeds the batch order.
  std::uint64_t seed = 0;
};

void validate(const ModelConfig& config);
void validate(const TrainConfig& config, HeadKind head);

// Feature extractor plus one regression head.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  const Mlp& mlp() const { return mlp_; }
  const DenseHead& dense() const { return dense_; }
  const NonaHead& nona() const { return nona_; }
  NonaHead& nona() { return nona_; }

  // Differentiable batch prediction on `tape`. A NONA head uses the batch as
  // its own neighbor set.
  Var forward_train(Tape& tape, const Tensor& X, const Tensor& y) const;

  Tensor embed(const Tensor& X) const;
  // Inference; a NONA head attends to its neighbor bank.
  Tensor predict(const Tensor& X) const;
  // Embeds `data` with the current extractor and stores it as the NONA
  // neighbor bank. No-op for a dense head.
  void refresh_bank(const Dataset& data);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  ModelConfig config_;
  Mlp mlp_;
  DenseHead dense_;
  NonaHead nona_;
};

Var mse_loss(Var prediction, Var target);
double mse(const Tensor& prediction, const Tensor& target);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Updates each parameter in place from its entry in `grads`; parameters
  // must be passed in the same order on every call.
  virtual void step(const std::vector<Parameter*>& params, const GradientMap& grads) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double learning_rate) : lr_(learning_rate) {}
  void step(const std::vector<Parameter*>& params, const GradientMap& grads) override;

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  Adam(double learning_rate, AdamConfig config) : lr_(learning_rate), config_(config) {}
  void step(const std::vector<Parameter*>& params, const GradientMap& grads) override;

 private:
  double lr_;
  AdamConfig config_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

std::unique_ptr<Optimizer> make_optimizer(const TrainConfig& config);

// Seeded permutation of 0..n-1 cut into batches of batch_size. A trailing
// batch of a single point is merged into the one before it.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
};

struct RunResult {
  std::vector<EpochRecord> trace;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  double test_mse = 0.0;
  double wall_seconds = 0.0;
};

// MSE of the model's inference predictions on `data`.
double evaluate(const Model& model, const Dataset& data);

// Trains until `patience` epochs pass without improvement or max_epochs is
// reached, restores the best-validation parameters, resets the neighbor
// bank to the training split and scores the test split once.
RunResult train_model(Model& model, const SplitData& data, const TrainConfig& config);

struct KnnStage {
  KnnConfig config;
  double val_mse = 0.0;
  double test_mse = 0.0;
};

// Grid-searched k-NN on the model's frozen embeddings (two-stage fit).
KnnStage knn_on_embeddings(const Model& model, const SplitData& data);
// Grid-searched k-NN on the raw inputs.
KnnStage knn_on_inputs(const SplitData& data);
// Closed-form linear regression on the raw inputs; returns test MSE.
double linear_regression_test_mse(const SplitData& data);

struct ExperimentConfig {
  SyntheticSpec dataset;  // dataset.seed is ignored; it derives from `seed`
  ModelConfig model;
  TrainConfig train;      // train.seed is ignored; it derives from `seed`
  std::uint64_t seed = 0;
  std::string output_dir = "runs";
};

void validate(const ExperimentConfig& config);

// Dataset drawn from the experiment seed; the split from `split_seed`.
SplitData prepare_data(const ExperimentConfig& config, std::uint64_t split_seed);

struct TrainingOutcome {
  Model model;
  RunResult result;
  SplitData data;
  std::optional<KnnStage> knn;
};

// Full single run: data, split, init and batch order all derive from
// `run_seed` except the dataset, which derives from config.seed.
TrainingOutcome run_training(const ExperimentConfig& config, std::uint64_t run_seed, bool with_knn);
inline TrainingOutcome run_training(const ExperimentConfig& config, bool with_knn = false) {
  return run_training(config, config.seed, with_knn);
}

// Seed of repeat r of an experiment.
std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
};

MeanStd summarize(const std::vector<double>& values);
std::string format_mean_std(const MeanStd& m);

struct BenchmarkRepeat {
  double dense = 0.0;
  double dense_knn = 0.0;
  double nona = 0.0;
  double nona_knn = 0.0;
  double linear_regression = 0.0;
  double raw_knn = 0.0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRepeat> repeats;
  MeanStd dense, dense_knn, nona, nona_knn, linear_regression, raw_knn;
};

// Per repeat: reseeded split and initialization; one dense-head and one
// NONA-head model (the NONA head as configured), each followed by a k-NN fit
// on its embeddings, plus the raw-input baselines. `jobs` repeats run
// concurrently; results do not depend on it.
BenchmarkResult run_benchmark(const ExperimentConfig& config, std::size_t repeats, std::size_t jobs = 1);

enum class AblationAxis { Similarity, SoftStep, BatchSize, EmbeddingDim };

std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(std::string_view name);

struct AblationCell {
  std::string label;
  ModelConfig model;
  TrainConfig train;
  std::vector<double> val_mse;   // one per seed
  std::vector<double> test_mse;  // one per seed
  MeanStd val;
  MeanStd test;
};

struct AblationStage {
  AblationAxis axis;
  std::vector<AblationCell> cells;
  std::size_t winner = 0;
};

struct AblationResult {
  std::vector<AblationStage> stages;
  ModelConfig final_model;
  TrainConfig final_train;
};

// Serialized ablation of a NONA model. Starts from the configured model with
// SoftStep disabled, batch size 128 and embedding dimension 50, then runs the
// requested axes in the fixed order similarity, softstep, batch size,
// embedding dimension. Each cell averages `seeds` reseeded runs; the cell
// with the lowest mean validation MSE is carried into the next stage (ties
// keep the earlier cell).
AblationResult run_ablation(const ExperimentConfig& config, const std::vector<AblationAxis>& axes,
                            std::size_t seeds = 3, std::size_t jobs = 1);

}  // namespace nona
