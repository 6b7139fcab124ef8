#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "nona/errors.hpp"
#include "nona/training.hpp"
#include "test_util.hpp"

using namespace nona;
using nona::testing::random_tensor;

namespace {

ModelConfig small_model(HeadKind head, SoftStepFamily family = SoftStepFamily::S2) {
  ModelConfig m;
  m.head = head;
  m.mlp = {2, 16, 4, 1};
  m.softstep.family = family;
  return m;
}

ExperimentConfig small_experiment(Target target, HeadKind head) {
  ExperimentConfig c;
  c.dataset = {target, 300, 0.05, 0};
  c.model = small_model(head);
  c.train.max_epochs = 30;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Mse, ReferenceValues) {
  EXPECT_EQ(mse(Tensor::vector({1, 2}), Tensor::vector({1, 2})), 0.0);
  EXPECT_EQ(mse(Tensor::vector({0, 0}), Tensor::vector({1, -1})), 1.0);
  EXPECT_DOUBLE_EQ(mse(Tensor::vector({3, 0}), Tensor::vector({0, 1})), 5.0);
  EXPECT_THROW(mse(Tensor(Shape{0}), Tensor(Shape{0})), ContractError);
  EXPECT_THROW(mse(Tensor::vector({1}), Tensor::vector({1, 2})), ContractError);
  Tape tape;
  EXPECT_DOUBLE_EQ(mse_loss(tape.constant(Tensor::vector({3, 0})), tape.constant(Tensor::vector({0, 1}))).value().item(),
                   5.0);
}

TEST(MakeBatches, CoversEveryIndexOnce) {
  Rng rng(70);
  const auto batches = make_batches(70, 32, rng);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 32u);
  EXPECT_EQ(batches[2].size(), 6u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 70u);
}

TEST(MakeBatches, SingletonTailIsMerged) {
  Rng rng(71);
  const auto batches = make_batches(65, 32, rng);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[1].size(), 33u);
  Rng one(72);
  EXPECT_EQ(make_batches(1, 32, one).size(), 1u);
  EXPECT_THROW(make_batches(5, 0, one), ContractError);
}

TEST(Optimizers, SgdAndAdamFirstStep) {
  Parameter p("p", Tensor::vector({1.0, -2.0}));
  GradientMap g{{&p, Tensor::vector({0.5, -4.0})}};
  Sgd sgd(0.1);
  sgd.step({&p}, g);
  EXPECT_DOUBLE_EQ(p.value[0], 0.95);
  EXPECT_DOUBLE_EQ(p.value[1], -1.6);
  // Adam's bias-corrected first step moves each coordinate by about lr * sign(g).
  Parameter q("q", Tensor::vector({1.0, -2.0}));
  Adam adam(0.01, {});
  adam.step({&q}, GradientMap{{&q, Tensor::vector({0.5, -4.0})}});
  EXPECT_NEAR(q.value[0], 0.99, 1e-9);
  EXPECT_NEAR(q.value[1], -1.99, 1e-9);
}

TEST(Optimizers, OnlyParametersWithGradientsMove) {
  Parameter a("a", Tensor::vector({1.0})), b("b", Tensor::vector({2.0}));
  Adam adam(0.1, {});
  adam.step({&a, &b}, GradientMap{{&a, Tensor::vector({1.0})}, {&b, Tensor::vector({0.0})}});
  EXPECT_NE(a.value[0], 1.0);
  EXPECT_EQ(b.value[0], 2.0);
}

TEST(Model, NonaHeadFitsConstantLabelsImmediately) {
  Rng rng(73);
  SplitData data;
  for (Dataset* d : {&data.train, &data.val, &data.test}) {
    d->X = random_tensor({40, 2}, rng, -1, 1);
    d->y = Tensor(Shape{40}, 0.3);
  }
  Model model(small_model(HeadKind::Nona), 1);
  TrainConfig tc;
  tc.max_epochs = 50;
  tc.patience = 3;
  const RunResult r = train_model(model, data, tc);
  EXPECT_LE(r.best_val_mse, 1e-4);
  EXPECT_LE(r.test_mse, 1e-4);
}

TEST(Model, DenseHeadLearnsLinearTarget) {
  const TrainingOutcome out = run_training(small_experiment(Target::Linear, HeadKind::Dense));
  EXPECT_LE(out.result.test_mse, 0.01);
}

TEST(Model, EarlyStoppingHonoursPatience) {
  ExperimentConfig c = small_experiment(Target::Radial, HeadKind::Nona);
  c.train.patience = 2;
  c.train.max_epochs = 200;
  const RunResult r = run_training(c).result;
  ASSERT_LT(r.trace.size(), 200u);
  EXPECT_EQ(r.trace.size(), r.best_epoch + 2);
  const auto best = std::min_element(r.trace.begin(), r.trace.end(),
                                     [](const EpochRecord& a, const EpochRecord& b) { return a.val_mse < b.val_mse; });
  EXPECT_EQ(best->epoch, r.best_epoch);
  EXPECT_EQ(best->val_mse, r.best_val_mse);
}

TEST(Model, RestoredParametersReproduceBestValidation) {
  ExperimentConfig c = small_experiment(Target::Spiral, HeadKind::Nona);
  c.train.patience = 3;
  TrainingOutcome out = run_training(c);
  EXPECT_EQ(evaluate(out.model, out.data.val), out.result.best_val_mse);
  EXPECT_EQ(evaluate(out.model, out.data.test), out.result.test_mse);
}

TEST(Model, RunsAreDeterministic) {
  const ExperimentConfig c = small_experiment(Target::Radial, HeadKind::Nona);
  const RunResult a = run_training(c).result;
  const RunResult b = run_training(c).result;
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) EXPECT_EQ(a.trace[i].val_mse, b.trace[i].val_mse);
  EXPECT_EQ(a.test_mse, b.test_mse);
  EXPECT_NE(run_training(c, repeat_seed(c.seed, 1), false).result.test_mse, a.test_mse);
}

TEST(Model, SnapshotRestoreRoundTrip) {
  Model m(small_model(HeadKind::Nona, SoftStepFamily::S1), 3);
  const auto snap = m.snapshot();
  for (Parameter* p : m.parameters()) p->value = Tensor(p->value.shape(), 9.0);
  m.restore(snap);
  const auto again = m.snapshot();
  ASSERT_EQ(snap.size(), again.size());
  for (std::size_t i = 0; i < snap.size(); ++i) EXPECT_EQ(snap[i], again[i]);
}

TEST(Model, KnnStageUsesFrozenEmbeddings) {
  const TrainingOutcome out = run_training(small_experiment(Target::Radial, HeadKind::Dense), true);
  ASSERT_TRUE(out.knn.has_value());
  const KnnStage again = knn_on_embeddings(out.model, out.data);
  EXPECT_EQ(again.config, out.knn->config);
  EXPECT_EQ(again.test_mse, out.knn->test_mse);
}

TEST(Summary, MeanAndSampleStd) {
  const MeanStd one = summarize({0.5});
  EXPECT_EQ(one.mean, 0.5);
  EXPECT_EQ(one.std, 0.0);
  const MeanStd m = summarize({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.std, std::sqrt(5.0 / 3.0));
  EXPECT_THROW(summarize({}), ContractError);
  EXPECT_NE(format_mean_std(m).find("\xC2\xB1"), std::string::npos);
}

TEST(Config, ValidationRejectsBadValues) {
  TrainConfig t;
  t.batch_size = 1;
  EXPECT_THROW(validate(t, HeadKind::Nona), ConfigError);
  t = {};
  t.learning_rate = -1;
  EXPECT_THROW(validate(t, HeadKind::Dense), ConfigError);
  ModelConfig m;
  m.mlp.embedding_dim = 0;
  EXPECT_THROW(validate(m), ConfigError);
  EXPECT_THROW(parse_head_kind("mlp"), ConfigError);
  EXPECT_THROW(parse_ablation_axis("depth"), ConfigError);
  EXPECT_EQ(parse_ablation_axis("dim"), AblationAxis::EmbeddingDim);
}
