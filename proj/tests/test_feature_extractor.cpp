#include <gtest/gtest.h>

#include <cmath>

#include "nona/errors.hpp"
#include "nona/feature_extractor.hpp"
#include "test_util.hpp"

using namespace nona;
using nona::testing::finite_difference;
using nona::testing::max_relative_error;
using nona::testing::random_tensor;

namespace {

DenseLayer layer(Tensor w, Tensor b, Activation act) {
  return DenseLayer{Parameter("w", std::move(w)), Parameter("b", std::move(b)), act};
}

}  // namespace

TEST(Mlp, ZeroWeightsGiveZeroEmbeddings) {
  Rng rng(50);
  Mlp mlp({2, 8, 4, 2}, rng);
  for (Parameter* p : mlp.parameters()) p->value = Tensor(p->value.shape());
  const Tensor Z = mlp.embed(random_tensor({5, 2}, rng));
  EXPECT_EQ(Z, Tensor(Shape{5, 4}));
}

TEST(Mlp, IdentityLayerPassesInputThrough) {
  std::vector<DenseLayer> layers;
  layers.push_back(layer(Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0}), Activation::Identity));
  const Mlp mlp(std::move(layers));
  const Tensor X = Tensor::matrix({{0.5, -2}, {3, 4}});
  EXPECT_EQ(mlp.embed(X), X);
}

TEST(Mlp, ReluClipsNegativeHiddenUnits) {
  std::vector<DenseLayer> layers;
  layers.push_back(layer(Tensor::matrix({{1}, {-1}}), Tensor::vector({0, 0}), Activation::ReLU));
  layers.push_back(layer(Tensor::matrix({{1, 1}}), Tensor::vector({0.5}), Activation::Identity));
  const Mlp mlp(std::move(layers));
  // |x| + 0.5
  EXPECT_EQ(mlp.embed(Tensor::matrix({{-3}, {2}})), Tensor::matrix({{3.5}, {2.5}}));
}

TEST(Mlp, ParameterCounts) {
  EXPECT_EQ(Mlp::parameter_count(MlpConfig{}), 45825u);
  Rng rng(51);
  const Mlp mlp(MlpConfig{}, rng);
  EXPECT_EQ(mlp.parameter_count(), 45825u);
  EXPECT_EQ(mlp.input_dim(), 2u);
  EXPECT_EQ(mlp.embedding_dim(), 25u);
  EXPECT_EQ(Mlp::parameter_count({2, 10, 3, 0}), 9u);
}

TEST(Mlp, InitialWeightsRespectFanInBound) {
  Rng rng(52);
  Mlp mlp({2, 16, 4, 1}, rng);
  for (const DenseLayer& l : mlp.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l.weight.value.cols()));
    for (double v : l.weight.value.data()) EXPECT_LE(std::abs(v), bound);
    for (double v : l.bias.value.data()) EXPECT_LE(std::abs(v), bound);
  }
}

TEST(Mlp, InvalidLayersRejected) {
  std::vector<DenseLayer> bad;
  bad.push_back(layer(Tensor::matrix({{1, 0}}), Tensor::vector({0}), Activation::Identity));
  bad.push_back(layer(Tensor::matrix({{1, 0}}), Tensor::vector({0}), Activation::Identity));
  EXPECT_THROW(Mlp(std::move(bad)), DimensionError);
  std::vector<DenseLayer> relu_last;
  relu_last.push_back(layer(Tensor::matrix({{1}}), Tensor::vector({0}), Activation::ReLU));
  EXPECT_THROW(Mlp(std::move(relu_last)), ContractError);
  EXPECT_THROW(Mlp(std::vector<DenseLayer>{}), ContractError);
}

TEST(Mlp, ParameterGradientsMatchFiniteDifferences) {
  Rng rng(53);
  Mlp mlp({2, 5, 3, 2}, rng);
  const Tensor X = random_tensor({4, 2}, rng);
  const Tensor W = random_tensor({4, 3}, rng);
  const auto loss = [&](Tape& t) { return sum(mlp.embed(t.constant(X)) * t.constant(W)); };
  Tape tape;
  const GradientMap grads = tape.backward(loss(tape));
  for (Parameter* p : mlp.parameters()) {
    const Tensor saved = p->value;
    const Tensor numeric = finite_difference(
        [&](const Tensor& v) {
          p->value = v;
          Tape t(false);
          const double out = loss(t).value().item();
          p->value = saved;
          return out;
        },
        saved);
    EXPECT_LE(max_relative_error(grads.at(p), numeric), 1e-4) << p->name;
  }
}

TEST(DenseHead, ReferencePredictions) {
  const DenseHead head(Tensor::vector({2, -1}), 0.5);
  EXPECT_EQ(head.predict(Tensor::matrix({{1, 1}, {0, 3}})), Tensor::vector({1.5, -2.5}));
  EXPECT_THROW(DenseHead(Tensor::matrix({{1, 2}, {3, 4}}), 0.0), DimensionError);
}

TEST(DenseHead, GradientDescentRecoversLine) {
  Rng rng(54);
  DenseHead head(1, rng);
  const Tensor X = random_tensor({64, 1}, rng, -1, 1);
  Tensor y(Shape{64});
  for (std::size_t i = 0; i < 64; ++i) y[i] = 2.0 * X(i, 0) + 1.0;
  for (int step = 0; step < 2000; ++step) {
    Tape tape;
    const Var d = head.predict(tape.constant(X)) - tape.constant(y);
    const GradientMap grads = tape.backward(mean(d * d));
    for (Parameter* p : head.parameters()) {
      const Tensor& g = grads.at(p);
      for (std::size_t k = 0; k < g.size(); ++k) p->value[k] -= 0.1 * g[k];
    }
  }
  EXPECT_NEAR(head.weight().value[0], 2.0, 1e-2);
  EXPECT_NEAR(head.bias().value[0], 1.0, 1e-2);
}
