#include <gtest/gtest.h>

#include <cmath>

#include "nona/errors.hpp"
#include "nona/similarity.hpp"
#include "test_util.hpp"

using namespace nona;
using nona::testing::finite_difference;
using nona::testing::max_relative_error;
using nona::testing::random_tensor;

namespace {

const SimilarityKind kAll[] = {SimilarityKind::NegL2, SimilarityKind::NegL1, SimilarityKind::Dot, SimilarityKind::Cosine};

double direct(SimilarityKind kind, std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0, l1 = 0, l2 = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
    l1 += std::abs(a[k] - b[k]);
    l2 += (a[k] - b[k]) * (a[k] - b[k]);
  }
  switch (kind) {
    case SimilarityKind::NegL2: return -std::sqrt(l2);
    case SimilarityKind::NegL1: return -l1;
    case SimilarityKind::Dot: return dot;
    case SimilarityKind::Cosine: return dot / std::sqrt(na * nb);
  }
  return 0;
}

}  // namespace

TEST(Similarity, ReferencePairs) {
  const Tensor z = Tensor::matrix({{0, 0}});
  const Tensor w = Tensor::matrix({{3, 4}});
  EXPECT_DOUBLE_EQ(pairwise_similarity(SimilarityKind::NegL2, z, w)(0, 0), -5.0);
  EXPECT_EQ(pairwise_similarity(SimilarityKind::NegL2, w, w)(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(pairwise_similarity(SimilarityKind::NegL1, z, w)(0, 0), -7.0);
  EXPECT_DOUBLE_EQ(pairwise_similarity(SimilarityKind::Cosine, Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 1}}))(0, 0), 0.0);
}

TEST(Similarity, MatchesDirectEvaluation) {
  Rng rng(2);
  const Tensor Z = random_tensor({5, 3}, rng);
  const Tensor N = random_tensor({7, 3}, rng);
  for (SimilarityKind kind : kAll) {
    const Tensor S = pairwise_similarity(kind, Z, N);
    ASSERT_EQ(S.shape(), (Shape{5, 7}));
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 7; ++j) EXPECT_NEAR(S(i, j), direct(kind, Z.row(i), N.row(j)), 1e-12) << to_string(kind);
    }
  }
}

TEST(Similarity, DistancesAreSymmetricNonPositive) {
  Rng rng(8);
  const Tensor Z = random_tensor({6, 4}, rng);
  for (SimilarityKind kind : {SimilarityKind::NegL2, SimilarityKind::NegL1}) {
    const Tensor S = pairwise_similarity(kind, Z, Z);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_EQ(S(i, i), 0.0);
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_EQ(S(i, j), S(j, i));
        if (i != j) {
          EXPECT_LT(S(i, j), 0.0);
        }
      }
    }
  }
  const Tensor C = pairwise_similarity(SimilarityKind::Cosine, Z, Z);
  for (double v : C.data()) {
    EXPECT_GE(v, -1.0 - 1e-15);
    EXPECT_LE(v, 1.0 + 1e-15);
  }
}

TEST(Similarity, ErrorCases) {
  EXPECT_THROW(pairwise_similarity(SimilarityKind::Cosine, Tensor::matrix({{0, 0}}), Tensor::matrix({{1, 0}})), DomainError);
  EXPECT_THROW(pairwise_similarity(SimilarityKind::Dot, Tensor(Shape{2, 3}), Tensor(Shape{2, 4})), DimensionError);
  EXPECT_THROW(parse_similarity("euclid"), ConfigError);
  for (SimilarityKind kind : kAll) EXPECT_EQ(parse_similarity(to_string(kind)), kind);
}

TEST(Similarity, GradientsMatchFiniteDifferencesForBothOperands) {
  Rng rng(21);
  const Tensor Z = random_tensor({4, 3}, rng);
  const Tensor N = random_tensor({5, 3}, rng);
  const Tensor W = random_tensor({4, 5}, rng);
  for (SimilarityKind kind : kAll) {
    for (int side = 0; side < 2; ++side) {
      const auto loss = [&](Tape& t, const Tensor& moving) {
        const Var a = side == 0 ? t.leaf(moving) : t.constant(Z);
        const Var b = side == 1 ? t.leaf(moving) : t.constant(N);
        return std::pair{sum(pairwise_similarity(kind, a, b) * t.constant(W)), side == 0 ? a : b};
      };
      const Tensor& x = side == 0 ? Z : N;
      Tape tape;
      const auto [l, leaf] = loss(tape, x);
      tape.backward(l);
      const Tensor numeric = finite_difference(
          [&](const Tensor& p) {
            Tape t(false);
            return loss(t, p).first.value().item();
          },
          x);
      EXPECT_LE(max_relative_error(tape.grad(leaf), numeric), 1e-4) << to_string(kind) << " side " << side;
    }
  }
}

TEST(Similarity, CoincidentPointsGiveFiniteZeroGradient) {
  Tape tape;
  const Var z = tape.leaf(Tensor::matrix({{1, 2}, {1, 2}}));
  tape.backward(sum(pairwise_similarity(SimilarityKind::NegL2, z, z)));
  const Tensor gz = tape.grad(z);
  for (double g : gz.data()) {
    EXPECT_TRUE(std::isfinite(g));
    EXPECT_EQ(g, 0.0);
  }
}
