#include <gtest/gtest.h>

#include "nona/errors.hpp"
#include "nona/tensor.hpp"

using namespace nona;

TEST(Tensor, ShapeAndSizeAgree) {
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_DOUBLE_EQ(t(1, 2), 1.5);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Tensor, MatrixLiteralIsRowMajor) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(m.values(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_DOUBLE_EQ(m(1, 0), 3.0);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, GatherRowsKeepsOrder) {
  const Tensor m = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> idx{2, 0};
  const Tensor g = m.gather_rows(idx);
  EXPECT_EQ(g, Tensor::matrix({{5, 6}, {1, 2}}));
  const Tensor v = Tensor::vector({7, 8, 9});
  EXPECT_EQ(v.gather_rows(idx), Tensor::vector({9, 7}));
}

TEST(Tensor, ItemRequiresSingleValue) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(4.0).item(), 4.0);
  EXPECT_THROW(Tensor::vector({1, 2}).item(), DimensionError);
}

TEST(Tensor, ReshapePreservesData) {
  const Tensor v = Tensor::vector({1, 2, 3, 4, 5, 6});
  const Tensor m = v.reshaped({3, 2});
  EXPECT_DOUBLE_EQ(m(2, 1), 6.0);
  EXPECT_THROW(v.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t = Tensor::vector({1, 2});
  EXPECT_TRUE(t.all_finite());
  t[1] = -std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
}
