#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nona/tensor.hpp"

namespace nona {

enum class KnnWeighting { Uniform, Distance };

struct KnnConfig {
  std::size_t k = 3;
  int p = 2;  // Minkowski order, 1 or 2
  KnnWeighting weighting = KnnWeighting::Uniform;

  friend bool operator==(const KnnConfig&, const KnnConfig&) = default;
};

std::string to_string(KnnWeighting weighting);
std::string to_string(const KnnConfig& config);

// Exact brute-force k-NN regression. Distance ties at the k-th rank go to
// the lower training index. With distance weighting, neighbors at exactly
// zero distance take all the weight (their labels are averaged).
Tensor knn_fit_predict(const KnnConfig& config, const Tensor& Z_train, const Tensor& y_train,
                       const Tensor& Z_query);

// The 3 x 2 x 2 grid k in {3,5,7}, p in {1,2}, weights in {uniform,
// distance}, listed in tie-break order.
std::vector<KnnConfig> knn_grid();

struct KnnSearchResult {
  KnnConfig best;
  double val_mse = 0.0;
  // Every evaluated cell with its validation MSE, in grid order.
  std::vector<std::pair<KnnConfig, double>> evaluated;
};

// Picks the grid cell with the lowest validation MSE; ties go to smaller k,
// then smaller p, then uniform weighting. Cells with k > N are skipped.
KnnSearchResult knn_grid_search(const Tensor& Z_train, const Tensor& y_train, const Tensor& Z_val,
                                const Tensor& y_val);

struct LinearModel {
  std::vector<double> weights;
  double bias = 0.0;

  Tensor predict(const Tensor& X) const;
};

inline constexpr double kLinearRegressionRidge = 1e-8;

// Ordinary least squares with intercept, solved through the centered normal
// equations (X^T X + ridge I) w = X^T y.
LinearModel linear_regression_fit(const Tensor& X, const Tensor& y, double ridge = kLinearRegressionRidge);

}  // namespace nona
