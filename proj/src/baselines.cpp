#include "nona/baselines.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "nona/errors.hpp"

namespace nona {

namespace {

struct Neighbor {
  double distance;
  std::size_t index;
  bool operator<(const Neighbor& o) const { return std::tie(distance, index) < std::tie(o.distance, o.index); }
};

double minkowski(std::span<const double> a, std::span<const double> b, int p) {
  double acc = 0.0;
  if (p == 1) {
    for (std::size_t k = 0; k < a.size(); ++k) acc += std::abs(a[k] - b[k]);
    return acc;
  }
  for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(acc);
}

void check_knn_inputs(const KnnConfig& config, const Tensor& Z_train, const Tensor& y_train, const Tensor& Z_query) {
  if (config.k == 0) throw ContractError("k-NN needs k >= 1");
  if (config.p != 1 && config.p != 2) throw ContractError("k-NN supports Minkowski order 1 or 2");
  if (Z_train.rank() != 2 || Z_query.rank() != 2 || Z_train.cols() != Z_query.cols()) {
    throw DimensionError("k-NN training and query embeddings must be matrices of equal width");
  }
  if (y_train.rank() != 1 || y_train.size() != Z_train.rows()) throw ContractError("one label per training point");
  if (Z_train.rows() < config.k) {
    throw ContractError("k-NN has " + std::to_string(Z_train.rows()) + " neighbors but k = " +
                        std::to_string(config.k));
  }
}

// The `count` nearest training rows to a query, nearest first.
std::vector<Neighbor> nearest(const Tensor& Z_train, std::span<const double> query, int p, std::size_t count) {
  std::vector<Neighbor> all(Z_train.rows());
  for (std::size_t j = 0; j < all.size(); ++j) all[j] = {minkowski(query, Z_train.row(j), p), j};
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(count), all.end());
  all.resize(count);
  return all;
}

double combine(std::span<const Neighbor> selected, const Tensor& y, KnnWeighting weighting) {
  if (weighting == KnnWeighting::Uniform) {
    double s = 0.0;
    for (const Neighbor& nb : selected) s += y[nb.index];
    return s / static_cast<double>(selected.size());
  }
  double hit_sum = 0.0;
  std::size_t hits = 0;
  for (const Neighbor& nb : selected) {
    if (nb.distance == 0.0) {
      hit_sum += y[nb.index];
      ++hits;
    }
  }
  if (hits) return hit_sum / static_cast<double>(hits);
  double num = 0.0, den = 0.0;
  for (const Neighbor& nb : selected) {
    num += y[nb.index] / nb.distance;
    den += 1.0 / nb.distance;
  }
  return num / den;
}

double mse(const Tensor& pred, const Tensor& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (pred[i] - y[i]) * (pred[i] - y[i]);
  return s / static_cast<double>(y.size());
}

}  // namespace

std::string to_string(KnnWeighting weighting) { return weighting == KnnWeighting::Uniform ? "uniform" : "distance"; }

std::string to_string(const KnnConfig& c) {
  return "k=" + std::to_string(c.k) + ",p=" + std::to_string(c.p) + "," + to_string(c.weighting);
}

Tensor knn_fit_predict(const KnnConfig& config, const Tensor& Z_train, const Tensor& y_train, const Tensor& Z_query) {
  check_knn_inputs(config, Z_train, y_train, Z_query);
  Tensor out(Shape{Z_query.rows()});
  for (std::size_t i = 0; i < Z_query.rows(); ++i) {
    const auto nb = nearest(Z_train, Z_query.row(i), config.p, config.k);
    out[i] = combine(nb, y_train, config.weighting);
  }
  return out;
}

std::vector<KnnConfig> knn_grid() {
  std::vector<KnnConfig> grid;
  for (std::size_t k : {3, 5, 7})
    for (int p : {1, 2})
      for (KnnWeighting w : {KnnWeighting::Uniform, KnnWeighting::Distance}) grid.push_back({k, p, w});
  return grid;
}

KnnSearchResult knn_grid_search(const Tensor& Z_train, const Tensor& y_train, const Tensor& Z_val, const Tensor& y_val) {
  if (Z_train.rank() != 2 || Z_train.rows() == 0 || Z_val.rank() != 2 || Z_val.rows() == 0) {
    throw ContractError("k-NN grid search needs non-empty training and validation splits");
  }
  if (y_val.size() != Z_val.rows()) throw ContractError("one label per validation point");
  const auto grid = knn_grid();
  std::size_t k_max = 0;
  for (const KnnConfig& c : grid) {
    if (c.k <= Z_train.rows()) k_max = std::max(k_max, c.k);
  }
  if (k_max == 0) throw ContractError("k-NN grid search needs at least 3 training points");
  check_knn_inputs({k_max, 2, KnnWeighting::Uniform}, Z_train, y_train, Z_val);

  // Neighbor lists per Minkowski order, shared by every k and weighting.
  std::vector<std::vector<Neighbor>> lists[2];
  for (int p : {1, 2}) {
    auto& lists_p = lists[p - 1];
    lists_p.reserve(Z_val.rows());
    for (std::size_t i = 0; i < Z_val.rows(); ++i) lists_p.push_back(nearest(Z_train, Z_val.row(i), p, k_max));
  }

  KnnSearchResult result;
  bool have_best = false;
  for (const KnnConfig& c : grid) {
    if (c.k > Z_train.rows()) continue;
    Tensor pred(Shape{Z_val.rows()});
    for (std::size_t i = 0; i < Z_val.rows(); ++i) {
      const auto& nb = lists[c.p - 1][i];
      pred[i] = combine(std::span<const Neighbor>(nb.data(), c.k), y_train, c.weighting);
    }
    const double m = mse(pred, y_val);
    result.evaluated.emplace_back(c, m);
    // Grid order is the tie-break order, so only a strict improvement wins.
    if (!have_best || m < result.val_mse) {
      result.best = c;
      result.val_mse = m;
      have_best = true;
    }
  }
  return result;
}

Tensor LinearModel::predict(const Tensor& X) const {
  if (X.rank() != 2 || X.cols() != weights.size()) throw DimensionError("linear model input width mismatch");
  Tensor out(Shape{X.rows()});
  for (std::size_t i = 0; i < X.rows(); ++i) {
    double s = bias;
    auto r = X.row(i);
    for (std::size_t k = 0; k < weights.size(); ++k) s += r[k] * weights[k];
    out[i] = s;
  }
  return out;
}

LinearModel linear_regression_fit(const Tensor& X, const Tensor& y, double ridge) {
  if (X.rank() != 2 || y.rank() != 1 || y.size() != X.rows()) {
    throw DimensionError("linear regression needs X: N x d and y: N");
  }
  const std::size_t n = X.rows(), d = X.cols();
  if (n <= d) throw ContractError("linear regression needs more rows than features");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> Xm(X.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::Map<const Eigen::VectorXd> ym(y.data().data(), static_cast<Eigen::Index>(n));

  const Eigen::RowVectorXd x_mean = Xm.colwise().mean();
  const double y_mean = ym.mean();
  const Eigen::MatrixXd Xc = Xm.rowwise() - x_mean;
  const Eigen::VectorXd yc = ym.array() - y_mean;

  Eigen::MatrixXd gram = Xc.transpose() * Xc;
  gram.diagonal().array() += ridge;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw SingularSystemError("normal equations are not positive definite");
  const Eigen::VectorXd w = llt.solve(Xc.transpose() * yc);
  if (!w.allFinite()) throw SingularSystemError("normal equations produced non-finite weights");

  LinearModel model;
  model.weights.assign(w.data(), w.data() + w.size());
  model.bias = y_mean - x_mean.dot(w);
  return model;
}

}  // namespace nona
