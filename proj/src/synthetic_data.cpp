#include "nona/synthetic_data.hpp"

#include <cmath>
#include <numbers>
#include <ostream>

#include "nona/csv.hpp"
#include "nona/errors.hpp"
#include "nona/rng.hpp"

namespace nona {

std::string to_string(Target target) {
  switch (target) {
    case Target::Linear: return "linear";
    case Target::Radial: return "radial";
    case Target::Spiral: return "spiral";
    case Target::Checkerboard: return "checkerboard";
  }
  return "unknown";
}

Target parse_target(std::string_view name) {
  if (name == "linear") return Target::Linear;
  if (name == "radial") return Target::Radial;
  if (name == "spiral") return Target::Spiral;
  if (name == "checkerboard") return Target::Checkerboard;
  throw ConfigError("unknown dataset target '" + std::string(name) +
                    "' (expected linear, radial, spiral or checkerboard)");
}

double target_value(Target target, double x1, double x2) {
  using std::numbers::pi;
  const double r = std::hypot(x1, x2);
  switch (target) {
    case Target::Linear: return (x1 + x2 + 2.0) / 4.0;
    case Target::Radial: return std::sin(2.0 * pi * r);
    case Target::Spiral: return std::sin(4.0 * std::atan2(x2, x1) + 6.0 * r);
    case Target::Checkerboard: return std::sin(3.0 * pi * x1) * std::sin(3.0 * pi * x2);
  }
  return 0.0;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  return Dataset{X.gather_rows(indices), y.gather_rows(indices)};
}

Dataset generate(const SyntheticSpec& spec) {
  if (spec.n_points == 0) throw ContractError("dataset needs at least one point");
  if (!(spec.noise_std >= 0.0)) throw ContractError("noise_std must be non-negative");
  Rng rng(spec.seed);
  Tensor X(Shape{spec.n_points, 2});
  Tensor y(Shape{spec.n_points});
  for (std::size_t i = 0; i < spec.n_points; ++i) {
    const double x1 = rng.uniform(-1.0, 1.0);
    const double x2 = rng.uniform(-1.0, 1.0);
    const double noise = rng.normal();
    X(i, 0) = x1;
    X(i, 1) = x2;
    y[i] = target_value(spec.target, x1, x2) + spec.noise_std * noise;
  }
  return Dataset{std::move(X), std::move(y)};
}

SplitIndices split(std::size_t n, const SplitPlan& plan) {
  if (n < 10) throw ContractError("split needs at least 10 points, got " + std::to_string(n));
  // The small offset keeps products such as 0.85 * 80 from flooring to 67.
  const auto floor_count = [](double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); };
  const std::size_t n_dev = floor_count(plan.dev_fraction * static_cast<double>(n));
  const std::size_t n_train = floor_count(plan.train_within_dev * static_cast<double>(n_dev));
  if (n_train == 0 || n_train == n_dev || n_dev == n) throw ContractError("split produced an empty partition");

  Rng rng(plan.seed);
  const auto perm = rng.permutation(n);
  SplitIndices out;
  out.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.begin() + static_cast<std::ptrdiff_t>(n_dev));
  out.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_dev), perm.end());
  return out;
}

SplitData apply_split(const Dataset& data, const SplitIndices& indices) {
  return SplitData{data.subset(indices.train), data.subset(indices.val), data.subset(indices.test)};
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  const std::size_t d = data.X.cols();
  std::vector<std::string> header;
  for (std::size_t k = 0; k < d; ++k) header.push_back("x" + std::to_string(k + 1));
  header.push_back("y");
  CsvWriter csv(out, header);
  std::vector<double> row(d + 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) row[k] = data.X(i, k);
    row[d] = data.y[i];
    csv.row(row);
  }
}

}  // namespace nona
