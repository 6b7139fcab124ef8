#include "nona/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "nona/errors.hpp"

namespace nona {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_string(shape_));
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(i * c, c);
}

std::span<double> Tensor::row(std::size_t i) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(i * c, c);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  if (rank() == 1) {
    std::vector<double> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(data_.at(i));
    return Tensor::vector(std::move(out));
  }
  const std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t i : indices) {
    if (i >= shape_[0]) throw ContractError("row index out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(Shape{indices.size(), c}, std::move(out));
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace nona
