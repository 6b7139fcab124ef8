#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace nona {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix; nothing in the library needs more but nothing forbids it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  // Matrix view helpers; require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

  // The single value of a size-1 tensor.
  double item() const;

  std::span<const double> row(std::size_t i) const;
  std::span<double> row(std::size_t i);

  Tensor reshaped(Shape shape) const;
  // Rows selected by index, in the order given.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

}  // namespace nona
