#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nona/tensor.hpp"

namespace nona {

enum class Target { Linear, Radial, Spiral, Checkerboard };

std::string to_string(Target target);
Target parse_target(std::string_view name);

// Noise-free surfaces on [-1, 1]^2 (r = |x|, theta = atan2(x2, x1)):
//   linear        (x1 + x2 + 2) / 4
//   radial        sin(2 pi r)
//   spiral        sin(4 theta + 6 r)
//   checkerboard  sin(3 pi x1) sin(3 pi x2)
double target_value(Target target, double x1, double x2);

struct SyntheticSpec {
  Target target = Target::Radial;
  std::size_t n_points = 2000;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
};

struct Dataset {
  Tensor X;  // n x input_dim
  Tensor y;  // n

  std::size_t size() const { return y.size(); }
  Dataset subset(std::span<const std::size_t> indices) const;
};

// Point i consumes three draws from Rng(seed): x1, x2 uniform on [-1, 1)
// and one standard normal scaled by noise_std.
Dataset generate(const SyntheticSpec& spec);

struct SplitPlan {
  double dev_fraction = 0.8;
  double train_within_dev = 0.85;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then contiguous train | val | test blocks with
// n_dev = floor(dev_fraction n), n_train = floor(train_within_dev n_dev);
// the remainders go to test and val respectively.
SplitIndices split(std::size_t n, const SplitPlan& plan);

struct SplitData {
  Dataset train;
  Dataset val;
  Dataset test;
};

SplitData apply_split(const Dataset& data, const SplitIndices& indices);

// Header x1,x2,...,y followed by one row per point.
void write_dataset_csv(std::ostream& out, const Dataset& data);

}  // namespace nona
