#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "nona/config.hpp"
#include "nona/training.hpp"

namespace nona {

// On-disk layout of a checkpoint directory:
//   manifest.json  format version, config echo, best-epoch metadata and one
//                  {name, shape, file} entry per tensor
//   <name>.bin     the tensor's values as little-endian IEEE-754 doubles
// A NONA model also stores its neighbor bank as bank.embeddings and
// bank.labels.
struct CheckpointMeta {
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
};

void save_checkpoint(const std::filesystem::path& dir, const Model& model, const ExperimentConfig& config,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ExperimentConfig config;
  Model model;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

void write_tensor_blob(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_blob(const std::filesystem::path& path, const Shape& shape);

}  // namespace nona
