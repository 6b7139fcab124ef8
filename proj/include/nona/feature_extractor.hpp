#pragma once

#include <cstddef>
#include <vector>

#include "nona/autodiff.hpp"
#include "nona/rng.hpp"

namespace nona {

enum class Activation { ReLU, Identity };

struct DenseLayer {
  Parameter weight;  // out x in
  Parameter bias;    // out
  Activation activation = Activation::Identity;
};

struct MlpConfig {
  std::size_t input_dim = 2;
  std::size_t hidden_dim = 200;
  std::size_t embedding_dim = 25;
  // Number of hidden ReLU layers; 0 gives a single affine map.
  std::size_t depth = 2;
};

// Feature extractor: `depth` affine+ReLU layers followed by an affine layer
// into the embedding space.
class Mlp {
 public:
  Mlp() = default;
  // Weights and biases drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Mlp(const MlpConfig& config, Rng& rng);
  // Takes ownership of explicit layers; dimensions must chain and the last
  // activation must be Identity.
  explicit Mlp(std::vector<DenseLayer> layers);

  Var embed(Var X) const;
  Tensor embed(const Tensor& X) const;

  std::size_t input_dim() const;
  std::size_t embedding_dim() const;
  std::size_t parameter_count() const;
  // Count implied by a configuration, without building it.
  static std::size_t parameter_count(const MlpConfig& config);

  std::vector<Parameter*> parameters();
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  std::vector<DenseLayer> layers_;
};

// Affine regression head on embeddings: y_hat = Z w^T + bias.
class DenseHead {
 public:
  DenseHead() = default;
  DenseHead(std::size_t embedding_dim, Rng& rng);
  DenseHead(Tensor weight, double bias);

  Var predict(Var Z) const;
  Tensor predict(const Tensor& Z) const;

  std::vector<Parameter*> parameters() { return {&weight_, &bias_}; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }

 private:
  Parameter weight_;  // 1 x d
  Parameter bias_;    // 1
};

}  // namespace nona
