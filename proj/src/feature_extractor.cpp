#include "nona/feature_extractor.hpp"

#include <cmath>

#include "nona/errors.hpp"

namespace nona {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

DenseLayer make_layer(std::size_t index, std::size_t in, std::size_t out, Activation act, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  const std::string prefix = "mlp." + std::to_string(index);
  DenseLayer layer;
  layer.weight = Parameter(prefix + ".weight", uniform_tensor({out, in}, bound, rng));
  layer.bias = Parameter(prefix + ".bias", uniform_tensor({out}, bound, rng));
  layer.activation = act;
  return layer;
}

}  // namespace

Mlp::Mlp(const MlpConfig& config, Rng& rng) {
  if (config.input_dim == 0 || config.embedding_dim == 0 || (config.depth > 0 && config.hidden_dim == 0)) {
    throw ConfigError("MLP dimensions must be positive");
  }
  std::size_t in = config.input_dim;
  for (std::size_t l = 0; l < config.depth; ++l) {
    layers_.push_back(make_layer(l, in, config.hidden_dim, Activation::ReLU, rng));
    in = config.hidden_dim;
  }
  layers_.push_back(make_layer(config.depth, in, config.embedding_dim, Activation::Identity, rng));
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ContractError("MLP needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Tensor& w = layers_[l].weight.value;
    if (w.rank() != 2 || layers_[l].bias.value.rank() != 1 || layers_[l].bias.value.size() != w.rows()) {
      throw DimensionError("layer " + std::to_string(l) + " has inconsistent weight and bias shapes");
    }
    if (l > 0 && w.cols() != layers_[l - 1].weight.value.rows()) {
      throw DimensionError("layer " + std::to_string(l) + " input does not match previous output");
    }
  }
  if (layers_.back().activation != Activation::Identity) {
    throw ContractError("final MLP layer must have identity activation");
  }
}

Var Mlp::embed(Var X) const {
  Tape& tape = X.tape();
  Var h = X;
  for (const DenseLayer& layer : layers_) {
    h = linear(h, tape.parameter(layer.weight), tape.parameter(layer.bias));
    if (layer.activation == Activation::ReLU) h = relu(h);
  }
  return h;
}

Tensor Mlp::embed(const Tensor& X) const {
  Tape tape(false);
  return embed(tape.constant(X)).value();
}

std::size_t Mlp::input_dim() const { return layers_.front().weight.value.cols(); }
std::size_t Mlp::embedding_dim() const { return layers_.back().weight.value.rows(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const DenseLayer& layer : layers_) n += layer.weight.value.size() + layer.bias.value.size();
  return n;
}

std::size_t Mlp::parameter_count(const MlpConfig& c) {
  if (c.depth == 0) return c.input_dim * c.embedding_dim + c.embedding_dim;
  return (c.input_dim + 1) * c.hidden_dim + (c.depth - 1) * (c.hidden_dim + 1) * c.hidden_dim +
         (c.hidden_dim + 1) * c.embedding_dim;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (DenseLayer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  return out;
}

DenseHead::DenseHead(std::size_t embedding_dim, Rng& rng) {
  if (embedding_dim == 0) throw ConfigError("dense head needs a positive embedding dimension");
  const double bound = 1.0 / std::sqrt(static_cast<double>(embedding_dim));
  weight_ = Parameter("dense.weight", uniform_tensor({1, embedding_dim}, bound, rng));
  bias_ = Parameter("dense.bias", uniform_tensor({1}, bound, rng));
}

DenseHead::DenseHead(Tensor weight, double bias)
    : weight_("dense.weight", std::move(weight)), bias_("dense.bias", Tensor(Shape{1}, bias)) {
  if (weight_.value.rank() == 1) weight_.value = weight_.value.reshaped({1, weight_.value.size()});
  if (weight_.value.rank() != 2 || weight_.value.rows() != 1) throw DimensionError("dense head weight must be 1 x d");
}

Var DenseHead::predict(Var Z) const {
  Tape& tape = Z.tape();
  const Var out = linear(Z, tape.parameter(weight_), tape.parameter(bias_));
  return reshape(out, {out.value().rows()});
}

Tensor DenseHead::predict(const Tensor& Z) const {
  Tape tape(false);
  return predict(tape.constant(Z)).value();
}

}  // namespace nona
