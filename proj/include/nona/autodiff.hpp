#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "nona/tensor.hpp"

namespace nona {

// A trainable tensor owned by a model.
struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {}
};

// Gradient of the loss with respect to each parameter bound on a tape.
using GradientMap = std::map<const Parameter*, Tensor>;

class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid as long as the
// tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Append-only record of differentiable operations. Every node is created
// after its operands, so reverse iteration is a reverse topological order.
class Tape {
 public:
  // Receives the gradient of the node's output and pushes contributions into
  // operand gradients through Tape::accumulate / Tape::grad_buffer.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  // A tape built with record_gradients = false binds parameters as
  // constants and keeps no backward rules (inference).
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Differentiable leaf not tied to any Parameter; its gradient is read back
  // with grad().
  Var leaf(Tensor value);
  // Leaf bound to a Parameter; its gradient appears in backward()'s map.
  Var parameter(const Parameter& parameter);
  bool records_gradients() const { return record_gradients_; }

  // Records an operation. When no input requires a gradient the backward
  // rule is dropped and the node behaves like a constant.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

  // Gradient buffer of a node, allocated as zeros on first use. Returns
  // nullptr for nodes that do not require a gradient.
  Tensor* grad_buffer(std::size_t id);
  void accumulate(std::size_t id, const Tensor& contribution);

  // Reverse accumulation from a scalar loss. Populates grad() for every
  // node on the path and returns the gradient of every bound parameter
  // (zeros when nothing flowed into it; summed when bound more than once).
  GradientMap backward(const Var& loss);

  // Gradient of a node after backward(); zeros if nothing flowed into it.
  Tensor grad(const Var& v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    const Parameter* parameter = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  bool record_gradients_ = true;
  bool backward_done_ = false;
};

// Elementwise and linear-algebra operations. Binary elementwise operations
// broadcast with numpy rules.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
// log(0) = -inf with zero gradient; negative input is a domain error.
Var log(Var a);
// Negative base with non-integer exponent is a domain error. At a zero base
// both partial derivatives are taken as 0.
Var pow(Var base, Var exponent);
Var pow(Var base, double exponent);
Var sqrt(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var broadcast_to(Var a, const Shape& shape);
Var reshape(Var a, Shape shape);

Var sum(Var a);
Var mean(Var a);

// m x k times k x n; a rank-1 right operand is treated as a column and the
// result is rank 1.
Var matmul(Var a, Var b);
// a (m x k) times transpose(b) where b is n x k.
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
// x W^T + bias for x: b x in, W: out x in, bias: out.
Var linear(Var x, Var weight, Var bias);

// Column j of a matrix as an m x 1 matrix.
Var column(Var a, std::size_t j);

// Stabilized softmax over each row. -inf entries map to exactly 0 and
// receive zero gradient; a row with no finite entry raises
// DegenerateRowError.
Var rowwise_softmax(Var scores);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);

// Plain value kernels shared by the ops above and by no-tape inference code.
namespace kernels {
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);
Tensor rowwise_softmax(const Tensor& scores);
Shape broadcast_shape(const Shape& a, const Shape& b);
// Sums `grad` (shaped like the broadcast result) back down to `shape`.
Tensor reduce_to(const Tensor& grad, const Shape& shape);
}  // namespace kernels

}  // namespace nona
