#include "nona/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <utility>

#include "nona/errors.hpp"

namespace nona {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

constexpr double kInf = std::numeric_limits<double>::infinity();

void debug_check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  if (!t.all_finite()) throw DomainError(std::string("non-finite values produced by ") + op);
#endif
}

const Tensor& val(const Var& v) { return v.value(); }

Tape& common_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw ContractError("operands recorded on different tapes");
  return a.tape();
}

// Offset into an operand for each linear index of the broadcast result.
std::vector<std::size_t> broadcast_offsets(const Shape& out, const Shape& in) {
  const std::size_t rank = out.size();
  const std::size_t lead = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t k = in.size(); k-- > 0;) {
    in_stride[lead + k] = in[k] == 1 ? 0 : stride;
    stride *= in[k];
  }
  const std::size_t n = shape_size(out);
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (std::size_t k = rank; k-- > 0;) {
      ++idx[k];
      off += in_stride[k];
      if (idx[k] < out[k]) break;
      off -= in_stride[k] * idx[k];
      idx[k] = 0;
    }
  }
  return offsets;
}

// Elementwise binary op with broadcasting. `df` returns the pair of partial
// derivatives at (x, y) given the forward output.
template <class F, class DF>
Var binary(Var a, Var b, F f, DF df) {
  Tape& tape = common_tape(a, b);
  const Tensor& x = val(a);
  const Tensor& y = val(b);
  const Shape out_shape = kernels::broadcast_shape(x.shape(), y.shape());
  const std::size_t n = shape_size(out_shape);
  Tensor out(out_shape);
  if (x.shape() == out_shape && y.shape() == out_shape) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
    return tape.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id(), df](Tape& t, const Tensor& g) {
      const Tensor& xv = t.value(ia);
      const Tensor& yv = t.value(ib);
      Tensor* ga = t.grad_buffer(ia);
      Tensor* gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (g[i] == 0.0) continue;
        const auto [dx, dy] = df(xv[i], yv[i]);
        if (ga) (*ga)[i] += g[i] * dx;
        if (gb) (*gb)[i] += g[i] * dy;
      }
    });
  }
  auto oa = broadcast_offsets(out_shape, x.shape());
  auto ob = broadcast_offsets(out_shape, y.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[oa[i]], y[ob[i]]);
  return tape.record(std::move(out), {a, b},
                     [ia = a.id(), ib = b.id(), oa = std::move(oa), ob = std::move(ob), df](Tape& t, const Tensor& g) {
                       const Tensor& xv = t.value(ia);
                       const Tensor& yv = t.value(ib);
                       Tensor* ga = t.grad_buffer(ia);
                       Tensor* gb = t.grad_buffer(ib);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         if (g[i] == 0.0) continue;
                         const auto [dx, dy] = df(xv[oa[i]], yv[ob[i]]);
                         if (ga) (*ga)[oa[i]] += g[i] * dx;
                         if (gb) (*gb)[ob[i]] += g[i] * dy;
                       }
                     });
}

// Elementwise unary op; `df(x, y)` is the derivative given input and output.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Tensor& x = val(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  Tape& tape = a.tape();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), {a}, [ia = a.id(), out_id, df](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(out_id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i] != 0.0) (*ga)[i] += g[i] * df(xv[i], yv[i]);
    }
  });
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_gradients_;
  return push(std::move(n));
}

Var Tape::parameter(const Parameter& parameter) {
  Node n;
  n.value = parameter.value;
  n.requires_grad = record_gradients_;
  n.parameter = &parameter;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw ContractError("operand recorded on a different tape");
    if (nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::accumulate(std::size_t id, const Tensor& contribution) {
  Tensor* g = grad_buffer(id);
  if (!g) return;
  if (g->size() != contribution.size()) throw DimensionError("gradient contribution has wrong size");
  for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += contribution[i];
}

GradientMap Tape::backward(const Var& loss) {
  if (&loss.tape() != this) throw ContractError("loss was not recorded on this tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_string(loss.value().shape()));
  }
  if (backward_done_) throw ContractError("backward() already ran on this tape");
  backward_done_ = true;

  if (Tensor* seed = grad_buffer(loss.id())) (*seed)[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    // Rules only write into operand buffers, which precede this node.
    if (n.backward) n.backward(*this, n.grad);
  }
  GradientMap grads;
  for (const Node& n : nodes_) {
    if (!n.parameter) continue;
    auto [it, inserted] = grads.try_emplace(n.parameter, n.value.shape());
    if (n.has_grad) {
      Tensor& g = it->second;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
  return grads;
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.shape());
}

// ---------------------------------------------------------------------------
// kernels

namespace kernels {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_string(a) + " and " + shape_string(b) + " do not broadcast");
    }
    out[k] = da == 1 ? db : da;
  }
  return out;
}

Tensor reduce_to(const Tensor& grad, const Shape& shape) {
  if (grad.shape() == shape) return grad;
  Tensor out(shape);
  const auto offsets = broadcast_offsets(grad.shape(), shape);
  for (std::size_t i = 0; i < grad.size(); ++i) out[offsets[i]] += grad[i];
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  if (b.rank() == 1) {
    if (b.size() != k) {
      throw DimensionError("matmul: " + shape_string(a.shape()) + " times " + shape_string(b.shape()));
    }
    Tensor out(Shape{m});
    Eigen::Map<Eigen::VectorXd>(out.data().data(), m).noalias() =
        ConstMap(a.data().data(), m, k) * Eigen::Map<const Eigen::VectorXd>(b.data().data(), k);
    return out;
  }
  require_matrix(b, "matmul");
  if (b.rows() != k) {
    throw DimensionError("matmul: " + shape_string(a.shape()) + " times " + shape_string(b.shape()));
  }
  const std::size_t n = b.cols();
  Tensor out(Shape{m, n});
  MutMap(out.data().data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " times transpose of " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out(Shape{m, n});
  MutMap(out.data().data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), n, k).transpose();
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: transpose of " + shape_string(a.shape()) + " times " +
                         shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out(Shape{m, n});
  MutMap(out.data().data(), m, n).noalias() =
      ConstMap(a.data().data(), k, m).transpose() * ConstMap(b.data().data(), k, n);
  return out;
}

Tensor rowwise_softmax(const Tensor& scores) {
  require_matrix(scores, "rowwise_softmax");
  const std::size_t m = scores.rows(), n = scores.cols();
  Tensor out(scores.shape());
  for (std::size_t i = 0; i < m; ++i) {
    auto s = scores.row(i);
    auto p = out.row(i);
    const double mx = *std::max_element(s.begin(), s.end());
    if (!(mx > -kInf) || std::isnan(mx)) throw DegenerateRowError(i);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = s[j] == -kInf ? 0.0 : std::exp(s[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < n; ++j) p[j] /= total;
  }
  return out;
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Elementwise ops

Var add(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x + y; },
                [](double, double) { return std::pair{1.0, 1.0}; });
}

Var sub(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x - y; },
                [](double, double) { return std::pair{1.0, -1.0}; });
}

Var mul(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x * y; },
                [](double x, double y) { return std::pair{y, x}; });
}

Var div(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return x / y; },
                [](double x, double y) { return std::pair{1.0 / y, -x / (y * y)}; });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : val(a).data()) {
    if (x < 0.0) throw DomainError("log of a negative value");
  }
  return unary(a, [](double x) { return x == 0.0 ? -kInf : std::log(x); },
               [](double x, double) { return x == 0.0 ? 0.0 : 1.0 / x; });
}

Var pow(Var base, Var exponent) {
  const Tensor& x = val(base);
  const Tensor& t = val(exponent);
  const Shape out_shape = kernels::broadcast_shape(x.shape(), t.shape());
  const auto ox = broadcast_offsets(out_shape, x.shape());
  const auto ot = broadcast_offsets(out_shape, t.shape());
  for (std::size_t i = 0; i < ox.size(); ++i) {
    const double xv = x[ox[i]], tv = t[ot[i]];
    if (xv < 0.0 && tv != std::floor(tv)) throw DomainError("pow: negative base with non-integer exponent");
  }
  return binary(
      base, exponent,
      [](double xv, double tv) {
        if (xv == 0.0) return tv == 0.0 ? 1.0 : (tv > 0.0 ? 0.0 : kInf);
        return std::pow(xv, tv);
      },
      [](double xv, double tv) {
        if (xv == 0.0) return std::pair{0.0, 0.0};
        const double y = std::pow(xv, tv);
        const double dlog = xv > 0.0 ? y * std::log(xv) : 0.0;
        return std::pair{tv * std::pow(xv, tv - 1.0), dlog};
      });
}

Var pow(Var base, double exponent) { return pow(base, base.tape().constant(Tensor::scalar(exponent))); }

Var sqrt(Var a) {
  for (double x : val(a).data()) {
    if (x < 0.0) throw DomainError("sqrt of a negative value");
  }
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y == 0.0 ? 0.0 : 0.5 / y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  return binary(a, b, [](double x, double y) { return std::min(x, y); },
                [](double x, double y) { return x <= y ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0}; });
}

Var broadcast_to(Var a, const Shape& shape) {
  if (kernels::broadcast_shape(val(a).shape(), shape) != shape) {
    throw DimensionError("cannot broadcast " + shape_string(val(a).shape()) + " to " + shape_string(shape));
  }
  const auto offsets = broadcast_offsets(shape, val(a).shape());
  Tensor out(shape);
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = val(a)[offsets[i]];
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, const Tensor& g) {
    t.accumulate(ia, kernels::reduce_to(g, t.value(ia).shape()));
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = val(a).reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [ia = a.id()](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  double total = 0.0;
  for (double x : val(a).data()) total += x;
  return a.tape().record(Tensor::scalar(total), {a}, [ia = a.id()](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (double& v : ga->data()) v += g[0];
  });
}

Var mean(Var a) {
  const std::size_t n = val(a).size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return sum(a) * (1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  Tensor out = kernels::matmul(val(a), val(b));
  debug_check_finite(out, "matmul");
  return tape.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    const bool vec = bv.rank() == 1;
    const Tensor g2 = vec ? g.reshaped({g.size(), 1}) : g;
    const Tensor b2 = vec ? bv.reshaped({bv.size(), 1}) : bv;
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul_nt(g2, b2));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(av, g2));
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& tape = common_tape(a, b);
  Tensor out = kernels::matmul_nt(val(a), val(b));
  debug_check_finite(out, "matmul_nt");
  return tape.record(std::move(out), {a, b}, [ia = a.id(), ib = b.id()](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, kernels::matmul(g, t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, kernels::matmul_tn(g, t.value(ia)));
  });
}

Var transpose(Var a) {
  const Tensor& x = val(a);
  require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = x(i, j);
  return a.tape().record(std::move(out), {a}, [ia = a.id(), m, n](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) (*ga)(i, j) += g(j, i);
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& tape = common_tape(x, weight);
  const Tensor& w = val(weight);
  const Tensor& bv = val(bias);
  if (bv.rank() != 1 || w.rank() != 2 || bv.size() != w.rows()) {
    throw DimensionError("linear: weight " + shape_string(w.shape()) + " and bias " + shape_string(bv.shape()));
  }
  Tensor out = kernels::matmul_nt(val(x), w);
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  debug_check_finite(out, "linear");
  return tape.record(std::move(out), {x, weight, bias},
                     [ix = x.id(), iw = weight.id(), ib = bias.id()](Tape& t, const Tensor& g) {
                       if (t.requires_grad(ix)) t.accumulate(ix, kernels::matmul(g, t.value(iw)));
                       if (t.requires_grad(iw)) t.accumulate(iw, kernels::matmul_tn(g, t.value(ix)));
                       if (Tensor* gb = t.grad_buffer(ib)) {
                         const std::size_t rows = g.rows(), cols = g.cols();
                         for (std::size_t i = 0; i < rows; ++i)
                           for (std::size_t j = 0; j < cols; ++j) (*gb)[j] += g(i, j);
                       }
                     });
}

Var column(Var a, std::size_t j) {
  const Tensor& x = val(a);
  require_matrix(x, "column");
  if (j >= x.cols()) throw DimensionError("column index out of range");
  const std::size_t m = x.rows();
  Tensor out(Shape{m, 1});
  for (std::size_t i = 0; i < m; ++i) out[i] = x(i, j);
  return a.tape().record(std::move(out), {a}, [ia = a.id(), j](Tape& t, const Tensor& g) {
    Tensor* ga = t.grad_buffer(ia);
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)(i, j) += g[i];
  });
}

Var rowwise_softmax(Var scores) {
  Tensor out = kernels::rowwise_softmax(val(scores));
  Tape& tape = scores.tape();
  const std::size_t out_id = tape.size();
  return tape.record(std::move(out), {scores}, [is = scores.id(), out_id](Tape& t, const Tensor& g) {
    Tensor* gs = t.grad_buffer(is);
    if (!gs) return;
    const Tensor& p = t.value(out_id);
    const std::size_t m = p.rows(), n = p.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += p(i, j) * g(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        if (p(i, j) != 0.0) (*gs)(i, j) += p(i, j) * (g(i, j) - dot);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Operators

namespace {
Var scalar_like(const Var& v, double x) { return v.tape().constant(Tensor::scalar(x)); }
}  // namespace

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator/(Var a, Var b) { return div(a, b); }
Var operator-(Var a) { return neg(a); }
Var operator+(Var a, double b) { return add(a, scalar_like(a, b)); }
Var operator-(Var a, double b) { return sub(a, scalar_like(a, b)); }
Var operator-(double a, Var b) { return sub(scalar_like(b, a), b); }
Var operator*(Var a, double b) { return mul(a, scalar_like(a, b)); }
Var operator*(double a, Var b) { return mul(scalar_like(b, a), b); }

}  // namespace nona
