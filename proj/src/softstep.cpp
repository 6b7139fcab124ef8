#include "nona/softstep.hpp"

#include <algorithm>
#include <cmath>

#include "nona/errors.hpp"

namespace nona {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double sigmoid(double w) {
  if (w >= 0.0) return 1.0 / (1.0 + std::exp(-w));
  const double e = std::exp(w);
  return e / (1.0 + e);
}

double log_sigmoid(double w) {
  if (w >= 0.0) return -std::log1p(std::exp(-w));
  return w - std::log1p(std::exp(w));
}

// S1 in log-odds form: w = (ln(x-a) - ln(b-x)) / t and S1 = sigmoid(w).
double s1_log_odds(double x, double a, double b, double t) {
  return (std::log(x - a) - std::log(b - x)) / t;
}

LogMask log_s1_unchecked(double x, double a, double b, double t) {
  LogMask out;
  if (x <= a) {
    out.value = -kInf;
    return out;
  }
  if (x >= b) return out;
  const double u = x - a;
  const double v = b - x;
  const double w = s1_log_odds(x, a, b, t);
  const double s = sigmoid(-w);  // d/dw log sigmoid(w)
  out.value = log_sigmoid(w);
  out.dx = s * (1.0 / u + 1.0 / v) / t;
  out.da = -s / (u * t);
  out.db = -s / (v * t);
  out.dt = -s * w / t;
  return out;
}

LogMask log_s2_unchecked(double x, double b, double t) {
  LogMask out;
  if (x >= b) return out;
  const double c = t / (1.0 - t);
  const double e = (b - x) * c;
  if (x <= 0.0) {
    if (e != 0.0) out.value = -kInf;
    return out;
  }
  const double l = std::log(x / b);
  out.value = e * l;
  out.dx = c * (-l + (b - x) / x);
  out.db = c * (l - (b - x) / b);
  out.dt = (b - x) * l / ((1.0 - t) * (1.0 - t));
  return out;
}

std::ptrdiff_t self_of(SelfIndex self_index, std::size_t row) {
  return self_index.empty() ? kNoSelf : self_index[row];
}

void check_self_index(SelfIndex self_index, const Tensor& x) {
  if (!self_index.empty() && self_index.size() != x.rows()) {
    throw DimensionError("self index has " + std::to_string(self_index.size()) + " entries for " +
                         std::to_string(x.rows()) + " rows");
  }
}

std::size_t param_row(const Tensor& p, std::size_t i) { return p.size() == 1 ? 0 : i; }

void check_row_param(const Tensor& p, std::size_t rows, const char* name) {
  if (p.rank() != 2 || p.cols() != 1 || (p.rows() != 1 && p.rows() != rows)) {
    throw DimensionError(std::string("SoftStep parameter ") + name + " must be 1x1 or " + std::to_string(rows) +
                         "x1, got " + shape_string(p.shape()));
  }
}

}  // namespace

std::string to_string(SoftStepFamily family) {
  switch (family) {
    case SoftStepFamily::None: return "none";
    case SoftStepFamily::S1: return "s1";
    case SoftStepFamily::S2: return "s2";
  }
  return "unknown";
}

std::string to_string(ParamMode mode) { return mode == ParamMode::Global ? "global" : "pointwise"; }

SoftStepFamily parse_softstep_family(std::string_view name) {
  if (name == "none") return SoftStepFamily::None;
  if (name == "s1") return SoftStepFamily::S1;
  if (name == "s2") return SoftStepFamily::S2;
  throw ConfigError("unknown softstep family '" + std::string(name) + "' (expected s1, s2 or none)");
}

ParamMode parse_param_mode(std::string_view name) {
  if (name == "global") return ParamMode::Global;
  if (name == "pointwise") return ParamMode::Pointwise;
  throw ConfigError("unknown softstep param_mode '" + std::string(name) + "' (expected global or pointwise)");
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Scalar mask functions

double s1(double x, double a, double b, double t) {
  if (a >= b) throw ContractError("S1 needs a < b");
  if (x <= a) return 0.0;
  if (x >= b) return 1.0;
  return sigmoid(s1_log_odds(x, a, b, t));
}

double s2(double x, double b, double t) {
  if (!(b > 0.0)) throw ContractError("S2 needs b > 0");
  if (x >= b) return 1.0;
  const double e = (b - x) * t / (1.0 - t);
  if (x <= 0.0) return e == 0.0 ? 1.0 : 0.0;
  return std::exp(e * std::log(x / b));
}

LogMask log_s1(double x, double a, double b, double t) {
  if (a >= b) throw ContractError("S1 needs a < b");
  return log_s1_unchecked(x, a, b, t);
}

LogMask log_s2(double x, double b, double t) {
  if (!(b > 0.0)) throw ContractError("S2 needs b > 0");
  return log_s2_unchecked(x, b, t);
}

// ---------------------------------------------------------------------------
// Normalization

Tensor minmax_normalize(std::span<const double> row, std::optional<std::size_t> self_index) {
  const std::size_t n = row.size();
  double lo = kInf, hi = -kInf;
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (self_index && *self_index == j) continue;
    lo = std::min(lo, row[j]);
    hi = std::max(hi, row[j]);
    ++kept;
  }
  if (kept == 0) throw ContractError("min-max normalization of a row with no unmasked entries");
  Tensor out(Shape{n});
  for (std::size_t j = 0; j < n; ++j) {
    if (self_index && *self_index == j) continue;
    out[j] = hi == lo ? 1.0 : (row[j] - lo) / (hi - lo);
  }
  return out;
}

Var minmax_normalize_rows(Var sim, SelfIndex self_index) {
  const Tensor& x = sim.value();
  if (x.rank() != 2) throw DimensionError("minmax_normalize_rows expects a matrix");
  check_self_index(self_index, x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  // Per row: argmin, argmax (equal when the row is degenerate).
  std::vector<std::size_t> arg_lo(m), arg_hi(m);
  std::vector<std::ptrdiff_t> self(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::ptrdiff_t s = self_of(self_index, i);
    self[i] = s;
    auto r = x.row(i);
    std::size_t lo = n, hi = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<std::ptrdiff_t>(j) == s) continue;
      if (lo == n || r[j] < r[lo]) lo = j;
      if (hi == n || r[j] > r[hi]) hi = j;
    }
    if (lo == n) throw ContractError("min-max normalization of a row with no unmasked entries");
    arg_lo[i] = lo;
    arg_hi[i] = hi;
    const double range = r[hi] - r[lo];
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<std::ptrdiff_t>(j) == s) continue;
      out(i, j) = range == 0.0 ? 1.0 : (r[j] - r[lo]) / range;
    }
  }
  return sim.tape().record(
      std::move(out), {sim},
      [is = sim.id(), arg_lo = std::move(arg_lo), arg_hi = std::move(arg_hi), self = std::move(self)](
          Tape& t, const Tensor& g) {
        Tensor* gx = t.grad_buffer(is);
        if (!gx) return;
        const Tensor& xv = t.value(is);
        const std::size_t rows = xv.rows(), cols = xv.cols();
        for (std::size_t i = 0; i < rows; ++i) {
          const double lo = xv(i, arg_lo[i]);
          const double hi = xv(i, arg_hi[i]);
          const double range = hi - lo;
          if (range == 0.0) continue;
          double g_lo = 0.0, g_hi = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            if (static_cast<std::ptrdiff_t>(j) == self[i]) continue;
            const double gij = g(i, j);
            if (gij == 0.0) continue;
            (*gx)(i, j) += gij / range;
            g_lo += gij * (xv(i, j) - hi) / (range * range);
            g_hi -= gij * (xv(i, j) - lo) / (range * range);
          }
          (*gx)(i, arg_lo[i]) += g_lo;
          (*gx)(i, arg_hi[i]) += g_hi;
        }
      });
}

Var row_max(Var x, SelfIndex self_index) {
  const Tensor& v = x.value();
  if (v.rank() != 2) throw DimensionError("row_max expects a matrix");
  check_self_index(self_index, v);
  const std::size_t m = v.rows(), n = v.cols();
  Tensor out(Shape{m, 1});
  std::vector<std::size_t> arg(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::ptrdiff_t s = self_of(self_index, i);
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (static_cast<std::ptrdiff_t>(j) == s) continue;
      if (best == n || v(i, j) > v(i, best)) best = j;
    }
    if (best == n) throw ContractError("row_max of a row with no unmasked entries");
    arg[i] = best;
    out[i] = v(i, best);
  }
  return x.tape().record(std::move(out), {x}, [ix = x.id(), arg = std::move(arg)](Tape& t, const Tensor& g) {
    Tensor* gx = t.grad_buffer(ix);
    if (!gx) return;
    for (std::size_t i = 0; i < arg.size(); ++i) (*gx)(i, arg[i]) += g[i];
  });
}

Var softstep_log_mask(SoftStepFamily family, Var x_norm, Var a, Var b, Var t) {
  if (family == SoftStepFamily::None) throw ContractError("softstep_log_mask needs S1 or S2");
  const Tensor& x = x_norm.value();
  if (x.rank() != 2) throw DimensionError("softstep_log_mask expects a matrix");
  const std::size_t m = x.rows(), n = x.cols();
  const bool use_a = family == SoftStepFamily::S1;
  if (use_a) check_row_param(a.value(), m, "a");
  check_row_param(b.value(), m, "b");
  check_row_param(t.value(), m, "t");

  auto eval = [family](double xv, double av, double bv, double tv) {
    if (family == SoftStepFamily::S1) {
      // A collapsed interval behaves as a hard step at a.
      if (bv <= av) return xv <= av ? LogMask{-kInf} : LogMask{};
      return log_s1_unchecked(xv, av, bv, tv);
    }
    return log_s2_unchecked(xv, bv, tv);
  };

  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double av = use_a ? a.value()[param_row(a.value(), i)] : 0.0;
    const double bv = b.value()[param_row(b.value(), i)];
    const double tv = t.value()[param_row(t.value(), i)];
    for (std::size_t j = 0; j < n; ++j) out(i, j) = eval(x(i, j), av, bv, tv).value;
  }

  const std::size_t ix = x_norm.id(), ib = b.id(), it = t.id();
  const std::size_t ia = use_a ? a.id() : 0;
  auto backward = [eval, use_a, ix, ia, ib, it](Tape& tp, const Tensor& g) {
    const Tensor& xv = tp.value(ix);
    const Tensor& bv = tp.value(ib);
    const Tensor& tv = tp.value(it);
    const Tensor* av = use_a ? &tp.value(ia) : nullptr;
    Tensor* gx = tp.grad_buffer(ix);
    Tensor* ga = use_a ? tp.grad_buffer(ia) : nullptr;
    Tensor* gb = tp.grad_buffer(ib);
    Tensor* gt = tp.grad_buffer(it);
    const std::size_t rows = xv.rows(), cols = xv.cols();
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t ra = av ? param_row(*av, i) : 0;
      const std::size_t rb = param_row(bv, i), rt = param_row(tv, i);
      const double a_i = av ? (*av)[ra] : 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double gij = g(i, j);
        if (gij == 0.0) continue;
        const LogMask lm = eval(xv(i, j), a_i, bv[rb], tv[rt]);
        if (gx) (*gx)(i, j) += gij * lm.dx;
        if (ga) (*ga)[ra] += gij * lm.da;
        if (gb) (*gb)[rb] += gij * lm.db;
        if (gt) (*gt)[rt] += gij * lm.dt;
      }
    }
  };
  if (use_a) return x_norm.tape().record(std::move(out), {x_norm, a, b, t}, backward);
  return x_norm.tape().record(std::move(out), {x_norm, b, t}, backward);
}

// ---------------------------------------------------------------------------
// SoftStep block

SoftStep::SoftStep(SoftStepConfig config, std::size_t embedding_dim) : config_(config) {
  if (!(config.epsilon > 0.0)) throw ConfigError("softstep.epsilon must be positive");
  if (!(config.t_clamp > 0.0 && config.t_clamp < 0.5)) throw ConfigError("softstep.t_clamp must lie in (0, 0.5)");
  const std::vector<double> init{logit(kInitA0), logit(kInitB0), logit(kInitT)};
  if (config.family == SoftStepFamily::None) return;
  if (config.param_mode == ParamMode::Global) {
    global_ = Parameter("softstep.global_raw", Tensor(Shape{1, 3}, init));
  } else {
    if (embedding_dim == 0) throw ConfigError("pointwise SoftStep needs a positive embedding dimension");
    weight_ = Parameter("softstep.weight", Tensor(Shape{3, embedding_dim}, 0.0));
    bias_ = Parameter("softstep.bias", Tensor(Shape{3}, init));
  }
}

std::vector<Parameter*> SoftStep::parameters() {
  if (config_.family == SoftStepFamily::None) return {};
  if (config_.param_mode == ParamMode::Global) return {&global_};
  return {&weight_, &bias_};
}

std::vector<const Parameter*> SoftStep::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<SoftStep*>(this)->parameters()) out.push_back(p);
  return out;
}

SoftStep::Result SoftStep::apply(Var Z, Var sim, Var sim_norm, SelfIndex self_index) const {
  if (config_.family == SoftStepFamily::None) return Result{sim, {}, {}, {}};
  Tape& tape = sim.tape();

  Var params;
  if (config_.param_mode == ParamMode::Global) {
    params = sigmoid(tape.parameter(global_));
  } else {
    params = sigmoid(linear(Z, tape.parameter(weight_), tape.parameter(bias_)));
  }
  const Var a0 = column(params, 0);
  const Var b0 = column(params, 1);
  const Var t = clamp(column(params, 2), config_.t_clamp, 1.0 - config_.t_clamp);

  Var a, b;
  if (config_.family == SoftStepFamily::S1) {
    const Var top_sim = row_max(sim_norm, self_index);
    a = minimum(a0, top_sim) - config_.epsilon;
    b = a + b0 * (1.0 - a);
  } else {
    a = a0;
    b = b0;
  }
  const Var log_mask = softstep_log_mask(config_.family, sim_norm, a, b, t);
  return Result{sim + log_mask, a, b, t};
}

}  // namespace nona
