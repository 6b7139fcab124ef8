#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nona/autodiff.hpp"
#include "nona/tensor.hpp"

namespace nona {

enum class SoftStepFamily { None, S1, S2 };
enum class ParamMode { Global, Pointwise };

std::string to_string(SoftStepFamily family);
std::string to_string(ParamMode mode);
SoftStepFamily parse_softstep_family(std::string_view name);
ParamMode parse_param_mode(std::string_view name);

struct SoftStepConfig {
  SoftStepFamily family = SoftStepFamily::S2;
  ParamMode param_mode = ParamMode::Pointwise;
  // Margin subtracted from the rejection threshold so the best neighbor of
  // every row survives S1.
  double epsilon = 1e-6;
  // t is clamped to [t_clamp, 1 - t_clamp]; 1/t appears in S1.
  double t_clamp = 1e-3;
};

// Mask values. s1 throws ContractError when a >= b.
//   S1(x; a, b, t) = 0 on [0, a], 1 on [b, 1], and in between
//                    (x-a)^(1/t) / ((x-a)^(1/t) + (b-x)^(1/t))
//   S2(x; b, t)    = (x/b)^((b-x) t/(1-t)) on [0, b), 1 on [b, 1]
// with 0^0 = 1 and 0^p = 0 for p > 0.
double s1(double x, double a, double b, double t);
double s2(double x, double b, double t);

// ln S and its partial derivatives. The value is -inf where the mask is
// exactly 0; derivatives are 0 wherever the mask is flat (0 or 1).
struct LogMask {
  double value = 0.0;
  double dx = 0.0;
  double da = 0.0;
  double db = 0.0;
  double dt = 0.0;
};
LogMask log_s1(double x, double a, double b, double t);
LogMask log_s2(double x, double b, double t);

// Row index of the bank entry to exclude for each query row, or kNoSelf.
// An empty span means no exclusions at all.
inline constexpr std::ptrdiff_t kNoSelf = -1;
using SelfIndex = std::span<const std::ptrdiff_t>;

// (x - min) / (max - min) over the entries other than `self_index`. The
// excluded entry is set to 0. When max == min every other entry is 1.
Tensor minmax_normalize(std::span<const double> row, std::optional<std::size_t> self_index = std::nullopt);

// Differentiable row-wise version of minmax_normalize.
Var minmax_normalize_rows(Var sim, SelfIndex self_index);
// Row-wise maximum ignoring the excluded entry; b x 1.
Var row_max(Var x, SelfIndex self_index);
// ln S(x_norm) for per-row parameters a, b, t (each b x 1 or 1 x 1). `a` is
// ignored for S2.
Var softstep_log_mask(SoftStepFamily family, Var x_norm, Var a, Var b, Var t);

// Learned masking block: produces (a0, b0, t) globally or per query point,
// reparameterizes (a, b) for S1 and adds ln(mask) to the raw similarities.
class SoftStep {
 public:
  SoftStep() = default;
  SoftStep(SoftStepConfig config, std::size_t embedding_dim);

  // Initial sigmoid outputs for (a0, b0, t).
  static constexpr double kInitA0 = 0.1;
  static constexpr double kInitB0 = 0.9;
  static constexpr double kInitT = 0.5;

  struct Result {
    Var scores;  // sim + ln(mask)
    Var a;       // effective bounds and transition, b x 1 or 1 x 1;
    Var b;       // invalid when the family is None
    Var t;
  };

  // `sim_norm` must already be min-max normalized. `self_index` lists the
  // excluded (diagonal) entry per row during training and is empty at
  // inference.
  Result apply(Var Z, Var sim, Var sim_norm, SelfIndex self_index) const;

  const SoftStepConfig& config() const { return config_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  // Global mode: raw (pre-sigmoid) parameters, shape 1 x 3.
  Parameter& global_raw() { return global_; }
  // Pointwise mode: 3 x d weight and length-3 bias of the affine head.
  Parameter& pointwise_weight() { return weight_; }
  Parameter& pointwise_bias() { return bias_; }

 private:
  SoftStepConfig config_{SoftStepFamily::None, ParamMode::Global, 1e-6, 1e-3};
  Parameter global_;
  Parameter weight_;
  Parameter bias_;
};

double logit(double p);

}  // namespace nona
