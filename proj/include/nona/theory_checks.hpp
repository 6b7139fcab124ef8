#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "nona/nona_head.hpp"
#include "nona/tensor.hpp"

namespace nona {

// |MSE of y_hat = p y against y  -  (1/N) sum_i (sum_j (y_i - y_j) p_ij)^2|.
// p must be square, row-stochastic within 1e-12, with an exactly zero
// diagonal.
double mse_decomposition_gap(const Tensor& y, const Tensor& p);

// Anchor label y_i with two neighbors j, k sharing an attention budget R:
//   T(p_ij) = (d_ij p_ij + d_ik (R - p_ij))^2,  d_ij = y_i - y_j.
struct TripletInstance {
  double y_i = 0.0;
  double y_j = 0.0;
  double y_k = 0.0;
  double budget = 1.0;  // R in (0, 1]
};

struct TripletAllocation {
  double p_ij = 0.0;
  double p_ik = 0.0;
};

void validate(const TripletInstance& inst);
double triplet_objective(const TripletInstance& inst, double p_ij);
// Unconstrained minimizer d_ik R / (d_ik - d_ij), clipped to [0, R].
TripletAllocation triplet_optimum_closed_form(const TripletInstance& inst);
// Exhaustive search over p_ij in {0, h, 2h, ..., R}; the first minimum wins.
TripletAllocation triplet_optimum_bruteforce(const TripletInstance& inst, double resolution);

// Anchor label y_i with M neighbors sorted by label, budget R on the scaled
// simplex: T(p) = (sum_m (y_i - y_m) p_m)^2.
struct SimplexInstance {
  double y_i = 0.0;
  std::vector<double> neighbors;  // strictly increasing, none equal to y_i
  double budget = 1.0;
};

void validate(const SimplexInstance& inst);
double simplex_objective(const SimplexInstance& inst, const std::vector<double>& p);
// All budget on the lowest (highest) neighbor when the anchor is below
// (above) every neighbor; otherwise split between the bracketing pair
// y_m < y_i < y_{m+1} as (lambda R, (1 - lambda) R) with
// lambda = d_{m+1} / (d_{m+1} - d_m).
std::vector<double> simplex_optimum(const SimplexInstance& inst);

struct SimplexSearch {
  std::vector<double> allocation;
  double objective = 0.0;
};

// Exhaustive search over allocations R c / K for integer compositions c of K.
SimplexSearch simplex_optimum_bruteforce(const SimplexInstance& inst, std::size_t K);

struct SuiteReport {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst = 0.0;      // largest observed deviation
  double tolerance = 0.0;
  std::vector<std::pair<std::string, std::size_t>> coverage;  // named branch counts
  bool passed() const { return failures == 0 && instances > 0; }
};

// Random row-stochastic matrices with zero diagonal, b in [2, max_b]; some
// rows are sparsified the way a hard mask would.
SuiteReport run_decomposition_suite(std::uint64_t seed, std::size_t instances = 1000, std::size_t max_b = 64);
// Random labels in [0, 1) and budgets in (0, 1]. Allocation must agree within
// one grid step and the objective within 1e-8.
SuiteReport run_triplet_suite(std::uint64_t seed, std::size_t instances = 10000, double resolution = 1e-4);
// Random instances with M alternating between 3 and 4. The closed-form
// objective must not exceed the brute-force minimum by more than 1e-6.
SuiteReport run_simplex_suite(std::uint64_t seed, std::size_t instances = 1000, std::size_t K = 200);

struct AuditRow {
  std::size_t anchor = 0;
  std::size_t j = 0;
  std::size_t k = 0;
  double y_i = 0.0;
  double y_j = 0.0;
  double y_k = 0.0;
  double p_ij = 0.0;
  double p_ik = 0.0;
  // log(p_ij / p_ik) - log((y_k - y_i) / (y_i - y_j))
  double deviation = 0.0;
};

struct TripletAudit {
  std::vector<AuditRow> rows;
  std::size_t excluded = 0;  // anchors without an attended neighbor on both sides
  double median_abs_deviation = 0.0;
};

// Diagnostic comparison of a head's attention with the proportional rule.
// Each sampled anchor attends to all other points of (Z, y); j and k are the
// most-attended neighbors with labels strictly below and above y_i. Only
// heads with a SoftStep mask are audited.
TripletAudit empirical_triplet_audit(const NonaHead& head, const Tensor& Z, const Tensor& y,
                                     std::size_t max_anchors, std::uint64_t seed);

void write_audit_csv(std::ostream& out, const TripletAudit& audit, const std::vector<std::string>& comments = {});

}  // namespace nona
