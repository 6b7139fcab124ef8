#include "nona/theory_checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "nona/csv.hpp"
#include "nona/errors.hpp"
#include "nona/rng.hpp"

namespace nona {

double mse_decomposition_gap(const Tensor& y, const Tensor& p) {
  if (p.rank() != 2 || p.rows() != p.cols()) throw ContractError("attention matrix must be square");
  if (y.rank() != 1 || y.size() != p.rows()) throw ContractError("one label per attention row");
  const std::size_t b = y.size();
  if (b == 0) throw ContractError("empty decomposition instance");
  for (std::size_t i = 0; i < b; ++i) {
    if (p(i, i) != 0.0) throw ContractError("attention diagonal must be zero");
    double s = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      if (!(p(i, j) >= 0.0)) throw ContractError("attention weights must be non-negative");
      s += p(i, j);
    }
    if (std::abs(s - 1.0) > 1e-12) throw ContractError("attention row " + std::to_string(i) + " does not sum to 1");
  }
  double standard = 0.0, decomposed = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double yhat = 0.0, cancel = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      yhat += p(i, j) * y[j];
      cancel += (y[i] - y[j]) * p(i, j);
    }
    standard += (y[i] - yhat) * (y[i] - yhat);
    decomposed += cancel * cancel;
  }
  return std::abs(standard - decomposed) / static_cast<double>(b);
}

void validate(const TripletInstance& inst) {
  if (inst.y_i == inst.y_j || inst.y_i == inst.y_k || inst.y_j == inst.y_k) {
    throw ContractError("triplet labels must be pairwise distinct");
  }
  if (!(inst.budget > 0.0 && inst.budget <= 1.0)) throw ContractError("triplet budget must lie in (0, 1]");
}

double triplet_objective(const TripletInstance& inst, double p_ij) {
  const double v = (inst.y_i - inst.y_j) * p_ij + (inst.y_i - inst.y_k) * (inst.budget - p_ij);
  return v * v;
}

TripletAllocation triplet_optimum_closed_form(const TripletInstance& inst) {
  validate(inst);
  const double d_ij = inst.y_i - inst.y_j;
  const double d_ik = inst.y_i - inst.y_k;
  const double p = std::clamp(d_ik * inst.budget / (d_ik - d_ij), 0.0, inst.budget);
  return {p, inst.budget - p};
}

TripletAllocation triplet_optimum_bruteforce(const TripletInstance& inst, double resolution) {
  validate(inst);
  if (!(resolution > 0.0 && resolution <= 1e-3)) throw ContractError("grid resolution must lie in (0, 1e-3]");
  const auto steps = static_cast<std::size_t>(std::ceil(inst.budget / resolution));
  double best_p = 0.0, best_t = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m <= steps; ++m) {
    const double p = std::min(static_cast<double>(m) * resolution, inst.budget);
    const double t = triplet_objective(inst, p);
    if (t < best_t) {
      best_t = t;
      best_p = p;
    }
  }
  return {best_p, inst.budget - best_p};
}

void validate(const SimplexInstance& inst) {
  if (inst.neighbors.size() < 2) throw ContractError("simplex instance needs at least 2 neighbors");
  for (std::size_t m = 0; m < inst.neighbors.size(); ++m) {
    if (inst.neighbors[m] == inst.y_i) throw ContractError("neighbor labels must differ from the anchor label");
    if (m > 0 && !(inst.neighbors[m - 1] < inst.neighbors[m])) {
      throw ContractError("neighbor labels must be strictly increasing");
    }
  }
  if (!(inst.budget > 0.0 && inst.budget <= 1.0)) throw ContractError("simplex budget must lie in (0, 1]");
}

double simplex_objective(const SimplexInstance& inst, const std::vector<double>& p) {
  if (p.size() != inst.neighbors.size()) throw ContractError("allocation length must match the neighbor count");
  double v = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) v += (inst.y_i - inst.neighbors[m]) * p[m];
  return v * v;
}

std::vector<double> simplex_optimum(const SimplexInstance& inst) {
  validate(inst);
  const std::size_t M = inst.neighbors.size();
  std::vector<double> p(M, 0.0);
  if (inst.y_i < inst.neighbors.front()) {
    p.front() = inst.budget;
    return p;
  }
  if (inst.y_i > inst.neighbors.back()) {
    p.back() = inst.budget;
    return p;
  }
  // Bracketing pair y_m < y_i < y_{m+1}, 0-based.
  std::size_t m = 0;
  while (!(inst.neighbors[m] < inst.y_i && inst.y_i < inst.neighbors[m + 1])) ++m;
  const double d_lo = inst.y_i - inst.neighbors[m];
  const double d_hi = inst.y_i - inst.neighbors[m + 1];
  const double lambda = d_hi / (d_hi - d_lo);
  p[m] = lambda * inst.budget;
  p[m + 1] = (1.0 - lambda) * inst.budget;
  return p;
}

namespace {

// Visits every composition of `remaining` into the parts c[pos..].
template <class Visit>
void compositions(std::vector<std::size_t>& c, std::size_t pos, std::size_t remaining, Visit& visit) {
  if (pos + 1 == c.size()) {
    c[pos] = remaining;
    visit(c);
    return;
  }
  for (std::size_t v = 0; v <= remaining; ++v) {
    c[pos] = v;
    compositions(c, pos + 1, remaining - v, visit);
  }
}

}  // namespace

SimplexSearch simplex_optimum_bruteforce(const SimplexInstance& inst, std::size_t K) {
  validate(inst);
  if (K == 0) throw ContractError("simplex grid needs K >= 1");
  const std::size_t M = inst.neighbors.size();
  std::vector<double> coef(M);
  for (std::size_t m = 0; m < M; ++m) coef[m] = (inst.y_i - inst.neighbors[m]) * inst.budget / static_cast<double>(K);

  SimplexSearch best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> c(M, 0);
  auto visit = [&](const std::vector<std::size_t>& comp) {
    double v = 0.0;
    for (std::size_t m = 0; m < M; ++m) v += coef[m] * static_cast<double>(comp[m]);
    if (v * v < best.objective) {
      best.objective = v * v;
      best.allocation.assign(M, 0.0);
      for (std::size_t m = 0; m < M; ++m) {
        best.allocation[m] = inst.budget * static_cast<double>(comp[m]) / static_cast<double>(K);
      }
    }
  };
  compositions(c, 0, K, visit);
  return best;
}

SuiteReport run_decomposition_suite(std::uint64_t seed, std::size_t instances, std::size_t max_b) {
  if (max_b < 2) throw ContractError("decomposition suite needs max_b >= 2");
  SuiteReport report{"mse_decomposition", 0, 0, 0.0, 1e-10, {}};
  Rng rng(seed);
  std::size_t sparse = 0;
  for (std::size_t n = 0; n < instances; ++n) {
    const std::size_t b = 2 + static_cast<std::size_t>(rng.below(max_b - 1));
    const bool sparsify = rng.uniform() < 0.5;
    sparse += sparsify;
    Tensor y(Shape{b});
    for (std::size_t i = 0; i < b; ++i) y[i] = rng.uniform(-3.0, 3.0);
    Tensor p(Shape{b, b});
    for (std::size_t i = 0; i < b; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < b; ++j) {
        if (j == i) continue;
        double w = rng.uniform();
        if (sparsify && rng.uniform() < 0.7) w = 0.0;
        p(i, j) = w;
        s += w;
      }
      if (s == 0.0) {
        const std::size_t j = (i + 1) % b;
        p(i, j) = 1.0;
        s = 1.0;
      }
      for (std::size_t j = 0; j < b; ++j) p(i, j) /= s;
    }
    const double gap = mse_decomposition_gap(y, p);
    report.worst = std::max(report.worst, gap);
    report.failures += !(gap <= report.tolerance);
    ++report.instances;
  }
  report.coverage = {{"dense_rows", instances - sparse}, {"sparse_rows", sparse}};
  return report;
}

SuiteReport run_triplet_suite(std::uint64_t seed, std::size_t instances, double resolution) {
  SuiteReport report{"triplet_optimum", 0, 0, 0.0, resolution, {}};
  Rng rng(seed);
  std::size_t extreme = 0, intermediate = 0;
  for (std::size_t n = 0; n < instances; ++n) {
    TripletInstance inst;
    do {
      inst.y_i = rng.uniform();
      inst.y_j = rng.uniform();
      inst.y_k = rng.uniform();
    } while (inst.y_i == inst.y_j || inst.y_i == inst.y_k || inst.y_j == inst.y_k);
    inst.budget = 1.0 - rng.uniform();  // (0, 1]
    const bool between = (inst.y_j < inst.y_i) != (inst.y_k < inst.y_i);
    (between ? intermediate : extreme)++;

    const TripletAllocation closed = triplet_optimum_closed_form(inst);
    const TripletAllocation brute = triplet_optimum_bruteforce(inst, resolution);
    const double dp = std::abs(closed.p_ij - brute.p_ij);
    const double dt = triplet_objective(inst, brute.p_ij) - triplet_objective(inst, closed.p_ij);
    report.worst = std::max(report.worst, dp);
    report.failures += !(dp <= resolution && std::abs(dt) <= 1e-8);
    ++report.instances;
  }
  report.coverage = {{"extreme_anchor", extreme}, {"intermediate_anchor", intermediate}};
  return report;
}

SuiteReport run_simplex_suite(std::uint64_t seed, std::size_t instances, std::size_t K) {
  SuiteReport report{"simplex_optimum", 0, 0, 0.0, 1e-6, {}};
  Rng rng(seed);
  std::size_t below = 0, above = 0, between = 0;
  for (std::size_t n = 0; n < instances; ++n) {
    SimplexInstance inst;
    const std::size_t M = 3 + n % 2;
    do {
      inst.neighbors.clear();
      for (std::size_t m = 0; m < M; ++m) inst.neighbors.push_back(rng.uniform());
      std::sort(inst.neighbors.begin(), inst.neighbors.end());
      inst.y_i = rng.uniform(-0.25, 1.25);
    } while (std::adjacent_find(inst.neighbors.begin(), inst.neighbors.end()) != inst.neighbors.end() ||
             std::find(inst.neighbors.begin(), inst.neighbors.end(), inst.y_i) != inst.neighbors.end());
    inst.budget = 1.0 - rng.uniform();
    if (inst.y_i < inst.neighbors.front()) ++below;
    else if (inst.y_i > inst.neighbors.back()) ++above;
    else ++between;

    const double closed = simplex_objective(inst, simplex_optimum(inst));
    const SimplexSearch brute = simplex_optimum_bruteforce(inst, K);
    const double excess = closed - brute.objective;
    report.worst = std::max(report.worst, excess);
    report.failures += !(excess <= report.tolerance);
    ++report.instances;
  }
  report.coverage = {{"below_all", below}, {"above_all", above}, {"bracketed", between}};
  return report;
}

TripletAudit empirical_triplet_audit(const NonaHead& head, const Tensor& Z, const Tensor& y, std::size_t max_anchors,
                                     std::uint64_t seed) {
  if (head.softstep().config().family == SoftStepFamily::None) {
    throw ContractError("the triplet audit applies only to heads with a SoftStep mask");
  }
  if (Z.rank() != 2 || y.rank() != 1 || y.size() != Z.rows()) throw ContractError("audit needs Z: N x d and y: N");
  const std::size_t n = Z.rows();
  if (n < 3) throw ContractError("audit needs at least 3 points");

  Rng rng(seed);
  std::vector<std::size_t> anchors = rng.permutation(n);
  anchors.resize(std::min(max_anchors, n));
  std::sort(anchors.begin(), anchors.end());

  Tape tape(false);
  std::vector<std::ptrdiff_t> self(anchors.begin(), anchors.end());
  const auto out = head.attend(tape.constant(Z.gather_rows(anchors)), tape.constant(Z), tape.constant(y), self);
  const Tensor& att = out.attention.value();

  TripletAudit audit;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const std::size_t i = anchors[a];
    std::ptrdiff_t j = -1, k = -1;
    for (std::size_t c = 0; c < n; ++c) {
      const double p = att(a, c);
      if (c == i || p <= 0.0) continue;
      if (y[c] < y[i] && (j < 0 || p > att(a, static_cast<std::size_t>(j)))) j = static_cast<std::ptrdiff_t>(c);
      if (y[c] > y[i] && (k < 0 || p > att(a, static_cast<std::size_t>(k)))) k = static_cast<std::ptrdiff_t>(c);
    }
    if (j < 0 || k < 0) {
      ++audit.excluded;
      continue;
    }
    AuditRow row;
    row.anchor = i;
    row.j = static_cast<std::size_t>(j);
    row.k = static_cast<std::size_t>(k);
    row.y_i = y[i];
    row.y_j = y[row.j];
    row.y_k = y[row.k];
    row.p_ij = att(a, row.j);
    row.p_ik = att(a, row.k);
    row.deviation = std::log(row.p_ij / row.p_ik) - std::log((row.y_k - row.y_i) / (row.y_i - row.y_j));
    audit.rows.push_back(row);
  }
  if (!audit.rows.empty()) {
    std::vector<double> dev;
    for (const auto& r : audit.rows) dev.push_back(std::abs(r.deviation));
    std::sort(dev.begin(), dev.end());
    const std::size_t h = dev.size() / 2;
    audit.median_abs_deviation = dev.size() % 2 ? dev[h] : 0.5 * (dev[h - 1] + dev[h]);
  }
  return audit;
}

void write_audit_csv(std::ostream& out, const TripletAudit& audit, const std::vector<std::string>& comments) {
  std::vector<std::string> meta = comments;
  meta.push_back("excluded_anchors=" + std::to_string(audit.excluded));
  meta.push_back("median_abs_deviation=" + format_double(audit.median_abs_deviation));
  CsvWriter csv(out, {"anchor", "j", "k", "y_i", "y_j", "y_k", "p_ij", "p_ik", "deviation"}, meta);
  for (const AuditRow& r : audit.rows) {
    const double row[] = {static_cast<double>(r.anchor), static_cast<double>(r.j), static_cast<double>(r.k), r.y_i, r.y_j,
                          r.y_k, r.p_ij, r.p_ik, r.deviation};
    csv.row(row);
  }
}

}  // namespace nona
