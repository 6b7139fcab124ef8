#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "nona/csv.hpp"
#include "nona/errors.hpp"
#include "nona/theory_checks.hpp"
#include "test_util.hpp"

using namespace nona;
using nona::testing::random_tensor;

TEST(Decomposition, ReferenceMatrices) {
  EXPECT_LE(mse_decomposition_gap(Tensor::vector({0, 1}), Tensor::matrix({{0, 1}, {1, 0}})), 1e-15);
  const Tensor p = Tensor::matrix({{0, 0.5, 0.5}, {0.25, 0, 0.75}, {1, 0, 0}});
  EXPECT_LE(mse_decomposition_gap(Tensor::vector({0.3, -1, 2}), p), 1e-14);
}

TEST(Decomposition, RejectsInvalidAttention) {
  const Tensor y = Tensor::vector({0, 1});
  EXPECT_THROW(mse_decomposition_gap(y, Tensor::matrix({{0.5, 0.5}, {1, 0}})), ContractError);
  EXPECT_THROW(mse_decomposition_gap(y, Tensor::matrix({{0, 0.9}, {1, 0}})), ContractError);
  EXPECT_THROW(mse_decomposition_gap(y, Tensor::matrix({{0, 1}, {1, 0}, {0, 0}})), ContractError);
  EXPECT_THROW(mse_decomposition_gap(Tensor::vector({0, 1, 2}), Tensor::matrix({{0, 1}, {1, 0}})), ContractError);
}

TEST(Triplet, ClosedFormReferenceCases) {
  // Bracketed anchor: budget split so the weighted differences cancel.
  auto a = triplet_optimum_closed_form({0.5, 0.3, 0.9, 0.6});
  EXPECT_NEAR(a.p_ij, 0.4, 1e-15);
  EXPECT_NEAR(a.p_ik, 0.2, 1e-15);
  // Both neighbors below: everything on the closer one.
  a = triplet_optimum_closed_form({0.5, 0.4, 0.2, 0.5});
  EXPECT_DOUBLE_EQ(a.p_ij, 0.5);
  EXPECT_DOUBLE_EQ(a.p_ik, 0.0);
  const double R = 0.9;
  a = triplet_optimum_closed_form({0.5, 0.65, 0.2, R});
  EXPECT_NEAR(a.p_ij, 2 * R / 3, 1e-14);
  EXPECT_NEAR(a.p_ik, R / 3, 1e-14);
  EXPECT_NEAR(triplet_objective({0.5, 0.65, 0.2, R}, a.p_ij), 0.0, 1e-28);
}

TEST(Triplet, BruteForceAgreesOnReferenceCases) {
  for (const TripletInstance inst : {TripletInstance{0.5, 0.3, 0.9, 0.6}, TripletInstance{0.5, 0.4, 0.2, 0.5},
                                     TripletInstance{0.1, 0.7, 0.4, 1.0}}) {
    const auto c = triplet_optimum_closed_form(inst);
    const auto b = triplet_optimum_bruteforce(inst, 1e-4);
    EXPECT_LE(std::abs(c.p_ij - b.p_ij), 1e-4);
    EXPECT_NEAR(c.p_ij + c.p_ik, inst.budget, 1e-15);
  }
}

TEST(Triplet, InvalidInstances) {
  EXPECT_THROW(validate(TripletInstance{0.5, 0.5, 0.2, 1.0}), ContractError);
  EXPECT_THROW(validate(TripletInstance{0.5, 0.1, 0.2, 0.0}), ContractError);
  EXPECT_THROW(triplet_optimum_bruteforce({0.5, 0.1, 0.9, 1.0}, 0.01), ContractError);
}

TEST(Simplex, ClosedFormReferenceCases) {
  const std::vector<double> n{0.1, 0.3, 0.9};
  auto p = simplex_optimum({0.5, n, 1.0});
  EXPECT_NEAR(p[0], 0.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3, 1e-15);
  EXPECT_NEAR(p[2], 1.0 / 3, 1e-15);
  EXPECT_NEAR(simplex_objective({0.5, n, 1.0}, p), 0.0, 1e-30);
  EXPECT_EQ(simplex_optimum({0.05, n, 0.7}), (std::vector<double>{0.7, 0, 0}));
  EXPECT_EQ(simplex_optimum({1.0, n, 0.7}), (std::vector<double>{0, 0, 0.7}));
}

TEST(Simplex, BruteForceNeverBeatsClosedForm) {
  const SimplexInstance inst{0.42, {-0.1, 0.2, 0.35, 0.8}, 0.8};
  const SimplexSearch s = simplex_optimum_bruteforce(inst, 200);
  EXPECT_LE(simplex_objective(inst, simplex_optimum(inst)), s.objective + 1e-15);
  double total = 0;
  for (double v : s.allocation) total += v;
  EXPECT_NEAR(total, 0.8, 1e-12);
}

TEST(Simplex, InvalidInstances) {
  EXPECT_THROW(validate(SimplexInstance{0.5, {0.1}, 1.0}), ContractError);
  EXPECT_THROW(validate(SimplexInstance{0.5, {0.3, 0.1}, 1.0}), ContractError);
  EXPECT_THROW(validate(SimplexInstance{0.3, {0.1, 0.3}, 1.0}), ContractError);
}

TEST(Suites, SmallRunsPassAndCoverBranches) {
  const SuiteReport d = run_decomposition_suite(1, 100, 16);
  EXPECT_TRUE(d.passed()) << d.worst;
  const SuiteReport t = run_triplet_suite(2, 500, 1e-4);
  EXPECT_TRUE(t.passed()) << t.worst;
  const SuiteReport s = run_simplex_suite(3, 50, 60);
  EXPECT_TRUE(s.passed()) << s.worst;
  for (const SuiteReport* r : {&t, &s}) {
    for (const auto& [name, count] : r->coverage) EXPECT_GT(count, 0u) << r->name << " " << name;
  }
}

TEST(Audit, RowsAreConsistent) {
  Rng rng(80);
  NonaHead head(SimilarityKind::NegL2, {SoftStepFamily::S2, ParamMode::Global, 1e-6, 1e-3}, 2);
  const Tensor Z = random_tensor({60, 2}, rng, -1, 1);
  Tensor y(Shape{60});
  for (std::size_t i = 0; i < 60; ++i) y[i] = Z(i, 0) + 0.5 * Z(i, 1);
  const TripletAudit audit = empirical_triplet_audit(head, Z, y, 25, 7);
  EXPECT_EQ(audit.rows.size() + audit.excluded, 25u);
  for (const AuditRow& r : audit.rows) {
    EXPECT_LT(r.y_j, r.y_i);
    EXPECT_GT(r.y_k, r.y_i);
    EXPECT_GT(r.p_ij, 0.0);
    EXPECT_GT(r.p_ik, 0.0);
    EXPECT_NEAR(r.deviation, std::log(r.p_ij / r.p_ik) - std::log((r.y_k - r.y_i) / (r.y_i - r.y_j)), 1e-12);
  }
  std::stringstream ss;
  write_audit_csv(ss, audit);
  EXPECT_EQ(read_csv(ss).rows.size(), audit.rows.size());
}

TEST(Audit, RequiresSoftStepHead) {
  const NonaHead head(SimilarityKind::NegL2, {SoftStepFamily::None, ParamMode::Global, 1e-6, 1e-3}, 2);
  Rng rng(81);
  EXPECT_THROW(empirical_triplet_audit(head, random_tensor({5, 2}, rng), random_tensor({5}, rng), 5, 1), ContractError);
}
