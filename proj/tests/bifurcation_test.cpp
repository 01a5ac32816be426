#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "onsager/bifurcation.hpp"

using namespace onsager;

namespace {

const KernelSpec& onsager3() {
  static const KernelSpec spec = build_kernel_spec(3, 64, KernelSource::onsager_recurrence);
  return spec;
}

double lambda1() { return 32.0 / pi; }

SolutionReport trivial_report(int modes, double lambda) {
  SolutionReport r;
  r.state = AxisymState::zero(3, modes);
  r.lambda = lambda;
  r.converged = true;
  return r;
}

}  // namespace

TEST(CriticalValues, ClosedForms) {
  const auto c3 = critical_values(onsager3());
  EXPECT_NEAR(c3[0], 32 / pi, 1e-6);
  EXPECT_NEAR(c3[1] / c3[0], 8.0, 1e-9);
  const auto c4 = critical_values(build_kernel_spec(4, 4, KernelSource::onsager_quadrature));
  EXPECT_NEAR(c4[0], 45 * pi / 8, 1e-6);
}

TEST(CriticalValues, Monotone) {
  for (int dim : {3, 4, 5}) {
    const auto c = critical_values(build_kernel_spec(dim, 40, KernelSource::onsager_recurrence));
    for (std::size_t i = 1; i < c.size(); ++i) EXPECT_GT(c[i], c[i - 1]);
  }
}

TEST(CriticalValues, UndefinedForNonpositiveCoefficient) {
  const auto spec = build_kernel_spec(3, 3, KernelSource::custom, std::vector<double>{1.0, 0.0, 0.5});
  try {
    critical_values(spec);
    FAIL();
  } catch (const IndexedError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::undefined_critical_value);
    EXPECT_EQ(e.index(), 2);
  }
}

TEST(Thresholds, Onsager) {
  const auto t = uniqueness_thresholds(onsager3());
  EXPECT_NEAR(t.lambda_tilde0, 4 / (5 * pi), 1e-8);
  EXPECT_LT(t.lambda_tilde0, t.lambda_0_lower);
  EXPECT_LT(t.lambda_0_lower, t.lambda_0_upper);
  EXPECT_LT(t.lambda_0_upper, t.lambda_crit[0]);
  // the full sum of k_m equals K-bar since the kernel vanishes at gamma = 0
  EXPECT_LE(t.lambda_0_lower, 4 / pi);
  EXPECT_GE(t.lambda_0_upper, 4 / pi);
  const double total = t.partial_sum + t.tail_bound;
  EXPECT_NEAR(t.lambda_contraction * std::exp(4 * t.lambda_contraction) * total, 0.5, 1e-12);
  EXPECT_GT(t.lambda_contraction, 0.0);
}

TEST(Thresholds, SingleCoefficient) {
  const auto spec = build_kernel_spec(3, 1, KernelSource::custom, std::vector<double>{1.0});
  const auto t = uniqueness_thresholds(spec);
  EXPECT_DOUBLE_EQ(t.lambda_0_lower, 1.0);
  EXPECT_DOUBLE_EQ(t.lambda_0_upper, 1.0);
}

TEST(Thresholds, Undefined) {
  const auto zero = build_kernel_spec(3, 2, KernelSource::custom, std::vector<double>{0.0, 0.0});
  try {
    uniqueness_thresholds(zero);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::threshold_undefined);
  }
}

TEST(Index, TrivialSolution) {
  EXPECT_EQ(index_of(trivial_report(8, 5.0), onsager3(), 5.0), 1);
  EXPECT_EQ(index_of(trivial_report(8, 15.0), onsager3(), 15.0), -1);
  try {
    index_of(trivial_report(8, lambda1()), onsager3(), lambda1());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_index);
  }
}

TEST(Index, TrivialFactorization) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(0.1, 400.0);
  const int modes = 8;
  const auto crit = critical_values(onsager3());
  int checked = 0;
  while (checked < 50) {
    const double lambda = dist(rng);
    bool near = false;
    for (double c : crit) near = near || std::abs(lambda - c) < 1e-3 * c;
    if (near) continue;
    int expected = 1;
    for (int n = 1; n <= modes; ++n) {
      if (1 - lambda * onsager3().k(n) / static_cast<double>(harmonic_count(3, 2 * n)) < 0) expected = -expected;
    }
    EXPECT_EQ(index_of(trivial_report(modes, lambda), onsager3(), lambda), expected) << lambda;
    ++checked;
  }
}

TEST(Index, FlipsAcrossCriticalValues) {
  const auto crit = critical_values(onsager3());
  for (int n = 1; n <= 3; ++n) {
    const double eps = 1e-3 * crit[n - 1];
    const double lo = crit[n - 1] - eps, hi = crit[n - 1] + eps;
    EXPECT_EQ(index_of(trivial_report(8, lo), onsager3(), lo) * index_of(trivial_report(8, hi), onsager3(), hi), -1);
  }
}

TEST(Index, NontrivialBranchesBetweenCriticalValues) {
  for (const auto& s : multistart(onsager3(), 15.0, 50, 0, 16)) {
    const int expected = s.state.l2_norm() < 1e-8 ? -1 : 1;
    EXPECT_EQ(index_of(s, onsager3(), 15.0), expected);
  }
}

TEST(DegreeAudit, BelowFirstCriticalValue) {
  for (double lambda : {0.01, 5.0}) {
    const auto r = degree_audit(onsager3(), lambda, 50, 0, {8, 12, 16});
    EXPECT_EQ(r.degree_sum, 1);
    EXPECT_EQ(r.solutions.size(), 1u);
    EXPECT_TRUE(r.stable_across_truncations);
    EXPECT_TRUE(r.equals_one);
    EXPECT_EQ(r.truncations_checked, (std::vector<int>{8, 12, 16}));
  }
}

TEST(DegreeAudit, BetweenCriticalValues) {
  const auto r = degree_audit(onsager3(), 15.0, 50, 0, {8, 12, 16});
  EXPECT_EQ(r.solutions.size(), 3u);
  EXPECT_EQ(r.degree_sums, (std::vector<int>{1, 1, 1}));
  EXPECT_EQ(r.solution_counts, (std::vector<int>{3, 3, 3}));
  int trivial_index = 0;
  for (const auto& s : r.solutions) {
    if (s.state.l2_norm() < 1e-8) trivial_index = *s.index;
  }
  EXPECT_EQ(trivial_index, -1);
}

TEST(DegreeAudit, RejectsCriticalLambda) {
  EXPECT_THROW(degree_audit(onsager3(), lambda1() * (1 + 1e-8), 5, 0, {4}), Error);
  EXPECT_THROW(degree_audit(onsager3(), 5.0, 5, 0, {}), Error);
}

TEST(DegreeAudit, DegreeOneBetweenFoldAndCriticalValue) {
  // three solutions already exist below lambda_1 (index +1, -1, +1)
  const auto r = degree_audit(onsager3(), 0.93 * lambda1(), 50, 0, {8, 16});
  EXPECT_EQ(r.solutions.size(), 3u);
  EXPECT_TRUE(r.equals_one);
}

TEST(Uniqueness, RandomLambdaBelowThreshold) {
  const auto t = uniqueness_thresholds(onsager3());
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(0.0, t.lambda_0_lower);
  const ZonalOperator op(onsager3(), 8);
  for (int trial = 0; trial < 20; ++trial) {
    const double lambda = dist(rng);
    const auto sols = multistart(op, lambda, 50, trial);
    ASSERT_EQ(sols.size(), 1u) << lambda;
    EXPECT_LE(sols[0].state.l2_norm(), 1e-9);
    EXPECT_LE(sols[0].sup_norm_u, lambda * onsager3().sup_norm_khat + 1e-8);
  }
}

TEST(Trace, FirstModeBranches) {
  TraceOptions opts;
  const auto branches = trace_branch(onsager3(), 1, 1.5 * lambda1(), 10, opts);
  ASSERT_EQ(branches.size(), 2u);
  int signs = 0;
  for (const auto& b : branches) {
    EXPECT_EQ(b.mode, 1);
    EXPECT_NEAR(b.origin, lambda1(), 1e-9);
    ASSERT_EQ(b.ladder.size(), 3u);
    double prev = INFINITY;
    for (std::size_t i : b.ladder) {
      const auto& st = b.points[i].report.state;
      const double amp = st.l2_norm();
      EXPECT_LT(amp, prev);
      prev = amp;
      EXPECT_GE(std::abs(st.coeff(1)) / std::sqrt(5.0) / amp, 0.9);
      EXPECT_EQ(st.coeff(1) > 0 ? 1 : -1, b.seed_sign);
    }
    for (const auto& p : b.points) {
      EXPECT_TRUE(p.report.converged);
      EXPECT_LE(p.report.residual_norm, opts.solve.tol);
    }
    EXPECT_DOUBLE_EQ(b.points.back().lambda, 1.5 * lambda1());
    signs += b.seed_sign;
  }
  EXPECT_EQ(signs, 0);
  // transcritical: the arms leave lambda_1 on opposite sides
  EXPECT_EQ(branches[0].side, -branches[1].side);
}

TEST(Trace, ZeroKernelHasNoBranch) {
  const auto zero = build_kernel_spec(3, 4, KernelSource::custom, std::vector<double>(4, 0.0));
  TraceOptions opts;
  opts.modes = 4;
  try {
    trace_branch(zero, 1, 10.0, 5, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::branch_not_found);
  }
}

TEST(Stability, IsotropicAndFirstBranch) {
  EXPECT_EQ(classify_stability(trivial_report(8, 0.5 * lambda1()), onsager3()).label, Stability::stable);
  EXPECT_EQ(classify_stability(trivial_report(8, 15.0), onsager3()).label, Stability::unstable);

  const double lambda = 1.05 * lambda1();
  for (const auto& s : multistart(onsager3(), lambda, 30, 0, 16)) {
    if (s.state.l2_norm() < 1e-8) continue;
    // both first-mode solutions above lambda_1 carry index +1 and are stable
    EXPECT_EQ(classify_stability(s, onsager3()).label, Stability::stable) << s.state.coeff(1);
  }
}

TEST(Stability, SmallArmBelowCriticalValueIsUnstable) {
  const double lambda = 0.95 * lambda1();
  const auto rep = solve(onsager3(), lambda, AxisymState::single_mode(3, 16, 1, -0.4));
  ASSERT_TRUE(rep.converged);
  ASSERT_NEAR(rep.state.coeff(1), -0.392, 1e-3);
  EXPECT_EQ(rep.index, -1);
  EXPECT_EQ(classify_stability(rep, onsager3()).label, Stability::unstable);
}

TEST(Trace, SamplesEveryCrossingOfTheFold) {
  TraceOptions opts;
  opts.sample_at = {0.95 * lambda1(), 1.1 * lambda1()};
  const auto branches = trace_branch(onsager3(), 1, 1.5 * lambda1(), 20, opts);
  int below = 0, above = 0;
  for (const auto& b : branches) {
    for (const auto& p : b.samples) {
      EXPECT_TRUE(p.report.converged);
      (p.lambda < lambda1() ? below : above) += 1;
    }
  }
  // prolate arm twice below lambda_1 (before and after the fold); both arms once above
  EXPECT_EQ(below, 2);
  EXPECT_EQ(above, 2);
}

TEST(Trace, SecondModeFoldsBelowSecondCriticalValue) {
  const auto crit = critical_values(onsager3());
  const double lambda = 7.75 * crit[0];
  ASSERT_LT(lambda, crit[1]);
  TraceOptions opts;
  opts.sample_at = {lambda};
  std::vector<SolutionReport> found;
  for (const auto& b : trace_branch(onsager3(), 2, 1.05 * crit[1], 40, opts)) {
    for (const auto& p : b.samples) found.push_back(p.report);
  }
  ASSERT_EQ(found.size(), 2u);
  int index_sum = 0;
  for (const auto& s : found) {
    const auto finer = solve(onsager3(), lambda, s.state.resized(24));
    ASSERT_TRUE(finer.converged);
    EXPECT_LE(l2_distance(finer.state, s.state), 1e-5);
    EXPECT_LT(s.state.coeff(2), 0.0);
    index_sum += *s.index;
  }
  EXPECT_EQ(index_sum, 0);
  // with u = 0 (-1) and the two first-mode branches (+1 each) the degree stays +1
  auto all = multistart(onsager3(), lambda, 50, 0, 16);
  for (const auto& s : found) {
    bool seen = false;
    for (const auto& m : all) seen = seen || l2_distance(m.state, s.state) < 1e-6;
    if (!seen) all.push_back(s);
  }
  EXPECT_EQ(all.size(), 5u);
  int degree = 0;
  for (const auto& s : all) degree += *s.index;
  EXPECT_EQ(degree, 1);
}
