#pragma once

// Critical concentrations, uniqueness thresholds, solution indices, degree
// audits, branch continuation and stability labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "onsager/dynamics.hpp"
#include "onsager/errors.hpp"
#include "onsager/kernel.hpp"
#include "onsager/solver.hpp"

namespace onsager {

/// lambda_n = N(D, 2n) / k_n for n = 1..n_max.
inline std::vector<double> critical_values(const KernelSpec& spec) {
  std::vector<double> out;
  out.reserve(spec.coeffs.size());
  for (int n = 1; n <= spec.n_max; ++n) {
    const double k = spec.k(n);
    if (!(k > 0.0)) {
      throw IndexedError(ErrorKind::undefined_critical_value,
                         "critical value undefined: k_" + std::to_string(n) + " <= 0", n);
    }
    out.push_back(static_cast<double>(harmonic_count(spec.dim, 2 * n)) / k);
  }
  return out;
}

struct ThresholdReport {
  /// (1/5) / ||K-hat||_inf
  double lambda_tilde0 = 0.0;
  /// 1/(S + tail) <= lambda_0 <= 1/S with S the partial sum of k_n.
  double lambda_0_lower = 0.0;
  double lambda_0_upper = 0.0;
  double partial_sum = 0.0;
  double tail_bound = 0.0;
  /// Largest lambda with lambda e^{4 lambda ||K||_inf} sum k_m < 1/2 (sum bounded above by S + tail).
  double lambda_contraction = 0.0;
  std::vector<double> lambda_crit;
};

inline ThresholdReport uniqueness_thresholds(const KernelSpec& spec) {
  ThresholdReport r;
  double s = 0.0;
  for (double k : spec.coeffs) s += k;
  r.partial_sum = s;
  r.tail_bound = coefficient_tail_bound(spec);
  if (!std::isfinite(s) || !std::isfinite(r.tail_bound) || !(s > 0.0)) {
    throw Error(ErrorKind::threshold_undefined,
                "coefficient sum is not a finite positive number; lambda_0 undefined");
  }
  if (!(spec.sup_norm_khat > 0.0)) {
    throw Error(ErrorKind::threshold_undefined, "||K-hat||_inf is zero; lambda_tilde0 undefined");
  }
  r.lambda_tilde0 = 0.2 / spec.sup_norm_khat;
  r.lambda_0_upper = 1.0 / s;
  r.lambda_0_lower = 1.0 / (s + r.tail_bound);

  const double total = s + r.tail_bound;
  const double knorm = kernel_sup_norm(spec);
  auto phi = [&](double lam) { return lam * std::exp(4.0 * lam * knorm) * total - 0.5; };
  double lo = 0.0, hi = 0.5 / total;  // phi(hi) >= 0
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi(mid) < 0.0 ? lo : hi) = mid;
  }
  r.lambda_contraction = lo;
  r.lambda_crit = critical_values(spec);
  return r;
}

/// sign det(I - J) at a converged solution; degenerate_index error when I - J
/// is numerically singular.
inline int index_of(const SolutionReport& report, const KernelSpec& spec, double lambda,
                    int quadrature_order = default_quadrature_order) {
  if (!report.converged) throw Error(ErrorKind::argument, "index requires a converged solution");
  const ZonalOperator op(spec, report.state.modes(), quadrature_order);
  const Linearization lin = op.linearization(report.state.coeffs(), lambda);
  if (lin.rcond < degenerate_index_threshold) {
    throw Error(ErrorKind::degenerate_index,
                "degenerate linearization (rcond " + std::to_string(lin.rcond) +
                    "); lambda is too close to a critical value");
  }
  return lin.sign;
}

class InconclusiveAuditError : public Error {
 public:
  InconclusiveAuditError(const std::string& what, int truncation, std::vector<SolutionReport> first,
                         std::vector<SolutionReport> second)
      : Error(ErrorKind::inconclusive_audit, what),
        truncation_(truncation),
        first_(std::move(first)),
        second_(std::move(second)) {}

  int truncation() const noexcept { return truncation_; }
  const std::vector<SolutionReport>& first_census() const noexcept { return first_; }
  const std::vector<SolutionReport>& second_census() const noexcept { return second_; }

 private:
  int truncation_;
  std::vector<SolutionReport> first_;
  std::vector<SolutionReport> second_;
};

struct DegreeReport {
  double lambda = 0.0;
  /// Census at the last truncation checked, sorted, each with a known index.
  std::vector<SolutionReport> solutions;
  int degree_sum = 0;
  std::vector<int> truncations_checked;
  std::vector<int> degree_sums;
  std::vector<int> solution_counts;
  bool stable_across_truncations = false;
  bool equals_one = false;
};

/// Index sum over multistart censuses at each truncation. Each census is run
/// with two seeds (seed, seed + 1) and the solution counts must agree.
inline DegreeReport degree_audit(const KernelSpec& spec, double lambda, int n_starts,
                                 std::uint64_t seed, const std::vector<int>& truncations,
                                 const SolveOptions& options = {}) {
  if (truncations.empty()) throw Error(ErrorKind::argument, "no truncations to audit");
  for (int n = 1; n <= spec.n_max; ++n) {
    const double k = spec.k(n);
    if (k <= 0.0) continue;
    const double crit = static_cast<double>(harmonic_count(spec.dim, 2 * n)) / k;
    if (std::abs(lambda - crit) <= 1e-6 * crit) {
      throw Error(ErrorKind::degenerate_index,
                  "lambda within 1e-6 of critical value lambda_" + std::to_string(n));
    }
  }

  DegreeReport report;
  report.lambda = lambda;
  for (int modes : truncations) {
    const ZonalOperator op(spec, modes, options.quadrature_order);
    std::vector<SolutionReport> first = multistart(op, lambda, n_starts, seed, options);
    std::vector<SolutionReport> second = multistart(op, lambda, n_starts, seed + 1, options);
    if (first.size() != second.size()) {
      throw InconclusiveAuditError("census differs between seeds at N = " + std::to_string(modes) +
                                       " (" + std::to_string(first.size()) + " vs " +
                                       std::to_string(second.size()) + " solutions)",
                                   modes, std::move(first), std::move(second));
    }
    int sum = 0;
    for (SolutionReport& s : first) {
      if (!s.index) {
        throw Error(ErrorKind::degenerate_index,
                    "degenerate solution in census at N = " + std::to_string(modes));
      }
      sum += *s.index;
    }
    report.truncations_checked.push_back(modes);
    report.degree_sums.push_back(sum);
    report.solution_counts.push_back(static_cast<int>(first.size()));
    report.solutions = std::move(first);
    report.degree_sum = sum;
  }
  report.stable_across_truncations =
      std::all_of(report.degree_sums.begin(), report.degree_sums.end(),
                  [&](int s) { return s == report.degree_sums.front(); });
  report.equals_one = report.stable_across_truncations && report.degree_sum == 1;
  return report;
}

enum class Stability { stable, unstable };

inline const char* to_string(Stability s) { return s == Stability::stable ? "stable" : "unstable"; }

struct StabilityReport {
  Stability label = Stability::stable;
  double max_rate = 0.0;
  std::vector<double> rates;
};

struct StabilityOptions {
  int grid_points = 128;
  ProbeOptions probe;
};

/// Stability under the axisymmetric Doi flow: linear probes around the grid's
/// discrete steady state next to `point`.
inline StabilityReport classify_stability(const SolutionReport& point, const KernelSpec& spec,
                                          const StabilityOptions& options = {}) {
  if (!point.converged) throw Error(ErrorKind::argument, "stability needs a converged point");
  const DoiFlow flow(spec, point.lambda, make_grid(spec.dim, options.grid_points), point.state.modes());
  const SolutionReport grid_state = grid_steady_state(flow, point.state);
  if (!grid_state.converged || l2_distance(grid_state.state, point.state) > 1e-6) {
    throw Error(ErrorKind::accuracy, "grid steady state does not match the solution; refine the grid");
  }
  const ProbeResult probe = linear_probe(flow, flow.density_of(grid_state.state), options.probe);
  if (std::abs(probe.max_rate) < 1e-8) {
    throw Error(ErrorKind::marginal_stability,
                "stability probe inconclusive: largest rate " + std::to_string(probe.max_rate));
  }
  StabilityReport r;
  r.label = probe.stable ? Stability::stable : Stability::unstable;
  r.max_rate = probe.max_rate;
  r.rates = probe.rates;
  return r;
}

struct BranchPoint {
  double lambda = 0.0;
  SolutionReport report;
  std::optional<Stability> stability;
};

struct Branch {
  int mode = 1;
  /// lambda_n
  double origin = 0.0;
  /// Sign of the seed amplitude along P_{2n}.
  int seed_sign = 1;
  /// +1 if the branch leaves lambda_n towards larger lambda, -1 otherwise.
  int side = 1;
  /// Points in path order, starting next to the bifurcation point.
  std::vector<BranchPoint> points;
  /// Relative offsets eps of the three points at lambda_n (1 + side eps).
  std::vector<double> ladder_eps;
  /// Indices into `points` of those three points, for eps = 2 eps0, eps0, eps0/2.
  std::vector<std::size_t> ladder;
  /// Fixed-lambda solutions wherever the path crosses a TraceOptions::sample_at value, in path order.
  std::vector<BranchPoint> samples;
};

struct TraceOptions {
  int modes = 16;
  /// Seed amplitude along P_{2n}.
  double delta = 1e-2;
  double eps0 = 5e-2;
  int max_halvings = 6;
  bool classify = false;
  /// Extra lambda values to re-solve at every crossing of the continuation path.
  std::vector<double> sample_at;
  StabilityOptions stability;
  SolveOptions solve;
};

namespace detail {

struct PathPoint {
  Eigen::VectorXd u;
  double lambda;
};

/// Solves A(u, lambda) = 0 with u_n pinned to `amplitude`; unknowns are the
/// other coefficients and lambda.
inline std::optional<PathPoint> pinned_solve(const ZonalOperator& op, int n, double amplitude,
                                             double lambda0, double tol) {
  const int modes = op.modes();
  Eigen::VectorXd u = Eigen::VectorXd::Zero(modes);
  u[n - 1] = amplitude;
  double lambda = lambda0;
  for (int iter = 0; iter < 60; ++iter) {
    const Eigen::VectorXd r = op.residual(u, lambda);
    if (zonal_l2_norm(op.dim(), r) <= tol) return PathPoint{u, lambda};
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(modes, modes) - op.jacobian(u, lambda);
    m.col(n - 1) = -op.apply_G(u, 1.0);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    if (!(lu.rcond() > 1e-15)) return std::nullopt;
    const Eigen::VectorXd d = lu.solve(-r);
    for (int i = 0; i < modes; ++i) {
      if (i != n - 1) u[i] += d[i];
    }
    lambda += d[n - 1];
    if (!u.allFinite() || !std::isfinite(lambda)) return std::nullopt;
  }
  return std::nullopt;
}

/// Inner product in which u carries the sphere L2 weights 1/N(D,2n).
inline double path_dot(const Eigen::VectorXd& w, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a.array() * b.array() * w.array()).sum();
}

/// Unit tangent of the solution curve in (u, lambda), oriented along `prev`.
inline std::optional<Eigen::VectorXd> path_tangent(const ZonalOperator& op, const PathPoint& p,
                                                   const Eigen::VectorXd& prev,
                                                   const Eigen::VectorXd& w) {
  const int modes = op.modes();
  Eigen::MatrixXd m(modes + 1, modes + 1);
  m.topLeftCorner(modes, modes) = Eigen::MatrixXd::Identity(modes, modes) - op.jacobian(p.u, p.lambda);
  m.topRightCorner(modes, 1) = -op.apply_G(p.u, 1.0);
  m.bottomRows(1) = (prev.array() * w.array()).matrix().transpose();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(modes + 1);
  rhs[modes] = 1.0;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  if (!(lu.rcond() > 1e-15)) return std::nullopt;
  Eigen::VectorXd t = lu.solve(rhs);
  const double norm = std::sqrt(path_dot(w, t, t));
  if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
  return Eigen::VectorXd(t / norm);
}

/// Pseudo-arclength corrector from the predicted point.
inline std::optional<PathPoint> arclength_correct(const ZonalOperator& op, Eigen::VectorXd z,
                                                  const Eigen::VectorXd& pred,
                                                  const Eigen::VectorXd& tangent,
                                                  const Eigen::VectorXd& w, double tol) {
  const int modes = op.modes();
  for (int iter = 0; iter < 8; ++iter) {
    const Eigen::VectorXd u = z.head(modes);
    const double lambda = z[modes];
    Eigen::VectorXd f(modes + 1);
    f.head(modes) = op.residual(u, lambda);
    f[modes] = path_dot(w, tangent, z - pred);
    if (zonal_l2_norm(op.dim(), f.head(modes)) <= tol && std::abs(f[modes]) <= 1e-12) {
      return PathPoint{u, lambda};
    }
    Eigen::MatrixXd m(modes + 1, modes + 1);
    m.topLeftCorner(modes, modes) = Eigen::MatrixXd::Identity(modes, modes) - op.jacobian(u, lambda);
    m.topRightCorner(modes, 1) = -op.apply_G(u, 1.0);
    m.bottomRows(1) = (tangent.array() * w.array()).matrix().transpose();
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    if (!(lu.rcond() > 1e-15)) return std::nullopt;
    z += lu.solve(-f);
    if (!z.allFinite()) return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace detail

/// Follows the branches bifurcating from u = 0 at lambda_n.
///
/// Each seed sign s = +-1 is started by solving with u_n pinned to s delta,
/// which fixes the side of lambda_n the branch lives on without assuming it.
/// The branch is then followed by pseudo-arclength continuation (so folds are
/// passed) until lambda crosses lambda_end; points on the way are re-solved at
/// fixed lambda, at roughly |lambda_end - lambda_n| / steps spacing. Three
/// ladder points lambda_n (1 + side eps), eps in {2 eps0, eps0, eps0/2}, are
/// taken on the first leg; eps0 is halved (at most max_halvings times) until
/// the leg reaches 2 eps0.
inline std::vector<Branch> trace_branch(const KernelSpec& spec, int n, double lambda_end, int steps,
                                        const TraceOptions& options = {}) {
  if (steps < 1) throw Error(ErrorKind::argument, "steps must be >= 1");
  if (n < 1 || n > options.modes) throw Error(ErrorKind::argument, "mode index outside truncation");
  if (!(spec.k(n) > 0.0)) {
    throw Error(ErrorKind::branch_not_found, "k_" + std::to_string(n) + " <= 0: no bifurcation from u = 0");
  }
  const double origin = static_cast<double>(harmonic_count(spec.dim, 2 * n)) / spec.k(n);
  if (!(lambda_end > 0.0)) throw Error(ErrorKind::argument, "lambda_end must be positive");

  const ZonalOperator op(spec, options.modes, options.solve.quadrature_order);
  const int modes = options.modes;
  const double tol = options.solve.tol;
  Eigen::VectorXd w(modes + 1);
  w.head(modes) = detail::mode_norms(spec.dim, modes);
  w[modes] = 1.0 / (origin * origin);

  const double span = std::max(std::abs(lambda_end - origin), 0.25 * origin);
  const double ds_max = span / origin / steps;
  const double record_gap = span / steps;
  const int max_points = 400 * steps;

  std::vector<Branch> branches;
  for (int sign : {1, -1}) {
    const auto seed = detail::pinned_solve(op, n, sign * options.delta, origin, tol);
    if (!seed) continue;
    if (zonal_l2_norm(spec.dim, seed->u) < 0.5 * options.delta / std::sqrt(harmonic_count(spec.dim, 2 * n))) continue;

    Branch br;
    br.mode = n;
    br.origin = origin;
    br.seed_sign = sign;
    br.side = seed->lambda >= origin ? 1 : -1;

    // continuation, amplitude increasing away from u = 0
    std::vector<detail::PathPoint> path{*seed};
    Eigen::VectorXd dir = Eigen::VectorXd::Zero(modes + 1);
    dir[n - 1] = sign;
    auto tangent = detail::path_tangent(op, *seed, dir, w);
    double ds = 0.25 * ds_max;
    double first_leg_extent = std::abs(seed->lambda / origin - 1.0);
    std::size_t first_leg_end = 0;
    bool first_leg = true;
    bool ended_at_lambda_end = false;
    while (tangent && static_cast<int>(path.size()) < max_points) {
      const detail::PathPoint cur = path.back();
      Eigen::VectorXd z(modes + 1);
      z.head(modes) = cur.u;
      z[modes] = cur.lambda;
      std::optional<detail::PathPoint> next;
      int cuts = 0;
      while (!next && cuts <= 12) {
        const Eigen::VectorXd pred = z + ds * *tangent;
        next = detail::arclength_correct(op, pred, pred, *tangent, w, tol);
        if (!next) {
          ds *= 0.5;
          ++cuts;
        }
      }
      if (!next) break;
      const auto new_tangent = detail::path_tangent(op, *next, *tangent, w);
      if (!new_tangent) break;
      if (first_leg && (next->lambda - cur.lambda) * br.side < 0.0) first_leg = false;
      path.push_back(*next);
      if (first_leg) {
        first_leg_extent = std::abs(next->lambda / origin - 1.0);
        first_leg_end = path.size() - 1;
      }
      tangent = new_tangent;
      if (cuts == 0) ds = std::min(ds * 1.5, ds_max);
      const bool crossed = (cur.lambda - lambda_end) * (next->lambda - lambda_end) <= 0.0;
      if (crossed && (!first_leg || first_leg_extent >= 2.0 * options.eps0)) {
        ended_at_lambda_end = true;
        break;
      }
      if (next->u.cwiseAbs().sum() > 2.0 * next->lambda * spec.sup_norm_khat + 1.0) break;
      if (std::abs(next->lambda - origin) > 4.0 * span) break;
    }

    auto solve_at = [&](double lambda, const Eigen::VectorXd& guess) -> std::optional<SolutionReport> {
      try {
        SolutionReport rep = solve(op, lambda, AxisymState(spec.dim, guess), options.solve);
        if (rep.converged && rep.state.l2_norm() > 1e-8) return rep;
      } catch (const Error&) {
      }
      return std::nullopt;
    };
    // fixed-lambda point where the path segment (b-1, b) crosses `lambda`
    auto solve_crossing = [&](std::size_t b, double lambda) {
      const auto& p0 = path[b - 1];
      const auto& p1 = path[b];
      const double s = (lambda - p0.lambda) / (p1.lambda - p0.lambda);
      return solve_at(lambda, p0.u + s * (p1.u - p0.u));
    };

    // (path position, point) pairs, sorted into path order below
    std::vector<std::pair<double, BranchPoint>> ordered;
    if (auto rep = solve_at(seed->lambda, seed->u)) ordered.push_back({0.0, BranchPoint{seed->lambda, *rep, {}}});

    double eps = options.eps0;
    for (int h = 0; 2.0 * eps > first_leg_extent && h < options.max_halvings; ++h) eps *= 0.5;
    for (double e : {2.0 * eps, eps, 0.5 * eps}) {
      const double lambda = origin * (1.0 + br.side * e);
      for (std::size_t b = 1; b <= first_leg_end; ++b) {
        if ((path[b - 1].lambda - lambda) * (path[b].lambda - lambda) <= 0.0) {
          if (auto rep = solve_crossing(b, lambda)) {
            ordered.push_back({static_cast<double>(b) - 0.5, BranchPoint{lambda, *rep, {}}});
            br.ladder_eps.push_back(e);
          }
          break;
        }
      }
    }

    const std::size_t last = ended_at_lambda_end ? path.size() - 1 : path.size();
    double last_lambda = seed->lambda;
    for (std::size_t b = 1; b < last; ++b) {
      if (std::abs(path[b].lambda - last_lambda) < record_gap) continue;
      if (auto rep = solve_at(path[b].lambda, path[b].u)) {
        ordered.push_back({static_cast<double>(b), BranchPoint{path[b].lambda, *rep, {}}});
        last_lambda = path[b].lambda;
      }
    }
    if (ended_at_lambda_end) {
      if (auto rep = solve_crossing(path.size() - 1, lambda_end)) {
        ordered.push_back({static_cast<double>(path.size()), BranchPoint{lambda_end, *rep, {}}});
      }
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    for (auto& entry : ordered) br.points.push_back(std::move(entry.second));

    for (double e : br.ladder_eps) {
      const double lambda = origin * (1.0 + br.side * e);
      for (std::size_t i = 0; i < br.points.size(); ++i) {
        if (br.points[i].lambda == lambda) {
          br.ladder.push_back(i);
          break;
        }
      }
    }
    // between lambda_n and the seed the branch is close to linear in lambda
    for (double lambda : options.sample_at) {
      const double s = (lambda - origin) / (seed->lambda - origin);
      if (s > 0.0 && s < 1.0) {
        if (auto rep = solve_at(lambda, s * seed->u)) br.samples.push_back(BranchPoint{lambda, *rep, {}});
      }
    }
    for (std::size_t b = 1; b < path.size(); ++b) {
      for (double lambda : options.sample_at) {
        if ((path[b - 1].lambda - lambda) * (path[b].lambda - lambda) > 0.0) continue;
        if (path[b - 1].lambda == path[b].lambda) continue;
        // a value hit exactly by a path point is taken once, on the segment ending there
        if (path[b - 1].lambda == lambda && b > 1) continue;
        if (auto rep = solve_crossing(b, lambda)) br.samples.push_back(BranchPoint{lambda, *rep, {}});
      }
    }
    if (options.classify) {
      for (BranchPoint& p : br.samples) {
        try {
          p.stability = classify_stability(p.report, spec, options.stability).label;
        } catch (const Error&) {
          p.stability.reset();
        }
      }
      for (BranchPoint& p : br.points) {
        try {
          p.stability = classify_stability(p.report, spec, options.stability).label;
        } catch (const Error&) {
          p.stability.reset();
        }
      }
    }
    if (!br.points.empty()) branches.push_back(std::move(br));
  }
  if (branches.empty()) {
    throw Error(ErrorKind::branch_not_found,
                "no nontrivial branch found on either side of lambda_" + std::to_string(n));
  }
  return branches;
}

}  // namespace onsager
