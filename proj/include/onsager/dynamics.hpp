#pragma once

// Axisymmetric Doi flow
//   f_t = (1/sin^{D-2}) d_theta [ sin^{D-2} (f_theta + f U_theta) ]
// on a uniform interior theta grid, discretized by conservative finite volumes.
//
// Cell measures are the interpolatory weights of the grid for the zonal measure
// sin^{D-2}(theta) d theta, so sums over cells are spectrally accurate integrals
// and grid moments match the coefficient-space solver run on the same nodes.
// Face fluxes use the logarithmic mean of f as mobility,
//   F = s/h [ (f_{i+1} - f_i) + M(f_i, f_{i+1}) (U_{i+1} - U_i) ]
//     = s/h M (mu_{i+1} - mu_i),   mu = log f + U,
// which makes the semi-discrete scheme an exact gradient flow of the discrete
// free energy.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "onsager/errors.hpp"
#include "onsager/kernel.hpp"
#include "onsager/polybasis.hpp"
#include "onsager/solver.hpp"

namespace onsager {

inline constexpr int min_grid_points = 32;

struct ThetaGrid {
  int dim = 3;
  int points = 0;
  double h = 0.0;
  std::vector<double> theta;
  /// cos(theta_i)
  std::vector<double> t;
  /// Cell measures V_i, sum_i V_i g(theta_i) ~ int_0^pi g sin^{D-2} d theta.
  std::vector<double> measure;
  /// sin^{D-2} at the G-1 interior faces theta_{i+1/2}.
  std::vector<double> face;

  /// Largest explicit step: h^2/4, tightened where small polar cells need it
  /// to keep the diffusion update positive.
  double max_dt() const {
    double dt = 0.25 * h * h;
    for (int i = 0; i < points; ++i) {
      const double out = (i > 0 ? face[i - 1] : 0.0) + (i + 1 < points ? face[i] : 0.0);
      dt = std::min(dt, h * measure[i] / out);
    }
    return dt;
  }

  /// Quadrature view of the grid, for running the coefficient solver on it.
  ZonalQuadrature quadrature() const {
    ZonalQuadrature q;
    q.dim = dim;
    q.t = t;
    q.weights = measure;
    return q;
  }
};

inline ThetaGrid make_grid(int dim, int points) {
  if (dim < 3) throw Error(ErrorKind::argument, "grid dimension must be >= 3");
  if (points < min_grid_points) {
    throw Error(ErrorKind::resolution, "grid needs at least " + std::to_string(min_grid_points) +
                                           " points, got " + std::to_string(points));
  }
  ThetaGrid g;
  g.dim = dim;
  g.points = points;
  g.h = pi / (points + 1);
  g.theta.resize(points);
  g.t.resize(points);
  for (int i = 0; i < points; ++i) {
    // i and G-1-i computed from the same integer pattern keeps the reflection exact
    g.theta[i] = (i + 1) * g.h;
    g.t[i] = std::cos(g.theta[i]);
  }
  for (int i = 0; i < points / 2; ++i) {
    g.t[points - 1 - i] = -g.t[i];
  }
  if (points % 2 == 1) g.t[points / 2] = 0.0;

  // phi(theta) sin(theta) vanishes at the poles and is interpolated by a sine
  // series on the nodes; m_k are the exact sine moments of sin^{D-3}.
  const QuadratureRule rule = quadrature_rule(2 * points + 64);
  std::vector<double> m(points, 0.0);
  for (int j = 0; j < rule.order(); ++j) {
    const double th = 0.5 * pi * (rule.nodes()[j] + 1.0);
    const double w = 0.5 * pi * rule.weights()[j] * std::pow(std::sin(th), dim - 3);
    for (int k = 1; k <= points; ++k) m[k - 1] += w * std::sin(k * th);
  }
  g.measure.resize(points);
  for (int i = 0; i < points; ++i) {
    double s = 0.0;
    for (int k = 1; k <= points; ++k) s += m[k - 1] * std::sin(k * g.theta[i]);
    g.measure[i] = std::sin(g.theta[i]) * 2.0 / (points + 1) * s;
  }
  for (int i = 0; i < points / 2; ++i) {
    const double avg = 0.5 * (g.measure[i] + g.measure[points - 1 - i]);
    g.measure[i] = g.measure[points - 1 - i] = avg;
  }
  for (int i = 0; i < points; ++i) {
    if (!(g.measure[i] > 0.0)) {
      throw Error(ErrorKind::resolution, "nonpositive cell measure; increase the grid size");
    }
  }
  g.face.resize(points - 1);
  for (int i = 0; i + 1 < points; ++i) {
    g.face[i] = std::pow(std::sin((i + 1.5) * g.h), dim - 2);
  }
  return g;
}

/// Kernel, concentration and grid with the P_{2n} table precomputed.
class DoiFlow {
 public:
  DoiFlow(const KernelSpec& spec, double lambda, ThetaGrid grid, int modes)
      : spec_(spec), lambda_(lambda), grid_(std::move(grid)), modes_(modes) {
    if (spec.dim != grid_.dim) throw Error(ErrorKind::argument, "grid and kernel dimensions differ");
    if (modes < 1 || modes > spec.n_max) throw Error(ErrorKind::argument, "invalid mode truncation");
    if (4 * modes > grid_.points) {
      throw Error(ErrorKind::resolution, "grid of " + std::to_string(grid_.points) +
                                             " points cannot resolve " + std::to_string(modes) +
                                             " modes; need at least " + std::to_string(4 * modes));
    }
    if (!(lambda >= 0.0)) throw Error(ErrorKind::argument, "lambda must be >= 0");
    sphere_factor_ = surface_area(grid_.dim - 1);
    basis_.resize(modes, grid_.points);
    std::vector<double> p(static_cast<std::size_t>(modes));
    for (int i = 0; i < grid_.points; ++i) {
      even_legendre_values(grid_.dim, grid_.t[i], p);
      for (int n = 0; n < modes; ++n) basis_(n, i) = p[n];
    }
    measure_ = Eigen::Map<const Eigen::VectorXd>(grid_.measure.data(), grid_.points);
    k_.resize(modes);
    for (int n = 1; n <= modes; ++n) k_[n - 1] = spec.k(n);
  }

  /// Keeps as many kernel modes as the grid resolves (G/4).
  DoiFlow(const KernelSpec& spec, double lambda, ThetaGrid grid)
      : DoiFlow(spec, lambda, grid, std::min(spec.n_max, grid.points / 4)) {}

  const KernelSpec& spec() const noexcept { return spec_; }
  double lambda() const noexcept { return lambda_; }
  const ThetaGrid& grid() const noexcept { return grid_; }
  int modes() const noexcept { return modes_; }

  double mass(const Eigen::VectorXd& f) const { return sphere_factor_ * measure_.dot(f); }

  /// a_n = int f P_{2n} d sigma.
  Eigen::VectorXd moments(const Eigen::VectorXd& f) const {
    // constants have zero moments; dropping f_0 keeps a uniform f exactly stationary
    return sphere_factor_ * (basis_ * (measure_.array() * (f.array() - f[0])).matrix());
  }

  /// U(theta_i) = lambda (K-bar - sum_n k_n a_n P_{2n}(cos theta_i)).
  Eigen::VectorXd potential(const Eigen::VectorXd& f) const {
    const Eigen::VectorXd ka = (k_.array() * moments(f).array()).matrix();
    return (lambda_ * (spec_.k0 - (basis_.transpose() * ka).array())).matrix();
  }

  /// E = int f (log f + U/2) d sigma.
  double energy(const Eigen::VectorXd& f) const {
    const Eigen::VectorXd u = potential(f);
    double e = 0.0;
    for (int i = 0; i < grid_.points; ++i) {
      if (f[i] > 0.0) e += measure_[i] * f[i] * (std::log(f[i]) + 0.5 * u[i]);
    }
    return sphere_factor_ * e;
  }

  /// Time derivative of f (flux divergence per unit cell measure).
  Eigen::VectorXd rate(const Eigen::VectorXd& f) const {
    const Eigen::VectorXd u = potential(f);
    const int g = grid_.points;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(g);
    for (int i = 0; i + 1 < g; ++i) {
      const double flux =
          grid_.face[i] / grid_.h * ((f[i + 1] - f[i]) + log_mean(f[i], f[i + 1]) * (u[i + 1] - u[i]));
      out[i] += flux;
      out[i + 1] -= flux;
    }
    return (out.array() / measure_.array()).matrix();
  }

  /// Grid density of the state u: f_i = e^{-u(t_i)} / int e^{-u} d sigma.
  Eigen::VectorXd density_of(const AxisymState& state) const {
    Eigen::VectorXd v(grid_.points);
    for (int i = 0; i < grid_.points; ++i) v[i] = state.value(grid_.t[i]);
    Eigen::VectorXd f = (-(v.array() - v.minCoeff())).exp();
    return f / mass(f);
  }

  Eigen::VectorXd uniform() const {
    Eigen::VectorXd f = Eigen::VectorXd::Ones(grid_.points);
    return f / mass(f);
  }

  /// Coefficient-space image of f: u_n = -lambda k_n a_n(f), i.e. U(f) - lambda K-bar.
  AxisymState project(const Eigen::VectorXd& f) const {
    return AxisymState(grid_.dim, (-lambda_ * (k_.array() * moments(f).array())).matrix());
  }

  /// Sphere L2 norm of a grid function.
  double l2_norm(const Eigen::VectorXd& v) const {
    return std::sqrt(sphere_factor_ * measure_.dot(v.cwiseAbs2()));
  }

 private:
  static double log_mean(double a, double b) {
    if (a <= 0.0 || b <= 0.0) return 0.0;
    const double d = b - a;
    if (std::abs(d) <= 1e-6 * a) {
      // series of (b - a)/log(b/a) about b = a
      const double x = d / a;
      return a * (1.0 + x / 2.0 - x * x / 12.0 + x * x * x / 24.0);
    }
    return d / (std::log(b) - std::log(a));
  }

  KernelSpec spec_;
  double lambda_;
  ThetaGrid grid_;
  int modes_;
  double sphere_factor_ = 0.0;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd measure_;
  Eigen::VectorXd k_;
};

inline Eigen::VectorXd potential_on_grid(const Eigen::VectorXd& density, const KernelSpec& spec,
                                         double lambda, const ThetaGrid& grid) {
  return DoiFlow(spec, lambda, grid).potential(density);
}

namespace detail {

inline void check_dt(const DoiFlow& flow, double dt) {
  const double limit = flow.grid().max_dt();
  if (!(dt > 0.0) || dt > limit * (1.0 + 1e-12)) {
    throw Error(ErrorKind::step_size, "time step " + std::to_string(dt) +
                                          " outside (0, " + std::to_string(limit) + "]");
  }
}

inline void euler_step(const DoiFlow& flow, Eigen::VectorXd& f, double dt) {
  f.noalias() += dt * flow.rate(f);
}

}  // namespace detail

/// One explicit Euler step of the conservative scheme.
inline Eigen::VectorXd step(const Eigen::VectorXd& f, const DoiFlow& flow, double dt) {
  detail::check_dt(flow, dt);
  if (f.size() != flow.grid().points) throw Error(ErrorKind::argument, "density size mismatch");
  Eigen::VectorXd out = f;
  detail::euler_step(flow, out, dt);
  return out;
}

inline Eigen::VectorXd step(const Eigen::VectorXd& f, const KernelSpec& spec, double lambda,
                            double dt, const ThetaGrid& grid) {
  return step(f, DoiFlow(spec, lambda, grid), dt);
}

struct EvolveOptions {
  /// Record time, energy and moments every this many steps (the last step is always recorded).
  int sample_every = 1;
  /// Store a density snapshot every this many samples; 0 keeps only the first and last.
  int snapshot_every = 0;
  /// Early stop when the sphere L2 norm of (f_{k+1} - f_k)/dt falls below this.
  double stop_rate = 1e-10;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<double> energies;
  /// a_1..a_4 (fewer if the flow keeps fewer modes) at each sample.
  std::vector<std::vector<double>> moments;
  std::vector<double> snapshot_times;
  std::vector<Eigen::VectorXd> densities;
  Eigen::VectorXd final_density;
  double final_time = 0.0;
  int steps = 0;
  bool stopped_early = false;
  /// Largest per-step energy increase E_{k+1} - E_k over all steps.
  double max_energy_rise = -std::numeric_limits<double>::infinity();
  /// Largest per-step |mass change|.
  double max_mass_drift = 0.0;
};

inline Trajectory evolve(const Eigen::VectorXd& f0, const DoiFlow& flow, double dt, double t_max,
                         const EvolveOptions& options = {}) {
  detail::check_dt(flow, dt);
  if (!(t_max >= 0.0)) throw Error(ErrorKind::argument, "t_max must be >= 0");
  if (options.sample_every < 1) throw Error(ErrorKind::argument, "sample_every must be >= 1");
  if (f0.size() != flow.grid().points) throw Error(ErrorKind::argument, "density size mismatch");
  if (!f0.allFinite() || f0.minCoeff() < 0.0) {
    throw Error(ErrorKind::argument, "initial density must be finite and nonnegative");
  }

  const int n_moments = std::min(4, flow.modes());
  Trajectory tr;
  Eigen::VectorXd f = f0;
  double energy = flow.energy(f);
  double mass = flow.mass(f);
  int samples = 0;

  auto record = [&](double time, bool force_snapshot) {
    tr.times.push_back(time);
    tr.energies.push_back(energy);
    const Eigen::VectorXd a = flow.moments(f);
    tr.moments.emplace_back(a.data(), a.data() + n_moments);
    const bool snap = force_snapshot ||
                      (options.snapshot_every > 0 && samples % options.snapshot_every == 0);
    if (snap) {
      tr.snapshot_times.push_back(time);
      tr.densities.push_back(f);
    }
    ++samples;
  };

  record(0.0, true);
  const auto total = static_cast<long long>(std::ceil(t_max / dt - 1e-9));
  double time = 0.0;
  for (long long k = 1; k <= total; ++k) {
    const double h = std::min(dt, t_max - time);
    const Eigen::VectorXd df = flow.rate(f) * h;
    Eigen::VectorXd next = f + df;
    if (!next.allFinite() || next.minCoeff() < 0.0) {
      throw DivergenceError("density became invalid after t = " + std::to_string(time), time);
    }
    f = std::move(next);
    time = k == total ? t_max : time + h;
    ++tr.steps;
    const double e = flow.energy(f);
    const double m = flow.mass(f);
    tr.max_energy_rise = std::max(tr.max_energy_rise, e - energy);
    tr.max_mass_drift = std::max(tr.max_mass_drift, std::abs(m - mass));
    energy = e;
    mass = m;
    const bool stop = flow.l2_norm(df) / h < options.stop_rate;
    if (stop || k == total || k % options.sample_every == 0) record(time, false);
    if (stop) {
      tr.stopped_early = true;
      break;
    }
  }
  if (tr.snapshot_times.empty() || tr.snapshot_times.back() != time || tr.densities.size() < 2) {
    tr.snapshot_times.push_back(time);
    tr.densities.push_back(f);
  }
  tr.final_density = f;
  tr.final_time = time;
  return tr;
}

inline Trajectory evolve(const Eigen::VectorXd& f0, const KernelSpec& spec, double lambda, double dt,
                         double t_max, const ThetaGrid& grid, const EvolveOptions& options = {}) {
  return evolve(f0, DoiFlow(spec, lambda, grid), dt, t_max, options);
}

/// Steady state of the discrete flow near `guess`: the coefficient solver run
/// on the grid's own nodes and cell measures.
inline SolutionReport grid_steady_state(const DoiFlow& flow, const AxisymState& guess,
                                        const SolveOptions& options = {}) {
  const ZonalOperator op(flow.spec(), flow.modes(), flow.grid().quadrature());
  return solve(op, flow.lambda(), guess.resized(flow.modes()), options);
}

struct ProbeResult {
  /// Growth rate of the perturbation seeded along P_{2n}, n = 1..probes.
  std::vector<double> rates;
  double max_rate = 0.0;
  bool stable = false;
};

struct ProbeOptions {
  int probes = 4;
  double amplitude = 1e-6;
  double t_probe = 2.0;
  /// Stop a probe once it has decayed or grown by this factor.
  double spread = 1e4;
};

/// Linear stability of the discrete steady state f_star: evolve small
/// mass-preserving perturbations f_star (1 + eps (P_{2n} - <P_{2n}>)) and fit
/// the late-time exponential rate of ||f - f_star||.
inline ProbeResult linear_probe(const DoiFlow& flow, const Eigen::VectorXd& f_star,
                                const ProbeOptions& options = {}) {
  const ThetaGrid& grid = flow.grid();
  const double dt = grid.max_dt();
  const int probes = std::min(options.probes, flow.modes());
  ProbeResult out;
  out.max_rate = -std::numeric_limits<double>::infinity();
  for (int n = 1; n <= probes; ++n) {
    Eigen::VectorXd p(grid.points);
    for (int i = 0; i < grid.points; ++i) p[i] = legendre_eval(grid.dim, 2 * n, grid.t[i]);
    const double mean = flow.mass(f_star.cwiseProduct(p));
    Eigen::VectorXd f = f_star.array() * (1.0 + options.amplitude * (p.array() - mean));
    const double d0 = flow.l2_norm(f - f_star);

    std::vector<double> times{0.0}, dist{d0};
    double time = 0.0;
    while (time < options.t_probe) {
      detail::euler_step(flow, f, dt);
      time += dt;
      const double d = flow.l2_norm(f - f_star);
      times.push_back(time);
      dist.push_back(d);
      if (d < d0 / options.spread || d > d0 * options.spread) break;
    }
    // rate over the second half of the probe window, past the fast transients
    const std::size_t last = dist.size() - 1;
    const std::size_t mid = last / 2;
    const double rate = std::log(dist[last] / dist[mid]) / (times[last] - times[mid]);
    out.rates.push_back(rate);
    out.max_rate = std::max(out.max_rate, rate);
  }
  out.stable = out.max_rate < 0.0;
  return out;
}

}  // namespace onsager
