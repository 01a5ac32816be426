#pragma once

// Axially symmetric self-consistency problem in coefficient space.
//
// A state u(theta) = sum_{n=1}^{N} u_n P_{2n}(D, cos theta) is mapped by
//   (lambda G(u))_n = -lambda k_n a_n(u),
//   a_n(u) = int g~(theta) P_{2n}(D, cos theta) d theta,
// where g~ is the orientation density e^{-u} sin^{D-2} normalized on [0, pi].
// This is the Funk-Hecke form of the convolution with the zonal kernel.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "onsager/errors.hpp"
#include "onsager/kernel.hpp"
#include "onsager/polybasis.hpp"

namespace onsager {

namespace detail {

/// 1 / N(D, 2n) for n = 1..modes, the mean of P_{2n}^2 over the sphere.
inline Eigen::VectorXd mode_norms(int dim, int modes) {
  Eigen::VectorXd out(modes);
  for (int n = 1; n <= modes; ++n) {
    out[n - 1] = 1.0 / static_cast<double>(harmonic_count(dim, 2 * n));
  }
  return out;
}

}  // namespace detail

/// Sphere-averaged L2 norm of sum_n c_n P_{2n}(D, .): sqrt(sum c_n^2 / N(D,2n)).
inline double zonal_l2_norm(int dim, const Eigen::VectorXd& coeffs) {
  const Eigen::VectorXd w = detail::mode_norms(dim, static_cast<int>(coeffs.size()));
  return std::sqrt((coeffs.array().square() * w.array()).sum());
}

class AxisymState {
 public:
  AxisymState() = default;

  AxisymState(int dim, Eigen::VectorXd coeffs) : dim_(dim), coeffs_(std::move(coeffs)) {
    if (dim_ < 3) throw Error(ErrorKind::argument, "state dimension must be >= 3");
    if (!coeffs_.allFinite()) throw Error(ErrorKind::argument, "state coefficients must be finite");
  }

  static AxisymState zero(int dim, int modes) {
    return AxisymState(dim, Eigen::VectorXd::Zero(modes));
  }

  /// amplitude * P_{2n}(D, cos theta).
  static AxisymState single_mode(int dim, int modes, int n, double amplitude) {
    if (n < 1 || n > modes) throw Error(ErrorKind::argument, "mode index out of range");
    Eigen::VectorXd c = Eigen::VectorXd::Zero(modes);
    c[n - 1] = amplitude;
    return AxisymState(dim, std::move(c));
  }

  int dim() const noexcept { return dim_; }
  int modes() const noexcept { return static_cast<int>(coeffs_.size()); }
  const Eigen::VectorXd& coeffs() const noexcept { return coeffs_; }
  /// u_n, 1-based.
  double coeff(int n) const { return coeffs_[n - 1]; }

  /// u at t = cos(theta).
  double value(double t) const {
    std::vector<double> p(static_cast<std::size_t>(modes()));
    even_legendre_values(dim_, t, p);
    double sum = 0.0;
    for (int n = 0; n < modes(); ++n) sum += coeffs_[n] * p[n];
    return sum;
  }

  /// Zero-padded or truncated copy with `modes` coefficients.
  AxisymState resized(int modes) const {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(modes);
    const int keep = std::min(modes, this->modes());
    c.head(keep) = coeffs_.head(keep);
    return AxisymState(dim_, std::move(c));
  }

  double l2_norm() const { return zonal_l2_norm(dim_, coeffs_); }

 private:
  int dim_ = 3;
  Eigen::VectorXd coeffs_;
};

inline double l2_distance(const AxisymState& a, const AxisymState& b) {
  const int modes = std::max(a.modes(), b.modes());
  return zonal_l2_norm(a.dim(), a.resized(modes).coeffs() - b.resized(modes).coeffs());
}

enum class Method { picard, newton };

inline const char* to_string(Method m) { return m == Method::picard ? "picard" : "newton"; }

inline Method method_from_string(const std::string& s) {
  if (s == "picard") return Method::picard;
  if (s == "newton") return Method::newton;
  throw Error(ErrorKind::argument, "unknown method '" + s + "'");
}

struct SolveOptions {
  Method method = Method::newton;
  /// Residual tolerance in the sphere-averaged L2 norm.
  double tol = 1e-10;
  int max_iter = 200;
  /// Picard relaxation u <- (1-w) u + w lambda G(u).
  double relaxation = 1.0;
  int quadrature_order = default_quadrature_order;
  /// Extra Newton steps taken after reaching tol while the residual keeps dropping.
  int polish_steps = 3;
};

struct SolutionReport {
  AxisymState state;
  double lambda = 0.0;
  double residual_norm = 0.0;
  int iterations = 0;
  Method method = Method::newton;
  bool converged = false;
  /// sign det(I - J); empty when not computed or degenerate.
  std::optional<int> index;
  double sup_norm_u = 0.0;
};

/// Orientation density at quadrature nodes; values f(t_j) on the sphere.
struct DensityProfile {
  int dim = 3;
  std::vector<double> t;
  std::vector<double> weights;
  std::vector<double> values;
  /// beta = int_{S^{D-1}} e^{-u} d sigma.
  double beta = 1.0;
};

struct Linearization {
  /// sign det(I - J)
  int sign = 1;
  /// Smallest over largest singular value of I - J.
  double rcond = 1.0;
};

/// u -> lambda G(u) for a fixed kernel, truncation and quadrature.
class ZonalOperator {
 public:
  ZonalOperator(const KernelSpec& spec, int modes, ZonalQuadrature quad)
      : dim_(spec.dim), modes_(modes), quad_(std::move(quad)) {
    if (modes < 1) throw Error(ErrorKind::argument, "mode truncation must be >= 1");
    if (modes > spec.n_max) {
      throw Error(ErrorKind::argument, "mode truncation " + std::to_string(modes) +
                                           " exceeds kernel n_max " +
                                           std::to_string(spec.n_max));
    }
    if (quad_.dim != spec.dim) throw Error(ErrorKind::argument, "quadrature dimension mismatch");
    k_.resize(modes);
    for (int n = 1; n <= modes; ++n) k_[n - 1] = spec.k(n);
    sup_norm_khat_ = spec.sup_norm_khat;
    const auto q = static_cast<Eigen::Index>(quad_.size());
    basis_.resize(modes, q);
    std::vector<double> p(static_cast<std::size_t>(modes));
    for (Eigen::Index j = 0; j < q; ++j) {
      even_legendre_values(dim_, quad_.t[j], p);
      for (int n = 0; n < modes; ++n) basis_(n, j) = p[n];
    }
    weights_ = Eigen::Map<const Eigen::VectorXd>(quad_.weights.data(), q);
    iso_moments_ = basis_ * (weights_ / weights_.sum());
  }

  ZonalOperator(const KernelSpec& spec, int modes, int quadrature_order = default_quadrature_order)
      : ZonalOperator(spec, modes, ZonalQuadrature::make(spec.dim, quadrature_rule(quadrature_order))) {}

  int dim() const noexcept { return dim_; }
  int modes() const noexcept { return modes_; }
  const Eigen::VectorXd& k() const noexcept { return k_; }
  double sup_norm_khat() const noexcept { return sup_norm_khat_; }
  const ZonalQuadrature& quadrature() const noexcept { return quad_; }
  /// P_{2n}(D, t_j), modes x nodes.
  const Eigen::MatrixXd& basis() const noexcept { return basis_; }

  Eigen::VectorXd field(const Eigen::VectorXd& u) const { return basis_.transpose() * u; }

  /// Probability weights p_j of the orientation density at the nodes
  /// (sum_j p_j = 1), computed with the exponent shifted by min u.
  Eigen::VectorXd node_probabilities(const Eigen::VectorXd& u) const {
    const Eigen::VectorXd v = field(u);
    const double vmin = v.minCoeff();
    Eigen::VectorXd p = weights_.array() * (-(v.array() - vmin)).exp();
    return p / p.sum();
  }

  /// The quadrature's own (roundoff-level) isotropic moments are subtracted so
  /// that a(0) == 0 exactly and u = 0 is an exact fixed point.
  Eigen::VectorXd moments(const Eigen::VectorXd& u) const {
    return basis_ * node_probabilities(u) - iso_moments_;
  }

  Eigen::VectorXd apply_G(const Eigen::VectorXd& u, double lambda) const {
    return -lambda * (k_.array() * moments(u).array()).matrix();
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& u, double lambda) const {
    return u - apply_G(u, lambda);
  }

  /// J_mn = d(lambda G)_m / du_n = lambda k_m (<P_2m P_2n> - a_m a_n).
  Eigen::MatrixXd jacobian(const Eigen::VectorXd& u, double lambda) const {
    const Eigen::VectorXd p = node_probabilities(u);
    const Eigen::VectorXd a = basis_ * p - iso_moments_;
    Eigen::MatrixXd cov = basis_ * p.asDiagonal() * basis_.transpose();
    cov.noalias() -= a * a.transpose();
    return lambda * k_.asDiagonal() * cov;
  }

  double residual_norm(const Eigen::VectorXd& u, double lambda) const {
    return zonal_l2_norm(dim_, residual(u, lambda));
  }

  /// max |u| over the nodes and the poles t = +-1.
  double sup_norm(const Eigen::VectorXd& u) const {
    double best = field(u).cwiseAbs().maxCoeff();
    best = std::max(best, std::abs(u.sum()));  // P_{2n}(D, +-1) = 1
    return best;
  }

  Linearization linearization(const Eigen::VectorXd& u, double lambda) const {
    const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(modes_, modes_) - jacobian(u, lambda);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    const Eigen::MatrixXd& lu_mat = lu.matrixLU();
    // determinant sign: permutation parity times signs of U's diagonal
    int sign = lu.permutationP().determinant() > 0 ? 1 : -1;
    for (int i = 0; i < modes_; ++i) {
      if (lu_mat(i, i) < 0.0) sign = -sign;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double rcond = sv[0] > 0.0 ? sv[sv.size() - 1] / sv[0] : 0.0;
    return Linearization{sign, rcond};
  }

 private:
  int dim_;
  int modes_;
  ZonalQuadrature quad_;
  Eigen::VectorXd k_;
  double sup_norm_khat_ = 0.0;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd weights_;
  Eigen::VectorXd iso_moments_;
};

inline constexpr double degenerate_index_threshold = 1e-12;

namespace detail {

inline void check_same_dim(const AxisymState& state, const KernelSpec& spec) {
  if (state.dim() != spec.dim) throw Error(ErrorKind::argument, "state and kernel dimensions differ");
}

inline std::optional<int> index_or_unknown(const ZonalOperator& op, const Eigen::VectorXd& u,
                                           double lambda) {
  const Linearization lin = op.linearization(u, lambda);
  if (lin.rcond < degenerate_index_threshold) return std::nullopt;
  return lin.sign;
}

}  // namespace detail

/// g~(theta) = e^{-u(theta)} sin^{D-2}(theta) / int_0^pi e^{-u} sin^{D-2}.
inline double gtilde(const AxisymState& state, double theta,
                     const QuadratureRule& rule = quadrature_rule(default_quadrature_order)) {
  if (!(theta >= 0.0 && theta <= pi)) {
    throw Error(ErrorKind::domain, "theta outside [0, pi]");
  }
  const ZonalQuadrature zq = ZonalQuadrature::make(state.dim(), rule);
  std::vector<double> v(zq.size());
  double vmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < zq.size(); ++j) {
    v[j] = state.value(zq.t[j]);
    vmin = std::min(vmin, v[j]);
  }
  const double u_theta = state.value(std::clamp(std::cos(theta), -1.0, 1.0));
  vmin = std::min(vmin, u_theta);
  double z = 0.0;
  for (std::size_t j = 0; j < zq.size(); ++j) z += zq.weights[j] * std::exp(-(v[j] - vmin));
  return std::exp(-(u_theta - vmin)) * std::pow(std::sin(theta), state.dim() - 2) / z;
}

inline Eigen::VectorXd zonal_moments(const AxisymState& state, const KernelSpec& spec,
                                     const QuadratureRule& rule) {
  detail::check_same_dim(state, spec);
  return ZonalOperator(spec, state.modes(), ZonalQuadrature::make(spec.dim, rule))
      .moments(state.coeffs());
}

inline Eigen::VectorXd apply_G(const AxisymState& state, const KernelSpec& spec, double lambda,
                               int quadrature_order = default_quadrature_order) {
  detail::check_same_dim(state, spec);
  return ZonalOperator(spec, state.modes(), quadrature_order).apply_G(state.coeffs(), lambda);
}

inline Eigen::VectorXd residual(const AxisymState& state, const KernelSpec& spec, double lambda,
                                int quadrature_order = default_quadrature_order) {
  detail::check_same_dim(state, spec);
  return ZonalOperator(spec, state.modes(), quadrature_order).residual(state.coeffs(), lambda);
}

inline Eigen::MatrixXd jacobian(const AxisymState& state, const KernelSpec& spec, double lambda,
                                int quadrature_order = default_quadrature_order) {
  detail::check_same_dim(state, spec);
  return ZonalOperator(spec, state.modes(), quadrature_order).jacobian(state.coeffs(), lambda);
}

/// Solves u = lambda G(u) from `init` (resized to the operator's truncation).
///
/// Newton steps are globalized by backtracking on the residual norm and fall
/// back to a Picard step when no decrease is found. Throws a
/// singular_linearization error when I - J is numerically singular.
inline SolutionReport solve(const ZonalOperator& op, double lambda, const AxisymState& init,
                            const SolveOptions& options = {}) {
  if (!(options.tol > 0.0)) throw Error(ErrorKind::argument, "tolerance must be positive");
  if (!(lambda >= 0.0)) throw Error(ErrorKind::argument, "lambda must be >= 0");
  if (options.max_iter < 1) throw Error(ErrorKind::argument, "max_iter must be >= 1");
  if (init.dim() != op.dim()) throw Error(ErrorKind::argument, "initial state dimension mismatch");

  const int modes = op.modes();
  const double omega = options.relaxation;
  Eigen::VectorXd u = init.resized(modes).coeffs();
  Eigen::VectorXd r = op.residual(u, lambda);
  double rn = zonal_l2_norm(op.dim(), r);
  int iterations = 0;

  auto newton_direction = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& res) {
    const Eigen::MatrixXd m = Eigen::MatrixXd::Identity(modes, modes) - op.jacobian(x, lambda);
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
    if (!(lu.rcond() > 1e-13)) {
      throw Error(ErrorKind::singular_linearization,
                  "singular linearization I - J at lambda = " + std::to_string(lambda) +
                      "; lambda is (numerically) a critical value, perturb it slightly");
    }
    return Eigen::VectorXd(lu.solve(-res));
  };

  while (rn > options.tol && iterations < options.max_iter) {
    ++iterations;
    if (options.method == Method::picard) {
      u = (1.0 - omega) * u + omega * op.apply_G(u, lambda);
    } else {
      const Eigen::VectorXd delta = newton_direction(u, r);
      bool accepted = false;
      for (double step = 1.0; step >= 1.0 / 1024.0; step *= 0.5) {
        const Eigen::VectorXd trial = u + step * delta;
        const double trial_norm = op.residual_norm(trial, lambda);
        if (trial_norm < (1.0 - 1e-4 * step) * rn) {
          u = trial;
          accepted = true;
          break;
        }
      }
      if (!accepted) u = op.apply_G(u, lambda);
    }
    r = op.residual(u, lambda);
    rn = zonal_l2_norm(op.dim(), r);
    if (!std::isfinite(rn)) break;
  }

  const bool reached = std::isfinite(rn) && rn <= options.tol;
  if (reached && options.method == Method::newton) {
    for (int i = 0; i < options.polish_steps && rn > 0.0; ++i) {
      Eigen::VectorXd trial;
      try {
        trial = u + newton_direction(u, r);
      } catch (const Error&) {
        break;
      }
      const Eigen::VectorXd trial_r = op.residual(trial, lambda);
      const double trial_norm = zonal_l2_norm(op.dim(), trial_r);
      if (!(trial_norm < rn)) break;
      u = trial;
      r = trial_r;
      rn = trial_norm;
    }
  }

  SolutionReport report;
  report.lambda = lambda;
  report.method = options.method;
  report.iterations = iterations;
  report.residual_norm = rn;
  if (!u.allFinite()) {
    report.state = init.resized(modes);
    report.converged = false;
    report.sup_norm_u = std::numeric_limits<double>::infinity();
    return report;
  }
  report.state = AxisymState(op.dim(), u);
  report.sup_norm_u = op.sup_norm(u);
  report.converged =
      reached && report.sup_norm_u <= lambda * op.sup_norm_khat() + 1e-8;
  if (report.converged) report.index = detail::index_or_unknown(op, u, lambda);
  return report;
}

inline SolutionReport solve(const KernelSpec& spec, double lambda, const AxisymState& init,
                            const SolveOptions& options = {}) {
  detail::check_same_dim(init, spec);
  const ZonalOperator op(spec, init.modes(), options.quadrature_order);
  return solve(op, lambda, init, options);
}

namespace detail {

/// splitmix64; fixed across platforms, unlike std distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

inline bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) return a[i] < b[i];
  }
  return false;
}

}  // namespace detail

/// Deterministic multistart census of the solutions of u = lambda G(u).
///
/// Starts are uniform in the box |u_n| <= lambda ||K-hat||_inf; `extra_starts`
/// are tried first (continuation seeds). Solutions closer than 10 tol in L2 are
/// merged. The result is sorted lexicographically by coefficients.
inline std::vector<SolutionReport> multistart(const ZonalOperator& op, double lambda,
                                              int n_starts, std::uint64_t seed,
                                              const SolveOptions& options = {},
                                              const std::vector<AxisymState>& extra_starts = {}) {
  if (n_starts < 1) throw Error(ErrorKind::argument, "n_starts must be >= 1");
  const double box = lambda * op.sup_norm_khat();
  detail::SplitMix64 rng(seed);

  std::vector<AxisymState> starts = extra_starts;
  for (int s = 0; s < n_starts; ++s) {
    Eigen::VectorXd c(op.modes());
    for (int n = 0; n < op.modes(); ++n) c[n] = box * (2.0 * rng.uniform() - 1.0);
    starts.emplace_back(op.dim(), std::move(c));
  }

  std::vector<SolutionReport> found;
  const double radius = 10.0 * options.tol;
  for (const AxisymState& start : starts) {
    SolutionReport rep;
    try {
      rep = solve(op, lambda, start, options);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::singular_linearization) continue;
      throw;
    }
    if (!rep.converged) continue;
    bool duplicate = false;
    for (SolutionReport& existing : found) {
      if (l2_distance(existing.state, rep.state) <= radius) {
        if (rep.residual_norm < existing.residual_norm) existing = rep;
        duplicate = true;
        break;
      }
    }
    if (!duplicate) found.push_back(std::move(rep));
  }
  std::sort(found.begin(), found.end(), [](const SolutionReport& a, const SolutionReport& b) {
    return detail::lexicographic_less(a.state.coeffs(), b.state.coeffs());
  });
  return found;
}

inline std::vector<SolutionReport> multistart(const KernelSpec& spec, double lambda, int n_starts,
                                              std::uint64_t seed, int modes,
                                              const SolveOptions& options = {}) {
  const ZonalOperator op(spec, modes, options.quadrature_order);
  return multistart(op, lambda, n_starts, seed, options);
}

/// f = e^{-u} / int_{S^{D-1}} e^{-u} d sigma at the quadrature nodes.
inline DensityProfile recover_density(const AxisymState& state, const ZonalQuadrature& quad) {
  if (quad.dim != state.dim()) throw Error(ErrorKind::argument, "quadrature dimension mismatch");
  DensityProfile out;
  out.dim = state.dim();
  out.t = quad.t;
  out.weights = quad.weights;
  out.values.resize(quad.size());
  std::vector<double> v(quad.size());
  double vmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < quad.size(); ++j) {
    v[j] = state.value(quad.t[j]);
    vmin = std::min(vmin, v[j]);
  }
  const double sphere_factor = surface_area(state.dim() - 1);
  double shifted = 0.0;
  for (std::size_t j = 0; j < quad.size(); ++j) {
    out.values[j] = std::exp(-(v[j] - vmin));
    shifted += quad.weights[j] * out.values[j];
  }
  shifted *= sphere_factor;
  for (double& f : out.values) f /= shifted;
  out.beta = shifted * std::exp(-vmin);
  return out;
}

inline DensityProfile recover_density(const AxisymState& state, const KernelSpec& spec,
                                      double /*lambda*/,
                                      int quadrature_order = default_quadrature_order) {
  detail::check_same_dim(state, spec);
  return recover_density(state, ZonalQuadrature::make(state.dim(), quadrature_rule(quadrature_order)));
}

/// Sphere moments a_n = int f P_{2n} d sigma of a density profile, n = 1..modes.
inline Eigen::VectorXd density_moments(const DensityProfile& density, int modes) {
  const double sphere_factor = surface_area(density.dim - 1);
  Eigen::VectorXd a = Eigen::VectorXd::Zero(modes);
  std::vector<double> p(static_cast<std::size_t>(modes));
  for (std::size_t j = 0; j < density.t.size(); ++j) {
    even_legendre_values(density.dim, density.t[j], p);
    const double w = sphere_factor * density.weights[j] * density.values[j];
    for (int n = 0; n < modes; ++n) a[n] += w * p[n];
  }
  return a;
}

/// U(f)(t_j) = lambda (K-bar - sum_n k_n a_n P_{2n}(D, t_j)), using `modes` terms.
inline std::vector<double> density_potential(const DensityProfile& density, const KernelSpec& spec,
                                             double lambda, int modes) {
  const Eigen::VectorXd a = density_moments(density, modes);
  std::vector<double> out(density.t.size());
  std::vector<double> p(static_cast<std::size_t>(modes));
  for (std::size_t j = 0; j < density.t.size(); ++j) {
    even_legendre_values(density.dim, density.t[j], p);
    double s = spec.k0;
    for (int n = 0; n < modes; ++n) s -= spec.k(n + 1) * a[n] * p[n];
    out[j] = lambda * s;
  }
  return out;
}

/// E(f) = int f (log f + U(f)/2) d sigma.
inline double free_energy(const DensityProfile& density, const KernelSpec& spec, double lambda,
                          int modes) {
  if (density.dim != spec.dim) throw Error(ErrorKind::argument, "density and kernel dimensions differ");
  const std::vector<double> u = density_potential(density, spec, lambda, modes);
  const double sphere_factor = surface_area(density.dim - 1);
  double e = 0.0;
  for (std::size_t j = 0; j < density.t.size(); ++j) {
    const double f = density.values[j];
    if (f > 0.0) e += sphere_factor * density.weights[j] * f * (std::log(f) + 0.5 * u[j]);
  }
  return e;
}

inline double free_energy(const DensityProfile& density, const KernelSpec& spec, double lambda) {
  return free_energy(density, spec, lambda, spec.n_max);
}

}  // namespace onsager
