#pragma once

// Zonal polynomial machinery on S^{D-1}: Gegenbauer and dimension-D Legendre
// polynomials, harmonic counts, sphere areas and Gauss-Legendre quadrature.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "onsager/errors.hpp"

namespace onsager {

inline constexpr double pi = std::numbers::pi;
inline constexpr int default_quadrature_order = 128;

struct BasisIndex {
  int dim = 3;
  int degree = 0;
  double alpha = 0.5;

  static BasisIndex make(int dim, int degree) {
    if (dim < 3) {
      throw Error(ErrorKind::argument,
                  "basis index requires dimension >= 3, got " + std::to_string(dim));
    }
    if (degree < 0) {
      throw Error(ErrorKind::argument, "polynomial degree must be >= 0");
    }
    return BasisIndex{dim, degree, 0.5 * (dim - 2)};
  }
};

namespace detail {

inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) {
    throw Error(ErrorKind::overflow, "integer overflow in harmonic count");
  }
  return out;
}

inline void check_unit_interval(double t) {
  if (!(std::abs(t) <= 1.0)) {
    throw Error(ErrorKind::domain,
                "polynomial argument outside [-1, 1]: " + std::to_string(t));
  }
}

inline void check_deriv(int deriv) {
  if (deriv != 0 && deriv != 1) {
    throw Error(ErrorKind::argument, "derivative order must be 0 or 1");
  }
}

}  // namespace detail

/// Number of linearly independent degree-n spherical harmonics on S^{D-1},
/// N(D,n) = (2n+D-2)(n+D-3)! / ((D-2)! n!).
inline std::uint64_t harmonic_count(int dim, int n) {
  if (dim < 3 || n < 0) {
    throw Error(ErrorKind::argument, "harmonic_count requires D >= 3 and n >= 0");
  }
  // (n+D-3)! / ((D-3)! n!) = C(n+D-3, D-3), built one factor at a time; each
  // partial product C(n+i, i) is an integer so the division is exact.
  const auto m = static_cast<std::uint64_t>(dim - 3);
  std::uint64_t binom = 1;
  for (std::uint64_t i = 1; i <= m; ++i) {
    binom = detail::checked_mul(binom, static_cast<std::uint64_t>(n) + i) / i;
  }
  const std::uint64_t numer =
      detail::checked_mul(static_cast<std::uint64_t>(2 * static_cast<std::int64_t>(n) + dim - 2), binom);
  return numer / static_cast<std::uint64_t>(dim - 2);
}

/// Surface measure of the unit sphere S^{D-1} in R^D.
inline double surface_area(int dim) {
  if (dim < 2) {
    throw Error(ErrorKind::argument, "surface_area requires D >= 2");
  }
  return 2.0 * std::pow(pi, 0.5 * dim) / std::tgamma(0.5 * dim);
}

/// C_n^{(alpha)}(t) or its first derivative, by the three-term recurrence.
inline double gegenbauer_eval(double alpha, int n, double t, int deriv = 0) {
  detail::check_unit_interval(t);
  detail::check_deriv(deriv);
  if (n < 0) throw Error(ErrorKind::argument, "negative Gegenbauer degree");
  if (n == 0) return deriv == 0 ? 1.0 : 0.0;

  double c_prev = 1.0, c = 2.0 * alpha * t;
  double d_prev = 0.0, d = 2.0 * alpha;
  for (int k = 2; k <= n; ++k) {
    const double a = 2.0 * (k + alpha - 1.0);
    const double b = k + 2.0 * alpha - 2.0;
    const double c_next = (a * t * c - b * c_prev) / k;
    const double d_next = (a * (c + t * d) - b * d_prev) / k;
    c_prev = c;
    c = c_next;
    d_prev = d;
    d = d_next;
  }
  return deriv == 0 ? c : d;
}

inline double gegenbauer_eval(const BasisIndex& idx, double t, int deriv = 0) {
  return gegenbauer_eval(idx.alpha, idx.degree, t, deriv);
}

/// P_n(D,t) = C_n^{(alpha)}(t) / C_n^{(alpha)}(1), alpha = (D-2)/2.
///
/// Uses the normalized form of the Gegenbauer recurrence,
/// (n+D-3) P_n = (2n+D-4) t P_{n-1} - (n-1) P_{n-2},
/// whose coefficients sum to one at t = 1 so P_n(D,1) == 1 exactly.
inline double legendre_eval(int dim, int n, double t, int deriv = 0) {
  if (dim < 3) throw Error(ErrorKind::argument, "legendre_eval requires D >= 3");
  detail::check_unit_interval(t);
  detail::check_deriv(deriv);
  if (n < 0) throw Error(ErrorKind::argument, "negative Legendre degree");
  if (n == 0) return deriv == 0 ? 1.0 : 0.0;

  // P_1(D,t) = t for every D.
  double p_prev = 1.0, p = t;
  double d_prev = 0.0, d = 1.0;
  for (int k = 2; k <= n; ++k) {
    const double a = 2.0 * k + dim - 4.0;
    const double b = k - 1.0;
    const double c = k + dim - 3.0;
    const double p_next = (a * t * p - b * p_prev) / c;
    const double d_next = (a * (p + t * d) - b * d_prev) / c;
    p_prev = p;
    p = p_next;
    d_prev = d;
    d = d_next;
  }
  return deriv == 0 ? p : d;
}

/// Evaluates P_2(D,t), P_4(D,t), ..., P_{2N}(D,t) in one recurrence pass.
inline void even_legendre_values(int dim, double t, std::span<double> out) {
  const int count = static_cast<int>(out.size());
  if (count == 0) return;
  double p_prev = 1.0, p = t;
  for (int k = 2; k <= 2 * count; ++k) {
    const double p_next =
        ((2.0 * k + dim - 4.0) * t * p - (k - 1.0) * p_prev) / (k + dim - 3.0);
    p_prev = p;
    p = p_next;
    if (k % 2 == 0) out[k / 2 - 1] = p;
  }
}

/// Gauss-Legendre rule on [-1, 1].
class QuadratureRule {
 public:
  QuadratureRule(std::vector<double> nodes, std::vector<double> weights)
      : nodes_(std::move(nodes)), weights_(std::move(weights)) {
    if (nodes_.empty() || nodes_.size() != weights_.size()) {
      throw Error(ErrorKind::argument, "quadrature nodes/weights mismatch");
    }
  }

  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }
  int order() const noexcept { return static_cast<int>(nodes_.size()); }

  /// Plain integral over [-1, 1].
  template <class F>
  double apply(F&& f) const {
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) sum += weights_[i] * f(nodes_[i]);
    return sum;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

inline QuadratureRule quadrature_rule(int order) {
  if (order <= 0) {
    throw Error(ErrorKind::argument,
                "quadrature order must be positive, got " + std::to_string(order));
  }
  const int n = order;
  std::vector<double> nodes(n), weights(n);
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    // Root i of P_n, counted from the right end.
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      const double p = n == 1 ? x : p1;
      const double pm1 = n == 1 ? 1.0 : p0;
      dp = n * (x * p - pm1) / (x * x - 1.0);
      const double dx = p / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    if (2 * i + 1 == n) x = 0.0;
    // Recompute the derivative at the converged root for the weight.
    double p0 = 1.0, p1 = x;
    for (int k = 2; k <= n; ++k) {
      const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    dp = n == 1 ? 1.0 : n * (x * p1 - p0) / (x * x - 1.0);
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    nodes[n - 1 - i] = x;
    nodes[i] = -x;
    weights[n - 1 - i] = w;
    weights[i] = w;
  }
  return QuadratureRule(std::move(nodes), std::move(weights));
}

/// Nodes t_j = cos(theta_j) and weights W_j such that
/// sum_j W_j f(t_j) ~ int_{-1}^{1} f(t) (1-t^2)^{(D-3)/2} dt.
///
/// The Gauss-Legendre rule is mapped to theta in [0, pi] and the zonal weight
/// sin^{D-2}(theta) is folded in; the integrand stays smooth in theta for all D,
/// which keeps exponential convergence even when the t-weight is singular.
struct ZonalQuadrature {
  int dim = 3;
  std::vector<double> t;
  std::vector<double> weights;

  static ZonalQuadrature make(int dim, const QuadratureRule& rule) {
    if (dim < 2) throw Error(ErrorKind::argument, "zonal quadrature requires D >= 2");
    ZonalQuadrature zq;
    zq.dim = dim;
    const auto x = rule.nodes();
    const auto w = rule.weights();
    zq.t.resize(x.size());
    zq.weights.resize(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double theta = 0.5 * pi * (x[j] + 1.0);
      zq.t[j] = std::clamp(std::cos(theta), -1.0, 1.0);
      zq.weights[j] = 0.5 * pi * w[j] * std::pow(std::sin(theta), dim - 2);
    }
    return zq;
  }

  std::size_t size() const noexcept { return t.size(); }

  template <class F>
  double integrate(F&& f) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) sum += weights[j] * f(t[j]);
    return sum;
  }
};

/// int_{-1}^{1} f(t) (1-t^2)^{(D-3)/2} dt.
template <class F>
double weighted_integral(F&& f, int dim, const QuadratureRule& rule) {
  if (dim < 3) throw Error(ErrorKind::argument, "weighted_integral requires D >= 3");
  return ZonalQuadrature::make(dim, rule).integrate(std::forward<F>(f));
}

}  // namespace onsager
