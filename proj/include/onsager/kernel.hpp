#pragma once

// Even zonal expansion of the interaction kernel,
//   K(gamma) = k0 - sum_{n>=1} k_n P_{2n}(D, cos gamma),
// for the Onsager kernel |sin gamma| and for user-supplied coefficient lists.

#include <cmath>
#include <limits>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "onsager/errors.hpp"
#include "onsager/polybasis.hpp"

namespace onsager {

enum class KernelSource { onsager_quadrature, onsager_recurrence, custom };

inline const char* to_string(KernelSource s) {
  switch (s) {
    case KernelSource::onsager_quadrature: return "onsager-quadrature";
    case KernelSource::onsager_recurrence: return "onsager-recurrence";
    case KernelSource::custom: return "custom";
  }
  return "custom";
}

inline KernelSource kernel_source_from_string(const std::string& s) {
  if (s == "onsager-quadrature") return KernelSource::onsager_quadrature;
  if (s == "onsager-recurrence") return KernelSource::onsager_recurrence;
  if (s == "custom") return KernelSource::custom;
  throw Error(ErrorKind::argument, "unknown kernel source '" + s + "'");
}

struct KernelSpec {
  int dim = 3;
  int n_max = 0;
  /// k_1..k_{n_max}; coeffs[n-1] == k_n.
  std::vector<double> coeffs;
  /// Kernel mean K-bar.
  double k0 = 0.0;
  /// ||K-hat||_inf over gamma in [0, pi].
  double sup_norm_khat = 0.0;
  KernelSource source = KernelSource::custom;

  double k(int n) const { return coeffs.at(static_cast<std::size_t>(n - 1)); }
  bool is_onsager() const { return source != KernelSource::custom; }
};

/// K-bar = sigma_{D-1}/sigma_D int_{-1}^{1} K(arccos t) (1-t^2)^{(D-3)/2} dt.
inline double mean_value(const std::function<double(double)>& profile, int dim,
                         const QuadratureRule& rule) {
  const double integral = weighted_integral(
      [&](double t) {
        const double v = profile(std::acos(t));
        if (!std::isfinite(v)) {
          throw Error(ErrorKind::domain, "kernel profile is not finite at gamma = " +
                                             std::to_string(std::acos(t)));
        }
        return v;
      },
      dim, rule);
  return surface_area(dim - 1) / surface_area(dim) * integral;
}

inline double mean_value(const std::function<double(double)>& profile, int dim) {
  return mean_value(profile, dim, quadrature_rule(default_quadrature_order));
}

namespace detail {

inline int quadrature_order_for_degree(int degree) {
  return std::max(default_quadrature_order, 2 * degree + 64);
}

/// Zonal quadratures of dimension D+1: (1-t^2)^{(D-2)/2} is the zonal weight
/// of one dimension higher.
struct CoeffQuadrature {
  ZonalQuadrature coarse;
  ZonalQuadrature fine;

  CoeffQuadrature(int dim, int order)
      : coarse(ZonalQuadrature::make(dim + 1, quadrature_rule(order))),
        fine(ZonalQuadrature::make(dim + 1, quadrature_rule(order + order / 2))) {}
};

inline double onsager_coeff(int dim, int n, const CoeffQuadrature& quad, double rel_tol) {
  const double scale = -surface_area(dim - 1) *
                       static_cast<double>(harmonic_count(dim, 2 * n)) /
                       surface_area(dim);
  auto p2n = [&](double t) { return legendre_eval(dim, 2 * n, t); };
  const double coarse = scale * quad.coarse.integrate(p2n);
  const double fine = scale * quad.fine.integrate(p2n);
  const double err = std::abs(fine - coarse);
  // |P_{2n}| <= 1 and recurrence roundoff grows like a random walk in the degree
  const double floor = std::sqrt(2.0 * n) * std::numeric_limits<double>::epsilon() * std::abs(scale) *
                       quad.fine.integrate([](double) { return 1.0; });
  if (err > rel_tol * std::abs(fine) + floor) {
    throw AccuracyError("quadrature order " + std::to_string(quad.coarse.size()) +
                            " too low for k_" + std::to_string(n) +
                            " (estimated relative error " +
                            std::to_string(err / std::abs(fine)) + ")",
                        err);
  }
  return fine;
}

}  // namespace detail

/// k_n of the Onsager kernel from
///   k_n = -(sigma_{D-1} N(D,2n) / sigma_D) int (1-t^2)^{(D-2)/2} P_{2n}(D,t) dt.
///
/// The integral is evaluated at `order` and at 1.5*order; the difference is the
/// error estimate and the finer value is returned. Throws AccuracyError when the
/// estimate exceeds rel_tol * |k_n|.
inline double coeff_by_quadrature(int dim, int n, int order, double rel_tol = 1e-11) {
  if (dim < 3) throw Error(ErrorKind::argument, "coeff_by_quadrature requires D >= 3");
  if (n < 1) throw Error(ErrorKind::argument, "coefficient index must be >= 1");
  return detail::onsager_coeff(dim, n, detail::CoeffQuadrature(dim, order), rel_tol);
}

inline double coeff_by_quadrature(int dim, int n) {
  return coeff_by_quadrature(dim, n, detail::quadrature_order_for_degree(2 * n));
}

/// k_{n+1} / k_n for the Onsager kernel:
///   (2n-1)(4n+D+2)(2n+D-2) / [2(n+1)(4n+D-2)(2n+D+1)].
inline double recurrence_ratio(int dim, int n) {
  const double d = dim;
  return (2.0 * n - 1.0) * (4.0 * n + d + 2.0) * (2.0 * n + d - 2.0) /
         (2.0 * (n + 1.0) * (4.0 * n + d - 2.0) * (2.0 * n + d + 1.0));
}

inline std::vector<double> coeff_by_recurrence(int dim, double k1, int n_max) {
  if (!(k1 > 0.0)) throw Error(ErrorKind::argument, "recurrence seed k_1 must be positive");
  if (n_max < 1) throw Error(ErrorKind::argument, "n_max must be >= 1");
  std::vector<double> out(static_cast<std::size_t>(n_max));
  out[0] = k1;
  for (int n = 1; n < n_max; ++n) out[n] = recurrence_ratio(dim, n) * out[n - 1];
  return out;
}

/// K-hat(gamma) = -sum_n k_n P_{2n}(D, cos gamma) for a bare coefficient list.
inline double khat_series(int dim, const std::vector<double>& coeffs, double gamma) {
  if (!(gamma >= 0.0 && gamma <= pi)) {
    throw Error(ErrorKind::domain, "gamma outside [0, pi]: " + std::to_string(gamma));
  }
  if (coeffs.empty()) return 0.0;
  std::vector<double> p(coeffs.size());
  even_legendre_values(dim, std::clamp(std::cos(gamma), -1.0, 1.0), p);
  double sum = 0.0;
  for (std::size_t n = 0; n < coeffs.size(); ++n) sum -= coeffs[n] * p[n];
  return sum;
}

inline double khat_eval(const KernelSpec& spec, double gamma) {
  return khat_series(spec.dim, spec.coeffs, gamma);
}

namespace detail {

/// max over [0, pi] of |offset + K-hat_N|, by 4096-point sampling followed by
/// golden-section refinement around the best samples.
inline double sampled_sup_norm(int dim, const std::vector<double>& coeffs,
                               double offset = 0.0) {
  bool all_zero = true;
  for (double c : coeffs) all_zero = all_zero && c == 0.0;
  if (all_zero) return std::abs(offset);

  constexpr int samples = 4096;
  const double h = pi / samples;
  auto value = [&](double g) { return std::abs(offset + khat_series(dim, coeffs, g)); };
  std::vector<double> vals(samples + 1);
  for (int i = 0; i <= samples; ++i) vals[i] = value(i * h);

  double best = 0.0;
  for (int i = 0; i <= samples; ++i) best = std::max(best, vals[i]);
  // refine every sampled local maximum that is close to the best one
  for (int i = 0; i <= samples; ++i) {
    const double left = i > 0 ? vals[i - 1] : -1.0;
    const double right = i < samples ? vals[i + 1] : -1.0;
    if (vals[i] < left || vals[i] < right || vals[i] < 0.9 * best) continue;
    double a = std::max(0.0, (i - 1) * h), b = std::min(pi, (i + 1) * h);
    constexpr double inv_phi = 0.6180339887498949;
    double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
    double fc = value(c), fd = value(d);
    for (int it = 0; it < 60; ++it) {
      if (fc > fd) {
        b = d; d = c; fd = fc;
        c = b - inv_phi * (b - a); fc = value(c);
      } else {
        a = c; c = d; fc = fd;
        d = a + inv_phi * (b - a); fd = value(d);
      }
    }
    best = std::max({best, fc, fd});
  }
  return best;
}

}  // namespace detail

inline double sup_norm(const KernelSpec& spec) { return spec.sup_norm_khat; }

/// ||K||_inf of the full kernel k0 + K-hat.
inline double kernel_sup_norm(const KernelSpec& spec) {
  // |sin gamma| peaks at 1
  if (spec.is_onsager()) return 1.0;
  return detail::sampled_sup_norm(spec.dim, spec.coeffs, spec.k0);
}

/// Upper bound for sum_{m > n_max} k_m.
///
/// For the Onsager kernel k_{m+1}/k_m = 1 - 2/m + O(m^-2), so k_m m^{3/2} is
/// eventually nonincreasing and sum_{m>M} k_m <= k_M M^{3/2} int_M^inf x^{-3/2} dx
/// = 2 k_M M. Terms before the monotone regime are summed explicitly. Custom
/// kernels are finite lists, so their tail is zero.
inline double coefficient_tail_bound(const KernelSpec& spec) {
  if (!spec.is_onsager() || spec.coeffs.empty()) return 0.0;
  int m = spec.n_max;
  double km = spec.coeffs.back();
  double explicit_sum = 0.0;
  constexpr int max_explicit = 1000000;
  for (int i = 0; i < max_explicit; ++i) {
    const double r = recurrence_ratio(spec.dim, m);
    if (r * std::pow((m + 1.0) / m, 1.5) <= 1.0) break;
    km *= r;
    ++m;
    explicit_sum += km;
  }
  return explicit_sum + 2.0 * km * m;
}

struct KernelBuildOptions {
  /// Check k_n > 0 and k_{n+1} < k_n for custom coefficient lists.
  bool validate = false;
  /// Kernel mean for custom kernels.
  double custom_k0 = 0.0;
};

namespace detail {

inline void validate_prop_k(const std::vector<double>& coeffs) {
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!(coeffs[i] > 0.0)) {
      throw IndexedError(ErrorKind::validation,
                         "kernel coefficient k_" + std::to_string(n) + " is not positive",
                         n);
    }
    if (i > 0 && !(coeffs[i] < coeffs[i - 1])) {
      throw IndexedError(ErrorKind::validation,
                         "kernel coefficients not decreasing at k_" + std::to_string(n), n);
    }
  }
}

}  // namespace detail

inline KernelSpec build_kernel_spec(int dim, int n_max, KernelSource source,
                                    const std::optional<std::vector<double>>& custom_coeffs = {},
                                    const KernelBuildOptions& options = {}) {
  if (dim < 3) throw Error(ErrorKind::argument, "kernel requires dimension >= 3");
  if (source == KernelSource::custom) {
    if (!custom_coeffs) throw Error(ErrorKind::argument, "custom kernel needs coefficients");
  } else if (custom_coeffs) {
    throw Error(ErrorKind::argument, "coefficients may only be supplied for custom kernels");
  }

  KernelSpec spec;
  spec.dim = dim;
  spec.source = source;

  if (source == KernelSource::custom) {
    spec.coeffs = *custom_coeffs;
    spec.n_max = static_cast<int>(spec.coeffs.size());
    if (spec.n_max < 1) throw Error(ErrorKind::argument, "n_max must be >= 1");
    for (std::size_t i = 0; i < spec.coeffs.size(); ++i) {
      if (!std::isfinite(spec.coeffs[i])) {
        throw IndexedError(ErrorKind::validation,
                           "kernel coefficient k_" + std::to_string(i + 1) + " is not finite",
                           static_cast<int>(i) + 1);
      }
    }
    if (options.validate) detail::validate_prop_k(spec.coeffs);
    spec.k0 = options.custom_k0;
    spec.sup_norm_khat = detail::sampled_sup_norm(dim, spec.coeffs);
    return spec;
  }

  if (n_max < 1) throw Error(ErrorKind::argument, "n_max must be >= 1");
  spec.n_max = n_max;
  if (source == KernelSource::onsager_quadrature) {
    spec.coeffs.resize(static_cast<std::size_t>(n_max));
    const detail::CoeffQuadrature quad(dim, detail::quadrature_order_for_degree(2 * n_max));
    for (int n = 1; n <= n_max; ++n) {
      spec.coeffs[n - 1] = detail::onsager_coeff(dim, n, quad, 1e-11);
    }
  } else {
    spec.coeffs = coeff_by_recurrence(dim, coeff_by_quadrature(dim, 1), n_max);
  }
  detail::validate_prop_k(spec.coeffs);
  spec.k0 = mean_value([](double g) { return std::abs(std::sin(g)); }, dim);
  // K-hat = |sin gamma| - K-bar ranges over [-K-bar, 1 - K-bar].
  spec.sup_norm_khat = std::max(spec.k0, 1.0 - spec.k0);
  return spec;
}

}  // namespace onsager
