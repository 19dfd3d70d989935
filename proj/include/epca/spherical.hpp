#pragma once

// von Mises-Fisher densities, sampling and kernel density estimation on
// S^{p-1} for arbitrary ambient dimension p >= 2.

#include "epca/core.hpp"
#include "epca/optim.hpp"
#include "epca/rng.hpp"
#include "epca/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace epca {

namespace detail {

// Power series sum_k (x/2)^{2k+nu} / (k! Gamma(k+nu+1)), summed with
// rescaling so that large x does not overflow.
inline double log_bessel_i_series(double nu, double x) {
  const double q = 0.25 * x * x;
  double term = 1.0, sum = 1.0, log_scale = 0.0;
  for (int k = 0; k < 1000000; ++k) {
    term *= q / ((k + 1.0) * (k + 1.0 + nu));
    sum += term;
    if (sum > 1e250) {
      sum *= 1e-250;
      term *= 1e-250;
      log_scale += 250.0 * std::numbers::ln10;
    }
    if (term < 1e-17 * sum && k + 1.0 > 0.5 * x) break;
  }
  return nu * std::log(0.5 * x) - std::lgamma(nu + 1.0) + std::log(sum) + log_scale;
}

// Hankel expansion e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k, truncated
// at its smallest term.
inline double log_bessel_i_asymptotic(double nu, double x) {
  const double mu = 4.0 * nu * nu;
  double term = 1.0, sum = 1.0, last = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(term) >= last) break;
    sum += term;
    last = std::abs(term);
    if (last < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

}  // namespace detail

// log I_nu(x) for nu >= 0, x >= 0.
inline double log_bessel_i(double nu, double x) {
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (x > std::max(40.0, 2.0 * nu * nu)) return detail::log_bessel_i_asymptotic(nu, x);
  return detail::log_bessel_i_series(nu, x);
}

// log c_p(kappa) with c_p the vMF normalizing constant on S^{p-1}; kappa = 0
// gives the uniform density 1 / |S^{p-1}|.
inline double vmf_log_normalizer(Index p, double kappa) {
  const double half = 0.5 * static_cast<double>(p);
  if (kappa == 0.0) return std::lgamma(half) - std::log(2.0) - half * std::log(std::numbers::pi);
  return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) -
         log_bessel_i(half - 1.0, kappa);
}

inline double vmf_log_density(const Vector& z, const Vector& mu, double kappa) {
  if (!(kappa > 0.0)) throw config_error("vmf_log_density: kappa must be positive");
  if (z.size() != mu.size() || z.size() < 2) throw config_error("vmf_log_density: dimension mismatch");
  return vmf_log_normalizer(mu.size(), kappa) + kappa * z.dot(mu);
}

inline Vector uniform_sphere(Index p, Rng& rng) {
  Vector g(p);
  for (;;) {
    for (Index i = 0; i < p; ++i) g(i) = rng.normal();
    const double n = g.norm();
    if (n > 1e-300) return g / n;
  }
}

// Wood (1994) rejection sampler for the cosine t = z.mu, density
// proportional to exp(kappa t) (1 - t^2)^{(p-3)/2}; the tangent direction is
// uniform and the draw is reflected from e_1 onto mu with a Householder map.
inline Vector vmf_sample(const Vector& mu, double kappa, Rng& rng) {
  const Index p = mu.size();
  if (kappa <= 0.0) return uniform_sphere(p, rng);
  const double pm1 = static_cast<double>(p - 1);
  const double b = pm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + pm1 * pm1));
  const double x0 = (1.0 - b) / (1.0 + b);
  const double one_minus_x0sq = 4.0 * b / ((1.0 + b) * (1.0 + b));
  const double c = kappa * x0 + pm1 * std::log(one_minus_x0sq);
  double t = 0.0;
  for (;;) {
    const double zb = rng.beta(0.5 * pm1, 0.5 * pm1);
    t = (1.0 - (1.0 + b) * zb) / (1.0 - (1.0 - b) * zb);
    const double u = rng.uniform();
    if (kappa * t + pm1 * std::log(1.0 - x0 * t) - c >= std::log(u)) break;
  }
  t = std::clamp(t, -1.0, 1.0);
  Vector y(p);
  y(0) = t;
  const Vector tangent = uniform_sphere(p - 1, rng);
  y.tail(p - 1) = std::sqrt(std::max(0.0, 1.0 - t * t)) * tangent;

  Vector u = -mu;
  u(0) += 1.0;
  const double uu = u.squaredNorm();
  if (uu > 1e-30) y -= (2.0 * u.dot(y) / uu) * u;
  return y / y.norm();
}

// Equal-weight vMF mixture with one shared concentration.
struct VmfKernel {
  Matrix centers;  // n x p, unit rows
  double kappa = 1.0;
  bool kappa_capped = false;
  double loo_objective = 0.0;

  Index dim() const { return centers.cols(); }
  Index size() const { return centers.rows(); }
};

struct KdeOptions {
  double kappa_min = 1e-3;
  double kappa_max = 1e4;
  int grid_points = 49;
};

namespace detail {

inline void require_unit_rows(const Matrix& pts, const char* who) {
  for (Index i = 0; i < pts.rows(); ++i)
    if (std::abs(pts.row(i).norm() - 1.0) > 1e-9)
      throw numerical_error(std::string(who) + ": row " + std::to_string(i) + " is not a unit vector");
}

}  // namespace detail

// Leave-one-out log-likelihood sum_i log[(1/(n-1)) sum_{j != i} h(x_i; x_j, kappa)]
// given the Gram matrix of the points.
inline double kde_loo_objective(const Matrix& gram, Index p, double kappa) {
  const Index n = gram.rows();
  const double log_c = vmf_log_normalizer(p, kappa);
  double total = 0.0;
  std::vector<double> buf(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) buf[m++] = kappa * gram(j, i);
    total += log_sum_exp(buf);
  }
  return static_cast<double>(n) * (log_c - std::log(static_cast<double>(n - 1))) + total;
}

// Centers are the points; kappa maximizes the leave-one-out likelihood over a
// log-spaced grid, refined by golden-section search in log kappa.
inline VmfKernel kde_fit(const Matrix& points, const KdeOptions& opt = {}) {
  if (points.rows() < 2) throw data_error("kde_fit: need at least 2 points");
  detail::require_unit_rows(points, "kde_fit");
  const Index p = points.cols();
  const Matrix gram = points * points.transpose();
  const double lo = std::log(opt.kappa_min), hi = std::log(opt.kappa_max);
  const int g = std::max(opt.grid_points, 3);
  std::vector<double> grid(static_cast<std::size_t>(g)), vals(static_cast<std::size_t>(g));
  std::size_t best = 0;
  for (int i = 0; i < g; ++i) {
    grid[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (g - 1);
    vals[static_cast<std::size_t>(i)] = kde_loo_objective(gram, p, std::exp(grid[static_cast<std::size_t>(i)]));
    if (vals[static_cast<std::size_t>(i)] > vals[best]) best = static_cast<std::size_t>(i);
  }
  VmfKernel k;
  k.centers = points;
  if (best + 1 == grid.size()) {
    k.kappa = opt.kappa_max;
    k.kappa_capped = true;
    k.loo_objective = vals[best];
    log(LogLevel::warn, "kde_fit: concentration diverges, capped at kappa_max = " + std::to_string(opt.kappa_max));
    return k;
  }
  const double a = grid[best == 0 ? 0 : best - 1];
  const double b = grid[best + 1];
  const double lk = optim::golden_section([&](double l) { return -kde_loo_objective(gram, p, std::exp(l)); }, a, b,
                                          1e-8);
  const double refined = kde_loo_objective(gram, p, std::exp(lk));
  if (refined >= vals[best]) {
    k.kappa = std::exp(lk);
    k.loo_objective = refined;
  } else {
    k.kappa = std::exp(grid[best]);
    k.loo_objective = vals[best];
  }
  return k;
}

inline double kde_log_density(const VmfKernel& kernel, const Vector& z) {
  std::vector<double> buf(static_cast<std::size_t>(kernel.size()));
  const Vector dots = kernel.centers * z;
  for (Index i = 0; i < kernel.size(); ++i) buf[static_cast<std::size_t>(i)] = kernel.kappa * dots(i);
  return vmf_log_normalizer(kernel.dim(), kernel.kappa) - std::log(static_cast<double>(kernel.size())) +
         log_sum_exp(buf);
}

inline Vector kde_sample(const VmfKernel& kernel, Rng& rng) {
  const auto i = static_cast<Index>(rng.below(static_cast<std::uint64_t>(kernel.size())));
  return vmf_sample(kernel.centers.row(i).transpose(), kernel.kappa, rng);
}

}  // namespace epca
