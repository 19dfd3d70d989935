#pragma once

// Frechet(alpha = 2) standardisation, the tail pairwise dependence matrix
// (TPDM) and extremal principal components.

#include "epca/core.hpp"
#include "epca/ingest.hpp"
#include "epca/linalg.hpp"
#include "epca/marginals.hpp"
#include "epca/stats.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

namespace epca {

// Rows on the standardised scale, P(X <= x) = exp(-x^-2).
struct FrechetPanel {
  Matrix values;
  std::vector<Index> source_rows;
};

inline double to_frechet_value(double x, const SemiParametricCdf& cdf) {
  const double p = cdf.eval(x);
  if (!(p > 0.0 && p < 1.0))
    throw numerical_error("to_frechet: CDF of site '" + cdf.fit().id + "' returned " + std::to_string(p));
  // -log p computed as -log1p(-(1-p)) in the tail keeps precision near p = 1.
  const double neg_log_p = x > cdf.threshold() ? -std::log1p(-cdf.survival(x)) : -std::log(p);
  return 1.0 / std::sqrt(neg_log_p);
}

inline FrechetPanel to_frechet(const DataMatrix& data, const Margins& margins, const CompleteIndex& rows) {
  if (static_cast<Index>(margins.size()) != data.sites())
    throw config_error("to_frechet: margins fitted on " + std::to_string(margins.size()) + " sites, panel has " +
                       std::to_string(data.sites()));
  FrechetPanel out;
  out.source_rows = rows.rows;
  out.values.resize(static_cast<Index>(rows.rows.size()), data.sites());
  for (std::size_t i = 0; i < rows.rows.size(); ++i) {
    const Index t = rows.rows[i];
    for (Index k = 0; k < data.sites(); ++k) {
      assert(data.mask(t, k) && "to_frechet: masked cell reached the dependence estimator");
      if (!data.mask(t, k)) throw data_error("to_frechet: row " + std::to_string(t) + " is incomplete");
      out.values(static_cast<Index>(i), k) = to_frechet_value(data.values(t, k), margins[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

// Inverse standardisation, x_k = F_k^{-1}(exp(-xt_k^-2)).
inline Vector from_frechet(const Vector& xtilde, const Margins& margins) {
  Vector x(xtilde.size());
  for (Index k = 0; k < xtilde.size(); ++k) {
    if (!(xtilde(k) > 0.0)) throw numerical_error("from_frechet: non-positive standardised value");
    const double e = 1.0 / (xtilde(k) * xtilde(k));
    const auto& cdf = margins[static_cast<std::size_t>(k)];
    if (e < std::numbers::ln2) {
      x(k) = cdf.inverse_survival(-std::expm1(-e));
    } else {
      // Deep lower tail: the empirical inverse saturates at the sample minimum.
      x(k) = cdf.inverse(std::max(std::exp(-e), std::numeric_limits<double>::min()));
    }
  }
  return x;
}

// tau(v) = log(1 + e^v), always positive.
inline double softplus(double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); }

// tau^{-1}(x) = log(e^x - 1) for x > 0.
inline double softplus_inverse(double x) {
  if (!(x > 0.0)) throw numerical_error("softplus_inverse: argument must be positive");
  return x + std::log(-std::expm1(-x));
}

struct Tpdm {
  Matrix sigma;
  Matrix eigvecs;  // columns
  Vector eigvals;  // nonincreasing, >= 0
  double r0 = 0.0;
  Index n_exc = 0;
  double q_radial = 0.0;

  Index dim() const { return sigma.rows(); }
};

// Eigendecomposes sigma; eigenvalues within 1e-10 (relative) below zero are
// clamped, anything more negative means the estimator is broken.
inline Tpdm make_tpdm(Matrix sigma, double r0, Index n_exc, double q_radial) {
  Tpdm out;
  auto eig = eig_sym(sigma);
  const double eps = 1e-10 * std::max(1.0, std::abs(eig.values(0)));
  for (Index i = 0; i < eig.values.size(); ++i) {
    if (eig.values(i) < -eps)
      throw numerical_error("TPDM has eigenvalue " + std::to_string(eig.values(i)) + " < 0");
    eig.values(i) = std::max(eig.values(i), 0.0);
  }
  out.sigma = std::move(sigma);
  out.eigvecs = std::move(eig.vectors);
  out.eigvals = std::move(eig.values);
  out.r0 = r0;
  out.n_exc = n_exc;
  out.q_radial = q_radial;
  return out;
}

// (K / n) sum over rows with ||x_t|| > r0 of w_t w_t^T, w_t = x_t / ||x_t||.
inline Tpdm estimate_tpdm_at(const Matrix& panel, double r0, double q_radial = 0.0) {
  const Index K = panel.cols();
  Matrix sigma = Matrix::Zero(K, K);
  Index n = 0;
  for (Index t = 0; t < panel.rows(); ++t) {
    const double r = panel.row(t).norm();
    if (!(r > r0)) continue;
    const Vector w = panel.row(t).transpose() / r;
    sigma.noalias() += w * w.transpose();
    ++n;
  }
  if (n < 2) throw numerical_error("estimate_tpdm: only " + std::to_string(n) + " rows above the radial threshold");
  if (3 * n < K)
    log(LogLevel::warn, "estimate_tpdm: " + std::to_string(n) + " extremes for " + std::to_string(K) + " sites");
  sigma *= static_cast<double>(K) / static_cast<double>(n);
  sigma = 0.5 * (sigma + sigma.transpose());
  return make_tpdm(std::move(sigma), r0, n, q_radial);
}

inline Vector row_norms(const Matrix& m) {
  Vector r(m.rows());
  for (Index t = 0; t < m.rows(); ++t) r(t) = m.row(t).norm();
  return r;
}

// Radial threshold at the empirical q_radial quantile of the row norms.
inline Tpdm estimate_tpdm(const Matrix& panel, double q_radial) {
  if (!(q_radial > 0.0 && q_radial < 1.0)) throw config_error("q_radial must lie in (0,1)");
  const Vector r = row_norms(panel);
  const double r0 = empirical_quantile(std::vector<double>(r.data(), r.data() + r.size()), q_radial);
  return estimate_tpdm_at(panel, r0, q_radial);
}

inline Tpdm estimate_tpdm(const FrechetPanel& panel, double q_radial) { return estimate_tpdm(panel.values, q_radial); }

// v_t = U^T tau^{-1}(x_t), one row per panel row.
inline Matrix pc_scores(const Matrix& panel, const Tpdm& tpdm) {
  Matrix inv(panel.rows(), panel.cols());
  for (Index t = 0; t < panel.rows(); ++t)
    for (Index k = 0; k < panel.cols(); ++k) inv(t, k) = softplus_inverse(panel(t, k));
  return inv * tpdm.eigvecs;
}

// x = tau(U v) for a single score vector.
inline Vector from_pc(const Vector& v, const Tpdm& tpdm) {
  Vector y = tpdm.eigvecs * v;
  for (Index k = 0; k < y.size(); ++k) y(k) = softplus(y(k));
  return y;
}

// Share of the total eigenvalue mass (= K) carried by the first m pairs.
inline double explained_fraction(const Vector& eigvals, Index m) {
  return eigvals.head(m).sum() / static_cast<double>(eigvals.size());
}

}  // namespace epca
