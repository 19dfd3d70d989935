#pragma once

// Simulators with known dependence structure, used as test oracles.

#include "epca/core.hpp"
#include "epca/rng.hpp"

#include <cmath>
#include <vector>

namespace epca::synthetic {

// Rows normalised to unit L2 norm, nonnegative entries. Site i loads fully
// on factor i mod n_factors and weakly (0.15 to 0.6) on every other factor.
inline Matrix loading_matrix(Index sites, Index factors, Rng& rng) {
  Matrix a = Matrix::Zero(sites, factors);
  for (Index i = 0; i < sites; ++i) {
    for (Index j = 0; j < factors; ++j) a(i, j) = 0.15 + 0.45 * rng.uniform();
    a(i, i % factors) = 1.0;
    a.row(i) /= a.row(i).norm();
  }
  return a;
}

// Mixes independent site-level noise into a loading matrix: the result
// [sqrt(1-eps) A | sqrt(eps) I] is again row-normalised and max-linear.
inline Matrix with_noise(const Matrix& a, double eps) {
  Matrix out(a.rows(), a.cols() + a.rows());
  out.leftCols(a.cols()) = std::sqrt(1.0 - eps) * a;
  out.rightCols(a.rows()) = std::sqrt(eps) * Matrix::Identity(a.rows(), a.rows());
  return out;
}

inline double frechet_draw(Rng& rng) { return 1.0 / std::sqrt(-std::log(rng.uniform())); }

// X_i = max_j a_ij Z_j with Z_j iid P(Z <= z) = exp(-z^-2). Each margin is
// again standard Frechet and the TPDM is A A^T.
inline Matrix max_linear(const Matrix& a, Index rows, Rng& rng) {
  Matrix x(rows, a.rows());
  Vector z(a.cols());
  for (Index t = 0; t < rows; ++t) {
    for (Index j = 0; j < a.cols(); ++j) z(j) = frechet_draw(rng);
    for (Index i = 0; i < a.rows(); ++i) x(t, i) = (a.row(i).transpose().array() * z.array()).maxCoeff();
  }
  return x;
}

struct GevMargin {
  double loc = 50.0;
  double scale = 5.0;
  double shape = 0.1;
};

inline std::vector<GevMargin> default_margins(Index sites) {
  std::vector<GevMargin> m;
  for (Index k = 0; k < sites; ++k)
    m.push_back({50.0 + 5.0 * static_cast<double>(k), 5.0,
                 0.1 + 0.1 * static_cast<double>(k) / static_cast<double>(std::max<Index>(sites - 1, 1))});
  return m;
}

// Frechet(2) value to GEV: F = exp(-x^-2), so -log F = x^-2.
inline double gev_from_frechet(double xt, const GevMargin& g) {
  return g.loc + g.scale * std::expm1(2.0 * g.shape * std::log(xt)) / g.shape;
}

inline Matrix to_data_scale(const Matrix& frechet, const std::vector<GevMargin>& margins) {
  Matrix x(frechet.rows(), frechet.cols());
  for (Index t = 0; t < x.rows(); ++t)
    for (Index k = 0; k < x.cols(); ++k) x(t, k) = gev_from_frechet(frechet(t, k), margins[static_cast<std::size_t>(k)]);
  return x;
}

inline double laplace_draw(Rng& rng) {
  const double u = rng.uniform();
  return u < 0.5 ? std::log(2.0 * u) : -std::log(2.0 * (1.0 - u));
}

// Two-site Laplace-scale panel: column 0 is standard Laplace; whenever it
// exceeds v, column 1 = alpha y + y^beta (mu + sd N(0,1)); otherwise column 1
// is an independent Laplace draw.
inline Matrix conditional_pair(Index rows, double v, double alpha, double beta, double mu, double sd, Rng& rng) {
  Matrix y(rows, 2);
  for (Index t = 0; t < rows; ++t) {
    const double y0 = laplace_draw(rng);
    y(t, 0) = y0;
    y(t, 1) = y0 > v ? alpha * y0 + std::pow(y0, beta) * (mu + sd * rng.normal()) : laplace_draw(rng);
  }
  return y;
}

}  // namespace epca::synthetic
