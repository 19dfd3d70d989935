#pragma once

#include "epca/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace epca {

struct SymmetricEigen {
  Matrix vectors;  // columns are eigenvectors
  Vector values;   // nonincreasing
  int sweeps = 0;
};

// Cyclic Jacobi eigensolver for symmetric matrices.
//
// Sweeps until the off-diagonal Frobenius mass drops below 1e-12 relative to
// the matrix's Frobenius norm. Eigenpairs are sorted by nonincreasing value
// (stable, so ties keep Jacobi order) and each eigenvector is signed so its
// largest-magnitude entry is positive; the output is therefore a pure
// function of the input matrix.
inline SymmetricEigen eig_sym(const Matrix& input, double symmetry_tol = 1e-10) {
  const Index n = input.rows();
  if (input.cols() != n) throw numerical_error("eig_sym: matrix is not square");
  const double scale = std::max(1.0, input.cwiseAbs().maxCoeff());
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (std::abs(input(i, j) - input(j, i)) > symmetry_tol * scale)
        throw numerical_error("eig_sym: matrix is not symmetric");

  Matrix a = 0.5 * (input + input.transpose());
  Matrix v = Matrix::Identity(n, n);
  const double total = a.norm();
  auto off_mass = [&] {
    double s = 0.0;
    for (Index i = 0; i < n; ++i)
      for (Index j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  SymmetricEigen out;
  constexpr int kMaxSweeps = 100;
  for (; out.sweeps < kMaxSweeps; ++out.sweeps) {
    if (off_mass() <= 1e-12 * total || total == 0.0) break;
    for (Index p = 0; p < n - 1; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        // Rotation angle from Golub & Van Loan, Algorithm 8.5.1.
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  if (out.sweeps == kMaxSweeps) throw numerical_error("eig_sym: Jacobi sweeps did not converge");

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index i, Index j) { return a(i, i) > a(j, j); });
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (Index c = 0; c < n; ++c) {
    const Index src = order[static_cast<std::size_t>(c)];
    out.values(c) = a(src, src);
    Vector col = v.col(src);
    Index arg = 0;
    for (Index k = 1; k < n; ++k)
      if (std::abs(col(k)) > std::abs(col(arg))) arg = k;
    if (col(arg) < 0.0) col = -col;
    out.vectors.col(c) = col;
  }
  return out;
}

}  // namespace epca
