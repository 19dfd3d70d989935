#pragma once

// Small derivative-free optimizers used by the likelihood fits.

#include "epca/core.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace epca::optim {

struct SimplexResult {
  std::vector<double> x;
  double value = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

struct SimplexOptions {
  double initial_step = 0.1;
  double f_tol = 1e-12;
  double x_tol = 1e-10;
  int max_iter = 5000;
};

// Nelder-Mead with standard coefficients. The objective may return +inf to
// signal an infeasible point; such vertices are always rejected in favour of
// any finite one.
inline SimplexResult nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> start, const SimplexOptions& opt = {}) {
  const std::size_t n = start.size();
  std::vector<std::vector<double>> pts(n + 1, start);
  std::vector<double> vals(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double step = start[i] != 0.0 ? opt.initial_step * std::max(1.0, std::abs(start[i]))
                                         : opt.initial_step;
    pts[i + 1][i] += step;
  }
  for (std::size_t i = 0; i <= n; ++i) vals[i] = f(pts[i]);

  std::vector<std::size_t> order(n + 1);
  SimplexResult res;
  for (int it = 0; it < opt.max_iter; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return vals[a] < vals[b]; });
    const std::size_t best = order.front();
    const std::size_t worst = order.back();
    const std::size_t second = order[n - 1];
    res.iterations = it;

    double xspread = 0.0;
    for (std::size_t i = 0; i <= n; ++i)
      for (std::size_t d = 0; d < n; ++d)
        xspread = std::max(xspread, std::abs(pts[i][d] - pts[best][d]));
    if (std::isfinite(vals[worst]) &&
        std::abs(vals[worst] - vals[best]) <= opt.f_tol * (1.0 + std::abs(vals[best])) &&
        xspread <= opt.x_tol * (1.0 + std::abs(pts[best][0]))) {
      res.converged = true;
      break;
    }

    std::vector<double> centroid(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == worst) continue;
      for (std::size_t d = 0; d < n; ++d) centroid[d] += pts[i][d] / static_cast<double>(n);
    }
    auto along = [&](double t) {
      std::vector<double> p(n);
      for (std::size_t d = 0; d < n; ++d) p[d] = centroid[d] + t * (pts[worst][d] - centroid[d]);
      return p;
    };

    auto xr = along(-1.0);
    const double fr = f(xr);
    if (fr < vals[best]) {
      auto xe = along(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        pts[worst] = std::move(xe);
        vals[worst] = fe;
      } else {
        pts[worst] = std::move(xr);
        vals[worst] = fr;
      }
      continue;
    }
    if (fr < vals[second]) {
      pts[worst] = std::move(xr);
      vals[worst] = fr;
      continue;
    }
    auto xc = fr < vals[worst] ? along(-0.5) : along(0.5);
    const double fc = f(xc);
    if (fc < std::min(fr, vals[worst])) {
      pts[worst] = std::move(xc);
      vals[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i <= n; ++i) {
      if (i == best) continue;
      for (std::size_t d = 0; d < n; ++d) pts[i][d] = pts[best][d] + 0.5 * (pts[i][d] - pts[best][d]);
      vals[i] = f(pts[i]);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i <= n; ++i)
    if (vals[i] < vals[best]) best = i;
  res.x = pts[best];
  res.value = vals[best];
  return res;
}

// Golden-section minimisation of a unimodal function on [lo, hi].
inline double golden_section(const std::function<double(double)>& f, double lo, double hi,
                             double tol = 1e-10, int max_iter = 200) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > tol * (std::abs(a) + std::abs(b) + tol); ++it) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return fc <= fd ? c : d;
}

}  // namespace epca::optim
