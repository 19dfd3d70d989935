#pragma once

// Conditional-extremes baseline: Laplace margins, per-site fits of
//   Y_{-k} | Y_k > v_k  =  alpha_k Y_k + Y_k^{beta_k} Z_k
// with a Gaussian pseudo-likelihood, and the three-step sampler.

#include "epca/core.hpp"
#include "epca/generator.hpp"
#include "epca/marginals.hpp"
#include "epca/optim.hpp"
#include "epca/rng.hpp"
#include "epca/stats.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace epca {

inline double laplace_quantile(double p) { return p < 0.5 ? std::log(2.0 * p) : -std::log(2.0 * (1.0 - p)); }
inline double laplace_cdf(double y) { return y < 0.0 ? 0.5 * std::exp(y) : 1.0 - 0.5 * std::exp(-y); }

// Standard Laplace value of x under its marginal CDF, using the survival
// function in the upper half.
inline double to_laplace_value(double x, const SemiParametricCdf& cdf) {
  const double p = cdf.eval(x);
  if (!(p > 0.0 && p < 1.0)) throw numerical_error("to_laplace: CDF returned " + std::to_string(p));
  if (p < 0.5) return std::log(2.0 * p);
  return -std::log(2.0 * cdf.survival(x));
}

inline double from_laplace_value(double y, const SemiParametricCdf& cdf) {
  if (y > 0.0) return cdf.inverse_survival(0.5 * std::exp(-y));
  return cdf.inverse(0.5 * std::exp(y));
}

inline Matrix to_laplace(const DataMatrix& data, const Margins& margins, const CompleteIndex& rows) {
  Matrix y(static_cast<Index>(rows.rows.size()), data.sites());
  for (std::size_t i = 0; i < rows.rows.size(); ++i)
    for (Index k = 0; k < data.sites(); ++k)
      y(static_cast<Index>(i), k) = to_laplace_value(data.values(rows.rows[i], k), margins[static_cast<std::size_t>(k)]);
  return y;
}

struct HtSiteFit {
  Index site = 0;
  double v = 0.0;
  std::vector<Index> others;  // the K-1 non-conditioning sites, ascending
  Vector alpha;
  Vector beta;
  Matrix residuals;  // n_exceed x (K-1)
  Index n_exceed = 0;
};

struct HtOptions {
  double v_quantile = 0.93;
  Index min_exceed = 20;
  double beta_min = -1.0;
};

namespace detail {

// Profile negative log-likelihood of (alpha, beta) with the residual mean
// and variance at their closed-form maximisers.
inline double ht_profile_nll(const Vector& yk, const Vector& yj, const Vector& log_yk, double alpha, double beta) {
  const Index n = yk.size();
  double s = 0.0, ss = 0.0, sum_log = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double r = (yj(i) - alpha * yk(i)) * std::exp(-beta * log_yk(i));
    s += r;
    ss += r * r;
    sum_log += log_yk(i);
  }
  const double mu = s / static_cast<double>(n);
  const double var = std::max(ss / static_cast<double>(n) - mu * mu, 1e-24);
  return beta * sum_log + 0.5 * static_cast<double>(n) * std::log(var);
}

}  // namespace detail

// Fits alpha/beta for every other site given exceedances of site k on the
// Laplace-scale panel y.
inline HtSiteFit fit_ht(const Matrix& y, Index k, const HtOptions& opt = {}) {
  const Index K = y.cols();
  if (k < 0 || k >= K) throw config_error("fit_ht: site index out of range");
  if (!(opt.v_quantile > 0.5 && opt.v_quantile < 1.0)) throw config_error("fit_ht: v_quantile must lie in (0.5,1)");
  HtSiteFit fit;
  fit.site = k;
  std::vector<double> col(y.col(k).data(), y.col(k).data() + y.rows());
  fit.v = empirical_quantile(col, opt.v_quantile);
  std::vector<Index> rows;
  for (Index t = 0; t < y.rows(); ++t)
    if (y(t, k) > fit.v) rows.push_back(t);
  fit.n_exceed = static_cast<Index>(rows.size());
  if (fit.n_exceed < opt.min_exceed)
    throw data_error("fit_ht: site " + std::to_string(k) + " has " + std::to_string(fit.n_exceed) +
                     " exceedances, need " + std::to_string(opt.min_exceed));
  if (!(fit.v > 0.0)) throw data_error("fit_ht: threshold must be positive on the Laplace scale");

  Vector yk(fit.n_exceed), log_yk(fit.n_exceed);
  for (Index i = 0; i < fit.n_exceed; ++i) {
    yk(i) = y(rows[static_cast<std::size_t>(i)], k);
    log_yk(i) = std::log(yk(i));
  }
  for (Index j = 0; j < K; ++j)
    if (j != k) fit.others.push_back(j);
  fit.alpha.resize(K - 1);
  fit.beta.resize(K - 1);
  fit.residuals.resize(fit.n_exceed, K - 1);

  for (Index c = 0; c < K - 1; ++c) {
    const Index j = fit.others[static_cast<std::size_t>(c)];
    Vector yj(fit.n_exceed);
    for (Index i = 0; i < fit.n_exceed; ++i) yj(i) = y(rows[static_cast<std::size_t>(i)], j);
    auto objective = [&](const std::vector<double>& p) {
      if (p[0] < -1.0 || p[0] > 1.0 || p[1] < opt.beta_min || p[1] > 1.0)
        return std::numeric_limits<double>::infinity();
      return detail::ht_profile_nll(yk, yj, log_yk, p[0], p[1]);
    };
    // Coarse grid over the whole box (edges included, where degenerate
    // fits live) for the start, then simplex refinement.
    std::vector<double> start{0.0, 0.0};
    double best = objective(start);
    for (int ia = 0; ia <= 20; ++ia)
      for (int ib = 0; ib <= 20; ++ib) {
        const double a = -1.0 + ia / 10.0;
        const double b = opt.beta_min + (1.0 - opt.beta_min) * ib / 20.0;
        const double f = objective({a, b});
        if (f < best) {
          best = f;
          start = {a, b};
        }
      }
    auto r = optim::nelder_mead(objective, start, {.initial_step = 0.05, .f_tol = 1e-13, .x_tol = 1e-9});
    r = optim::nelder_mead(objective, r.x, {.initial_step = 0.01, .f_tol = 1e-13, .x_tol = 1e-9});
    if (!std::isfinite(r.value)) throw numerical_error("fit_ht: optimizer failed for site pair");
    fit.alpha(c) = r.x[0];
    fit.beta(c) = r.x[1];
    for (Index i = 0; i < fit.n_exceed; ++i)
      fit.residuals(i, c) = (yj(i) - r.x[0] * yk(i)) * std::exp(-r.x[1] * log_yk(i));
  }
  return fit;
}

inline std::vector<HtSiteFit> fit_ht_all(const Matrix& y, const HtOptions& opt = {}) {
  std::vector<HtSiteFit> fits;
  for (Index k = 0; k < y.cols(); ++k) fits.push_back(fit_ht(y, k, opt));
  return fits;
}

enum class ConditioningWeights { uniform, exceedance_rate };

// Three-step sampler: conditioning site and its Laplace-tail value, a
// residual vector from that site's bank, then the other K-1 sites.
inline EventSet ht_generate(const std::vector<HtSiteFit>& fits, const Margins& margins, Index n_events, Rng& rng,
                            ConditioningWeights weights = ConditioningWeights::uniform) {
  if (n_events < 1) throw config_error("ht_generate: n_events must be positive");
  const auto K = static_cast<Index>(fits.size());
  if (K < 2 || margins.size() != fits.size()) throw config_error("ht_generate: need one fit and margin per site");
  std::vector<double> cum(fits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < fits.size(); ++k) {
    total += weights == ConditioningWeights::uniform ? 1.0 : static_cast<double>(fits[k].n_exceed);
    cum[k] = total;
  }
  EventSet set;
  set.generator = "ht";
  set.latent.resize(n_events, K);
  set.events.resize(n_events, K);
  set.radii.resize(n_events);
  set.conditioning_site.resize(static_cast<std::size_t>(n_events));
  for (const auto& m : margins) set.site_ids.push_back(m.fit().id);
  for (Index e = 0; e < n_events; ++e) {
    const double u = rng.uniform() * total;
    std::size_t k = 0;
    while (k + 1 < cum.size() && u > cum[k]) ++k;
    const auto& f = fits[k];
    const double yk = f.v + rng.exponential();
    const auto row = static_cast<Index>(rng.below(static_cast<std::uint64_t>(f.residuals.rows())));
    set.latent(e, static_cast<Index>(k)) = yk;
    for (Index c = 0; c < K - 1; ++c)
      set.latent(e, f.others[static_cast<std::size_t>(c)]) = f.alpha(c) * yk + std::pow(yk, f.beta(c)) * f.residuals(row, c);
    for (Index s = 0; s < K; ++s)
      set.events(e, s) = from_laplace_value(set.latent(e, s), margins[static_cast<std::size_t>(s)]);
    set.radii(e) = yk;
    set.conditioning_site[static_cast<std::size_t>(e)] = static_cast<Index>(k);
  }
  return set;
}

}  // namespace epca
