#pragma once

// Generalized Pareto tails above per-site thresholds and the
// empirical-below / GPD-above marginal distribution they induce.

#include "epca/core.hpp"
#include "epca/ingest.hpp"
#include "epca/optim.hpp"
#include "epca/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace epca {

inline constexpr double kShapeZeroTol = 1e-9;

struct GpdParams {
  double sigma = 1.0;
  double xi = 0.0;
  double nll = 0.0;  // negative log-likelihood at (sigma, xi)
};

struct GpdFit {
  std::string id;
  double u = 0.0;
  double sigma = 1.0;
  double xi = 0.0;
  double rate_per_year = 0.0;
  Index n_exceed = 0;
  double q_fit = 0.0;
};

// P(X > u + x | X > u) = (1 + xi x / sigma)_+^{-1/xi}.
inline double gpd_survival(double x, double sigma, double xi) {
  if (x <= 0.0) return 1.0;
  if (std::abs(xi) < kShapeZeroTol) return std::exp(-x / sigma);
  const double z = 1.0 + xi * x / sigma;
  if (z <= 0.0) return 0.0;
  return std::exp(-std::log1p(xi * x / sigma) / xi);
}

// Excess x with gpd_survival(x) = s, for s in (0, 1].
inline double gpd_inverse_survival(double s, double sigma, double xi) {
  if (std::abs(xi) < kShapeZeroTol) return -sigma * std::log(s);
  return sigma * std::expm1(-xi * std::log(s)) / xi;
}

inline double gpd_nll(std::span<const double> excesses, double sigma, double xi) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) return std::numeric_limits<double>::infinity();
  const auto n = static_cast<double>(excesses.size());
  if (std::abs(xi) < kShapeZeroTol) {
    double s = 0.0;
    for (double x : excesses) s += x;
    return n * std::log(sigma) + s / sigma;
  }
  double s = 0.0;
  for (double x : excesses) {
    const double z = xi * x / sigma;
    if (z <= -1.0) return std::numeric_limits<double>::infinity();
    s += std::log1p(z);
  }
  return n * std::log(sigma) + (1.0 + 1.0 / xi) * s;
}

namespace detail {

// Scale MLE for a fixed shape: the root of the score
//   (1 + xi) sum x / (sigma + xi x) = n,
// which is unique for xi > -1 because the left side decreases in sigma.
inline double gpd_scale_given_shape(std::span<const double> x, double xi) {
  const auto n = static_cast<double>(x.size());
  const double xmax = *std::max_element(x.begin(), x.end());
  if (std::abs(xi) < kShapeZeroTol) return mean(x);
  if (xi <= -1.0) return -xi * xmax * (1.0 + 1e-12);
  auto score = [&](double sigma) {
    double s = 0.0;
    for (double v : x) s += v / (sigma + xi * v);
    return (1.0 + xi) * s - n;
  };
  double lo = xi < 0.0 ? -xi * xmax : 0.0;
  double hi = std::max(1.0, 2.0 * mean(x));
  while (score(hi) > 0.0) hi *= 2.0;
  if (lo <= 0.0) {
    lo = hi;
    while (score(lo) < 0.0 && lo > 1e-300) lo *= 0.5;
  }
  for (int it = 0; it < 400 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (score(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

// Maximum likelihood GPD fit to positive threshold excesses. With
// fixed_xi, only the scale is estimated.
inline GpdParams fit_gpd(std::span<const double> excesses, std::optional<double> fixed_xi = std::nullopt) {
  if (excesses.size() < 2) throw data_error("fit_gpd: need at least 2 excesses");
  for (double x : excesses)
    if (!(x > 0.0) || !std::isfinite(x)) throw data_error("fit_gpd: excesses must be positive and finite");
  const double m = mean(excesses);
  const double v = variance(excesses);
  if (!(v > 1e-14 * m * m)) throw numerical_error("fit_gpd: degenerate likelihood (all excesses equal)");

  if (fixed_xi) {
    const double sigma = detail::gpd_scale_given_shape(excesses, *fixed_xi);
    return {sigma, *fixed_xi, gpd_nll(excesses, sigma, *fixed_xi)};
  }

  auto objective = [&](const std::vector<double>& p) {
    if (p[1] <= -1.0 || p[1] > 5.0) return std::numeric_limits<double>::infinity();
    return gpd_nll(excesses, std::exp(p[0]), p[1]);
  };

  // Method-of-moments start, then restarts around it.
  const double xi_mom = std::clamp(0.5 * (1.0 - m * m / v), -0.45, 0.9);
  const double sigma_mom = 0.5 * m * (m * m / v + 1.0);
  const std::vector<std::vector<double>> starts = {
      {std::log(sigma_mom), xi_mom},
      {std::log(m), 0.0},
      {std::log(sigma_mom), xi_mom + 0.2},
      {std::log(m * 1.3), xi_mom - 0.2},
      {std::log(m * 0.7), 0.3},
  };
  optim::SimplexResult best;
  bool any_converged = false;
  for (const auto& s0 : starts) {
    auto start = s0;
    if (!std::isfinite(objective(start))) {
      // Move the scale up until the start is inside the support.
      for (int i = 0; i < 60 && !std::isfinite(objective(start)); ++i) start[0] += 0.25;
    }
    auto r = optim::nelder_mead(objective, start, {.initial_step = 0.2});
    // Restart once from the reported optimum to shake off premature collapse.
    r = optim::nelder_mead(objective, r.x, {.initial_step = 0.05});
    any_converged = any_converged || r.converged;
    if (r.value < best.value) best = r;
  }
  if (!any_converged || !std::isfinite(best.value))
    throw numerical_error("fit_gpd: optimizer failed to converge after restarts");
  const double sigma = std::exp(best.x[0]);
  return {sigma, best.x[1], gpd_nll(excesses, sigma, best.x[1])};
}

// Level exceeded on average once every tau years.
inline double return_level(const GpdFit& fit, double tau) {
  if (!(tau > 0.0)) throw config_error("return_level: tau must be positive");
  const double lt = fit.rate_per_year * tau;
  if (lt < 1.0)
    throw config_error("return_level: rate*tau = " + std::to_string(lt) + " < 1 for site '" + fit.id +
                       "'; the level would lie below the threshold");
  if (std::abs(fit.xi) < kShapeZeroTol) return fit.u + fit.sigma * std::log(lt);
  return fit.u + fit.sigma / fit.xi * std::expm1(fit.xi * std::log(lt));
}

// Empirical CDF (rank/(n+1)) up to the threshold, GPD tail above it.
class SemiParametricCdf {
 public:
  SemiParametricCdf() = default;
  SemiParametricCdf(std::vector<double> observed, GpdFit fit) : sorted_(std::move(observed)), fit_(std::move(fit)) {
    std::sort(sorted_.begin(), sorted_.end());
    const auto below = std::upper_bound(sorted_.begin(), sorted_.end(), fit_.u) - sorted_.begin();
    f_u_ = static_cast<double>(below) / (static_cast<double>(sorted_.size()) + 1.0);
  }

  const GpdFit& fit() const { return fit_; }
  const std::vector<double>& sorted() const { return sorted_; }
  double threshold() const { return fit_.u; }
  double at_threshold() const { return f_u_; }

  double eval(double x) const {
    if (x > fit_.u) return 1.0 - survival(x);
    const double n1 = static_cast<double>(sorted_.size()) + 1.0;
    const auto rank = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
    // Below the sample minimum the step CDF would hit 0; use half a step.
    return rank == 0 ? 0.5 / n1 : static_cast<double>(rank) / n1;
  }

  // 1 - eval(x), computed directly in the tail.
  double survival(double x) const {
    if (x > fit_.u) return (1.0 - f_u_) * gpd_survival(x - fit_.u, fit_.sigma, fit_.xi);
    return 1.0 - eval(x);
  }

  double inverse(double p) const {
    if (!(p > 0.0 && p < 1.0)) throw numerical_error("cdf_inverse: p outside (0,1)");
    if (p > f_u_) return inverse_survival(1.0 - p);
    return empirical_inverse(p);
  }

  // x with survival(x) = s; exact in the tail without forming 1 - s.
  double inverse_survival(double s) const {
    if (!(s > 0.0 && s < 1.0)) throw numerical_error("cdf_inverse: survival outside (0,1)");
    const double tail = 1.0 - f_u_;
    if (s < tail) return fit_.u + gpd_inverse_survival(s / tail, fit_.sigma, fit_.xi);
    return empirical_inverse(1.0 - s);
  }

 private:
  double empirical_inverse(double p) const {
    const double n = static_cast<double>(sorted_.size());
    auto i = static_cast<std::size_t>(std::ceil(p * (n + 1.0) - 1e-9));
    i = std::clamp<std::size_t>(i, 1, sorted_.size());
    return sorted_[i - 1];
  }

  std::vector<double> sorted_;
  GpdFit fit_;
  double f_u_ = 0.0;
};

using Margins = std::vector<SemiParametricCdf>;

struct MarginConfig {
  double q_fit = 0.96;
  Index min_exceed = 10;
};

// Per-site threshold at the empirical q_fit quantile of observed values,
// GPD fit to the excesses, and the spliced CDF.
inline Margins fit_site_margins(const DataMatrix& data, const MarginConfig& config,
                                const std::optional<std::vector<double>>& fixed_shapes = std::nullopt) {
  if (!(config.q_fit > 0.0 && config.q_fit < 1.0)) throw config_error("q_fit must lie in (0,1)");
  if (fixed_shapes && static_cast<Index>(fixed_shapes->size()) != data.sites())
    throw config_error("fixed shapes: expected " + std::to_string(data.sites()) + " values");
  Margins out;
  out.reserve(static_cast<std::size_t>(data.sites()));
  for (Index k = 0; k < data.sites(); ++k) {
    const auto& id = data.site_ids[static_cast<std::size_t>(k)];
    auto obs = data.observed(k);
    if (obs.size() < 2) throw data_error("site '" + id + "' has fewer than 2 observations");
    GpdFit fit;
    fit.id = id;
    fit.q_fit = config.q_fit;
    fit.u = empirical_quantile(obs, config.q_fit);
    std::vector<double> excesses;
    for (double x : obs)
      if (x > fit.u) excesses.push_back(x - fit.u);
    fit.n_exceed = static_cast<Index>(excesses.size());
    if (fit.n_exceed < std::max<Index>(config.min_exceed, 2))
      throw data_error("site '" + id + "' has " + std::to_string(fit.n_exceed) + " exceedances of its " +
                       std::to_string(config.q_fit) + " quantile; need " + std::to_string(config.min_exceed));
    try {
      const auto p = fit_gpd(excesses, fixed_shapes ? std::optional<double>((*fixed_shapes)[static_cast<std::size_t>(k)])
                                                     : std::nullopt);
      fit.sigma = p.sigma;
      fit.xi = p.xi;
    } catch (const Error& e) {
      throw Error(e.kind(), "site '" + id + "': " + e.what());
    }
    const double years = static_cast<double>(obs.size()) / data.periods_per_year;
    fit.rate_per_year = static_cast<double>(fit.n_exceed) / years;
    out.emplace_back(std::move(obs), std::move(fit));
  }
  return out;
}

inline std::vector<double> shapes_of(const Margins& margins) {
  std::vector<double> xi;
  for (const auto& m : margins) xi.push_back(m.fit().xi);
  return xi;
}

}  // namespace epca
