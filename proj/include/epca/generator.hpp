#pragma once

// Event-set generator built on the extremal principal components:
// angular sample and its (m+1)-dimensional summary, spherical KDE,
// nearest-neighbour reconstruction of the residual components, Frechet
// radii, dimension selection by leave-one-out cross-validation, and the
// nonparametric bootstrap wrapper.

#include "epca/core.hpp"
#include "epca/extremal_pca.hpp"
#include "epca/ingest.hpp"
#include "epca/marginals.hpp"
#include "epca/parallel.hpp"
#include "epca/rng.hpp"
#include "epca/spherical.hpp"
#include "epca/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace epca {

// Angles of the retained extreme PC vectors (w) and their images on S^m (z).
struct AngularSample {
  Matrix w;  // n x K
  Matrix z;  // n x (m+1)
  double r_v = 0.0;
  double q_rv = 0.0;
  Index m = 1;
  std::vector<Index> rows;  // source row of each retained vector

  Index size() const { return w.rows(); }
};

// z_j = w_j for j < m; the last coordinate carries the norm of the remaining
// block w_{m..K-1} with the sign of w_m (zero counts as positive).
inline Vector augment_angle(const Eigen::Ref<const Vector>& w, Index m) {
  Vector z(m + 1);
  z.head(m) = w.head(m);
  const double rest = w.tail(w.size() - m).norm();
  z(m) = w(m) >= 0.0 ? rest : -rest;
  return z;
}

inline AngularSample build_angular_at(const Matrix& scores, double r_v, Index m, double q_rv = 0.0) {
  const Index K = scores.cols();
  if (m < 1 || m > K - 1)
    throw config_error("m = " + std::to_string(m) + " outside [1, " + std::to_string(K - 1) + "]");
  AngularSample a;
  a.r_v = r_v;
  a.q_rv = q_rv;
  a.m = m;
  for (Index t = 0; t < scores.rows(); ++t)
    if (scores.row(t).norm() > r_v) a.rows.push_back(t);
  const auto n = static_cast<Index>(a.rows.size());
  if (n < 2) throw numerical_error("build_angular: " + std::to_string(n) + " PC vectors above r_V");
  a.w.resize(n, K);
  a.z.resize(n, m + 1);
  for (Index i = 0; i < n; ++i) {
    const Vector v = scores.row(a.rows[static_cast<std::size_t>(i)]).transpose();
    a.w.row(i) = (v / v.norm()).transpose();
    a.z.row(i) = augment_angle(a.w.row(i).transpose(), m).transpose();
  }
  return a;
}

// r_V at the empirical q_rv quantile of ||v_t||.
inline double radial_threshold(const Matrix& scores, double q_rv) {
  if (!(q_rv > 0.0 && q_rv < 1.0)) throw config_error("q_rv must lie in (0,1)");
  const Vector r = row_norms(scores);
  return empirical_quantile(std::vector<double>(r.data(), r.data() + r.size()), q_rv);
}

inline AngularSample build_angular(const Matrix& scores, double q_rv, Index m) {
  return build_angular_at(scores, radial_threshold(scores, q_rv), m, q_rv);
}

// argmax_i z_i . z_star, evaluated as argmin ||z_i - z_star||^2 so that
// directions closer than sqrt(eps) stay distinguishable; ties go to the
// lowest index.
inline Index nearest_neighbor(const Vector& z_star, const AngularSample& angular) {
  Index best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < angular.z.rows(); ++i) {
    const double d = (angular.z.row(i) - z_star.transpose()).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

// w_star = (z_1..z_m, |z_{m+1} / z_{q,m+1}| w_{q,m+1..K}).
inline Vector reconstruct_w(const Vector& z_star, Index q, const AngularSample& angular) {
  const Index m = angular.m;
  const Index K = angular.w.cols();
  Vector w(K);
  w.head(m) = z_star.head(m);
  const double zq = angular.z(q, m);
  if (zq != 0.0) {
    const double scale = std::abs(z_star(m) / zq);
    w.tail(K - m) = scale * angular.w.row(q).tail(K - m).transpose();
    return w;
  }
  w.tail(K - m).setZero();
  if (z_star(m) != 0.0) {
    log(LogLevel::debug, "reconstruct_w: neighbour has no residual block; using a zero residual");
    w /= w.norm();
  }
  return w;
}

// Inverse CDF of P(R <= r) = exp(-(r/c)^-2).
inline double radius_quantile(double c, double u) { return c / std::sqrt(-std::log(u)); }

// Frechet(2) radius with scale c; with min_radius > 0 the draw is
// conditioned on R > min_radius by inverting the truncated CDF.
inline double sample_radius(double c, Rng& rng, double min_radius = 0.0) {
  const double k = c;
  const double u = rng.uniform();
  if (!(min_radius > 0.0)) return radius_quantile(k, u);
  // Work with upper-tail mass: s0 = 1 - F(min_radius), draw s uniform on (0, s0).
  const double s0 = -std::expm1(-std::pow(min_radius / k, -2.0));
  const double s = s0 * u;
  return k / std::sqrt(-std::log1p(-s));
}

enum class ResidualSampler { nearest_neighbour };

// Scale c of the radial law P(||V|| <= r) = exp(-(r/c)^-2). tail_mass uses
// c = sqrt(trace TPDM) = sqrt(K), the total mass of the angular measure;
// sites uses c = K.
enum class RadialScale { tail_mass, sites };

inline double radial_scale(RadialScale law, const Tpdm& tpdm) {
  return law == RadialScale::sites ? static_cast<double>(tpdm.dim()) : std::sqrt(tpdm.sigma.trace());
}

struct GeneratorConfig {
  double q_radial = 0.94;
  double q_rv = 0.94;
  Index m = 7;
  KdeOptions kde{};
  ResidualSampler residual = ResidualSampler::nearest_neighbour;
  RadialScale radial = RadialScale::tail_mass;
};

struct GeneratorModel {
  Tpdm tpdm;
  Margins margins;
  AngularSample angular;
  VmfKernel kernel;
  double radial_scale = 1.0;
  std::vector<std::string> site_ids;

  Index sites() const { return tpdm.dim(); }
  Index m() const { return angular.m; }
};

struct EventSet {
  Matrix events;  // N x K on the data scale
  Matrix latent;  // N x K on the generator's standardised scale
  Vector radii;  // r* per event (epca); conditioning value y_k (ht)
  std::vector<Index> conditioning_site;  // ht only
  std::uint64_t seed = 0;
  Index m = 0;
  Index replicate_id = 0;
  std::string generator = "epca";
  std::vector<std::string> site_ids;

  Index size() const { return events.rows(); }
};

// Fits TPDM, angular sample and KDE on an already standardised panel.
inline GeneratorModel fit_generator_standardised(const Matrix& frechet, Margins margins, const GeneratorConfig& cfg,
                                                 std::vector<std::string> site_ids = {}) {
  GeneratorModel model;
  model.tpdm = estimate_tpdm(frechet, cfg.q_radial);
  const Matrix scores = pc_scores(frechet, model.tpdm);
  model.angular = build_angular(scores, cfg.q_rv, cfg.m);
  model.kernel = kde_fit(model.angular.z, cfg.kde);
  model.radial_scale = radial_scale(cfg.radial, model.tpdm);
  model.margins = std::move(margins);
  model.site_ids = std::move(site_ids);
  return model;
}

struct MarginPlan {
  // Shape estimation threshold (free fits) and the threshold of the final
  // scale fit and CDF splice.
  double q_fit = 0.94;
  double q_transform = 0.96;
  Index min_exceed = 10;
};

// Two-step margins: shapes from free per-site fits at q_fit (unless supplied),
// then scale-only fits with those shapes at q_transform.
inline Margins fit_margins(const DataMatrix& data, const MarginPlan& plan,
                           const std::optional<std::vector<double>>& fixed_shapes = std::nullopt) {
  std::vector<double> shapes;
  if (fixed_shapes) {
    shapes = *fixed_shapes;
  } else {
    shapes = shapes_of(fit_site_margins(data, {plan.q_fit, plan.min_exceed}));
  }
  return fit_site_margins(data, {plan.q_transform, plan.min_exceed}, shapes);
}

inline GeneratorModel fit_generator(const DataMatrix& data, const MarginPlan& plan, const GeneratorConfig& cfg,
                                    const std::optional<std::vector<double>>& fixed_shapes = std::nullopt) {
  auto margins = fit_margins(data, plan, fixed_shapes);
  const auto rows = complete_rows(data);
  const auto panel = to_frechet(data, margins, rows);
  return fit_generator_standardised(panel.values, std::move(margins), cfg, data.site_ids);
}

// Angular draw on S^{K-1}: KDE sample on S^m mapped through the nearest
// retained extreme.
inline Vector sample_direction(const GeneratorModel& model, Rng& rng) {
  const Vector z = kde_sample(model.kernel, rng);
  const Index q = nearest_neighbor(z, model.angular);
  return reconstruct_w(z, q, model.angular);
}

// Generated standardised event for PC vector v: tau(U v), floored at the
// smallest positive double when tau underflows.
inline Vector standardised_event(const Vector& v, const Tpdm& tpdm) {
  Vector x = from_pc(v, tpdm);
  for (Index k = 0; k < x.size(); ++k) x(k) = std::max(x(k), std::numeric_limits<double>::denorm_min());
  return x;
}

// Samples on the standardised scale only (no margins needed).
inline Matrix generate_standardised(const GeneratorModel& model, Index n, Rng& rng, double min_radius,
                                    Vector* radii = nullptr) {
  const Index K = model.sites();
  Matrix out(n, K);
  if (radii) radii->resize(n);
  for (Index e = 0; e < n; ++e) {
    const Vector w = sample_direction(model, rng);
    const double r = sample_radius(model.radial_scale, rng, min_radius);
    out.row(e) = standardised_event(r * w, model.tpdm).transpose();
    if (radii) (*radii)(e) = r;
  }
  return out;
}

inline EventSet generate(const GeneratorModel& model, Index n_events, Rng& rng, double min_radius = 0.0) {
  if (n_events < 1) throw config_error("generate: n_events must be positive");
  if (model.margins.size() != static_cast<std::size_t>(model.sites()))
    throw config_error("generate: model has no fitted margins");
  EventSet set;
  set.latent = generate_standardised(model, n_events, rng, min_radius, &set.radii);
  set.events.resize(n_events, model.sites());
  for (Index e = 0; e < n_events; ++e) {
    const Vector x = from_frechet(set.latent.row(e).transpose(), model.margins);
    if (!x.allFinite()) throw numerical_error("generate: non-finite event on the data scale");
    set.events.row(e) = x.transpose();
  }
  set.m = model.m();
  set.site_ids = model.site_ids;
  return set;
}

// RNG stream used for the events of one replicate.
inline Rng event_rng(std::uint64_t seed, Index replicate) {
  return Rng(seed, stage::generate, static_cast<std::uint64_t>(replicate));
}

// ---------------------------------------------------------------------------
// Dimension selection.

struct SelectMConfig {
  std::vector<Index> m_grid;
  Index samples_per_fold = 2000;
  double q_radial = 0.94;
  double q_rv = 0.94;
  KdeOptions kde{};
  RadialScale radial = RadialScale::tail_mass;
  // Draw radii above r_V so samples are compared with extremes.
  bool condition_on_rv = true;
  int ci_resamples = 1000;
  double ci_level = 0.90;
  unsigned jobs = 1;
};

struct DbarPoint {
  Index m = 0;
  double dbar = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct SelectMResult {
  Index m_opt = 0;
  std::vector<DbarPoint> curve;
  Matrix fold_errors;  // folds x |m_grid|
  double r0 = 0.0;
  double r_v = 0.0;
};

// D = 1 - max_j cos(x, x_j) over the rows of samples.
inline double angular_miss(const Vector& target, const Matrix& samples) {
  const Vector t = target / target.norm();
  double best = -1.0;
  for (Index j = 0; j < samples.rows(); ++j) {
    const double c = samples.row(j).dot(t) / samples.row(j).norm();
    best = std::max(best, c);
  }
  return 1.0 - best;
}

// Leave-one-out over the TPDM extremes. The radial threshold r0 and r_V are
// computed once on the full panel; each fold re-estimates the TPDM from the
// remaining rows, fits a generator for every m and scores the held-out event
// by its angular distance to the nearest generated sample.
inline SelectMResult select_m(const Matrix& frechet, const SelectMConfig& cfg, std::uint64_t seed) {
  if (cfg.m_grid.empty()) throw config_error("select_m: m_grid is empty");
  const Index K = frechet.cols();
  for (Index m : cfg.m_grid)
    if (m < 1 || m > K - 1) throw config_error("select_m: m = " + std::to_string(m) + " outside [1, K-1]");
  if (cfg.samples_per_fold < 1) throw config_error("select_m: samples_per_fold must be positive");

  SelectMResult res;
  const Vector r = row_norms(frechet);
  res.r0 = empirical_quantile(std::vector<double>(r.data(), r.data() + r.size()), cfg.q_radial);
  std::vector<Index> extremes;
  for (Index t = 0; t < frechet.rows(); ++t)
    if (r(t) > res.r0) extremes.push_back(t);
  if (extremes.size() < 3) throw numerical_error("select_m: need at least 3 extreme events");
  {
    Tpdm full = estimate_tpdm_at(frechet, res.r0, cfg.q_radial);
    res.r_v = radial_threshold(pc_scores(frechet, full), cfg.q_rv);
  }

  const auto folds = extremes.size();
  const auto grid = cfg.m_grid.size();
  res.fold_errors.resize(static_cast<Index>(folds), static_cast<Index>(grid));
  const Rng root(seed, stage::select_m, 0);
  parallel_for(folds, cfg.jobs, [&](std::size_t i) {
    const Index held = extremes[i];
    Matrix rest(frechet.rows() - 1, K);
    rest.topRows(held) = frechet.topRows(held);
    rest.bottomRows(frechet.rows() - held - 1) = frechet.bottomRows(frechet.rows() - held - 1);
    const Vector target = frechet.row(held).transpose();
    try {
      GeneratorModel model;
      model.tpdm = estimate_tpdm_at(rest, res.r0, cfg.q_radial);
      model.radial_scale = radial_scale(cfg.radial, model.tpdm);
      const Matrix scores = pc_scores(rest, model.tpdm);
      for (std::size_t g = 0; g < grid; ++g) {
        model.angular = build_angular_at(scores, res.r_v, cfg.m_grid[g], cfg.q_rv);
        model.kernel = kde_fit(model.angular.z, cfg.kde);
        Rng rng = root.substream(i, g);
        const Matrix samples =
            generate_standardised(model, cfg.samples_per_fold, rng, cfg.condition_on_rv ? res.r_v : 0.0);
        res.fold_errors(static_cast<Index>(i), static_cast<Index>(g)) = angular_miss(target, samples);
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "select_m fold " + std::to_string(i) + " (row " + std::to_string(held) +
                                "): " + e.what());
    }
  });

  // Fold-level bootstrap of the mean error; the same fold resamples are used
  // for every m.
  Rng ci_rng(seed, stage::fold_ci, 0);
  std::vector<std::vector<double>> boot(grid);
  for (int b = 0; b < cfg.ci_resamples; ++b) {
    std::vector<double> acc(grid, 0.0);
    for (std::size_t i = 0; i < folds; ++i) {
      const auto pick = static_cast<Index>(ci_rng.below(folds));
      for (std::size_t g = 0; g < grid; ++g) acc[g] += res.fold_errors(pick, static_cast<Index>(g));
    }
    for (std::size_t g = 0; g < grid; ++g) boot[g].push_back(acc[g] / static_cast<double>(folds));
  }
  const double alpha = 0.5 * (1.0 - cfg.ci_level);
  for (std::size_t g = 0; g < grid; ++g) {
    DbarPoint pt;
    pt.m = cfg.m_grid[g];
    pt.dbar = res.fold_errors.col(static_cast<Index>(g)).mean();
    if (!boot[g].empty()) {
      pt.lo = empirical_quantile(boot[g], alpha);
      pt.hi = empirical_quantile(boot[g], 1.0 - alpha);
    } else {
      pt.lo = pt.hi = pt.dbar;
    }
    res.curve.push_back(pt);
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid; ++g) {
    const auto& c = res.curve[g];
    const auto& b = res.curve[best];
    if (c.dbar < b.dbar || (c.dbar == b.dbar && c.m < b.m)) best = g;
  }
  res.m_opt = res.curve[best].m;
  return res;
}

// ---------------------------------------------------------------------------
// Bootstrap.

struct BootstrapConfig {
  MarginPlan margins{};
  GeneratorConfig generator{};
  Index n_replicates = 100;
  Index events_per_replicate = 848;
  // false skips resampling and reuses the point model (debugging aid).
  bool resample = true;
  // Per-replicate shape parameters; default holds the point estimates fixed.
  std::optional<std::vector<std::vector<double>>> shape_draws;
  bool condition_on_rv = false;
  double min_success = 0.8;
  unsigned jobs = 1;
};

// Each replicate resamples the panel rows with replacement, refits the
// scales with shapes held fixed, re-estimates TPDM/angles/KDE with the shared
// m and generates events. Replicate r draws from streams keyed by (seed, r).
inline std::vector<EventSet> bootstrap_generate(const DataMatrix& data, const GeneratorModel& point,
                                                const BootstrapConfig& cfg, std::uint64_t seed) {
  if (cfg.n_replicates < 1) throw config_error("bootstrap: n_replicates must be >= 1");
  if (cfg.shape_draws && static_cast<Index>(cfg.shape_draws->size()) < cfg.n_replicates)
    throw config_error("bootstrap: fewer shape draws than replicates");
  const auto n = static_cast<std::size_t>(cfg.n_replicates);
  std::vector<std::optional<EventSet>> slots(n);
  const auto point_shapes = shapes_of(point.margins);
  GeneratorConfig gen = cfg.generator;
  gen.m = point.m();

  parallel_for(n, cfg.jobs, [&](std::size_t r) {
    try {
      const GeneratorModel* model = &point;
      GeneratorModel refit;
      if (cfg.resample) {
        Rng rows_rng(seed, stage::bootstrap, r);
        std::vector<Index> rows(static_cast<std::size_t>(data.periods()));
        for (auto& t : rows) t = static_cast<Index>(rows_rng.below(static_cast<std::uint64_t>(data.periods())));
        const DataMatrix sample = take_rows(data, rows);
        const auto& shapes = cfg.shape_draws ? (*cfg.shape_draws)[r] : point_shapes;
        auto margins = fit_site_margins(sample, {cfg.margins.q_transform, cfg.margins.min_exceed}, shapes);
        const auto panel = to_frechet(sample, margins, complete_rows(sample));
        refit = fit_generator_standardised(panel.values, std::move(margins), gen, data.site_ids);
        model = &refit;
      }
      Rng rng = event_rng(seed, static_cast<Index>(r));
      EventSet set = generate(*model, cfg.events_per_replicate, rng,
                              cfg.condition_on_rv ? model->angular.r_v : 0.0);
      set.seed = seed;
      set.replicate_id = static_cast<Index>(r);
      slots[r] = std::move(set);
    } catch (const Error& e) {
      log(LogLevel::warn, "bootstrap replicate " + std::to_string(r) + " skipped: " + e.what());
    }
  });

  std::vector<EventSet> out;
  for (auto& s : slots)
    if (s) out.push_back(std::move(*s));
  if (static_cast<double>(out.size()) < cfg.min_success * static_cast<double>(n))
    throw numerical_error("bootstrap: only " + std::to_string(out.size()) + " of " + std::to_string(n) +
                          " replicates succeeded");
  return out;
}

}  // namespace epca
