#pragma once

// Observed-vs-generated validation summaries.

#include "epca/core.hpp"
#include "epca/marginals.hpp"
#include "epca/stats.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace epca {

// k largest values, descending.
inline std::vector<double> top_order_stats(std::span<const double> series, std::size_t k) {
  if (series.size() < k)
    throw data_error("top_order_stats: series of length " + std::to_string(series.size()) + " < k = " +
                     std::to_string(k));
  std::vector<double> v(series.begin(), series.end());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
  v.resize(k);
  return v;
}

struct GroupSeries {
  std::vector<double> max;
  std::vector<double> l2;
};

inline GroupSeries group_summaries(const Matrix& events, const std::vector<Index>& group) {
  if (group.empty()) throw config_error("group_summaries: empty group");
  for (Index k : group)
    if (k < 0 || k >= events.cols()) throw config_error("group_summaries: site index out of range");
  GroupSeries out;
  out.max.reserve(static_cast<std::size_t>(events.rows()));
  out.l2.reserve(static_cast<std::size_t>(events.rows()));
  for (Index e = 0; e < events.rows(); ++e) {
    double mx = events(e, group.front());
    double ss = 0.0;
    for (Index k : group) {
      mx = std::max(mx, events(e, k));
      ss += events(e, k) * events(e, k);
    }
    out.max.push_back(mx);
    out.l2.push_back(std::sqrt(ss));
  }
  return out;
}

struct QqRow {
  std::size_t rank = 0;  // 1 = largest
  double observed = 0.0;
  double lo = 0.0;
  double med = 0.0;
  double hi = 0.0;
  bool covered = false;
};

struct QqBand {
  double level = 0.95;
  std::vector<QqRow> rows;

  double coverage() const {
    if (rows.empty()) return 0.0;
    std::size_t c = 0;
    for (const auto& r : rows) c += r.covered ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(rows.size());
  }
};

// Minimum number of simulated sets for a central interval at this level.
inline std::size_t min_sets_for_level(double level) {
  return static_cast<std::size_t>(std::ceil(1.0 / (1.0 - level) - 1e-9));
}

// Per-rank central `level` interval of the simulated sets' order statistics.
// simulated_topk[s] holds the descending top-k of set s.
inline QqBand qq_band(const std::vector<double>& observed_topk, const std::vector<std::vector<double>>& simulated_topk,
                      double level) {
  if (!(level > 0.0 && level < 1.0)) throw config_error("qq_band: level must lie in (0,1)");
  if (simulated_topk.size() < min_sets_for_level(level))
    throw data_error("qq_band: " + std::to_string(simulated_topk.size()) + " simulated sets; need at least " +
                     std::to_string(min_sets_for_level(level)) + " for level " + std::to_string(level));
  QqBand band;
  band.level = level;
  const double a = 0.5 * (1.0 - level);
  std::vector<double> col(simulated_topk.size());
  for (std::size_t r = 0; r < observed_topk.size(); ++r) {
    for (std::size_t s = 0; s < simulated_topk.size(); ++s) {
      if (simulated_topk[s].size() <= r) throw data_error("qq_band: simulated set shorter than observed top-k");
      col[s] = simulated_topk[s][r];
    }
    std::sort(col.begin(), col.end());
    QqRow row;
    row.rank = r + 1;
    row.observed = observed_topk[r];
    row.lo = empirical_quantile_sorted(col, a);
    row.med = empirical_quantile_sorted(col, 0.5);
    row.hi = empirical_quantile_sorted(col, 1.0 - a);
    row.covered = row.lo <= row.observed && row.observed <= row.hi;
    band.rows.push_back(row);
  }
  return band;
}

inline const std::vector<double>& default_return_periods() {
  static const std::vector<double> ladder{2, 5, 10, 25, 50, 100, 200};
  return ladder;
}

// Per site: the largest return period whose level the event reaches
// (inclusive), or 0 when below every level.
struct SeverityMap {
  std::vector<double> ladder;
  std::vector<double> classes;
};

inline void validate_ladder(const std::vector<double>& taus) {
  if (taus.empty()) throw config_error("return-period ladder is empty");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0)) throw config_error("return periods must be positive");
    if (i > 0 && !(taus[i] > taus[i - 1])) throw config_error("return periods must be strictly increasing");
  }
}

inline SeverityMap classify_severity(const Vector& event, const std::vector<GpdFit>& fits,
                                     const std::vector<double>& taus) {
  validate_ladder(taus);
  if (static_cast<std::size_t>(event.size()) != fits.size())
    throw config_error("classify_severity: event has " + std::to_string(event.size()) + " sites, fits have " +
                       std::to_string(fits.size()));
  SeverityMap out;
  out.ladder = taus;
  out.classes.assign(fits.size(), 0.0);
  for (std::size_t k = 0; k < fits.size(); ++k) {
    for (double tau : taus) {
      if (event(static_cast<Index>(k)) >= return_level(fits[k], tau))
        out.classes[k] = tau;
      else
        break;
    }
  }
  return out;
}

inline std::vector<GpdFit> fits_of(const Margins& margins) {
  std::vector<GpdFit> out;
  for (const auto& m : margins) out.push_back(m.fit());
  return out;
}

struct ChiEstimate {
  double chi = 0.0;
  Index joint = 0;
  Index conditioning = 0;
  bool reliable = true;
};

namespace detail {

// Ranks scaled to (0,1) as rank/(n+1); ties share their average rank.
inline std::vector<double> scaled_ranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) out[idx[t]] = avg / (static_cast<double>(n) + 1.0);
    i = j + 1;
  }
  return out;
}

}  // namespace detail

// Empirical P(U_j > q | U_i > q) on rank-transformed columns.
inline ChiEstimate pairwise_dependence(const Matrix& panel, Index i, Index j, double q) {
  if (!(q > 0.5 && q < 1.0)) throw config_error("pairwise_dependence: q must lie in (0.5, 1)");
  if (i < 0 || j < 0 || i >= panel.cols() || j >= panel.cols())
    throw config_error("pairwise_dependence: site index out of range");
  const Vector ci = panel.col(i), cj = panel.col(j);
  const auto ri = detail::scaled_ranks(std::span<const double>(ci.data(), static_cast<std::size_t>(ci.size())));
  const auto rj = detail::scaled_ranks(std::span<const double>(cj.data(), static_cast<std::size_t>(cj.size())));
  ChiEstimate est;
  for (std::size_t t = 0; t < ri.size(); ++t) {
    if (ri[t] <= q) continue;
    ++est.conditioning;
    if (rj[t] > q) ++est.joint;
  }
  est.chi = est.conditioning > 0 ? static_cast<double>(est.joint) / static_cast<double>(est.conditioning) : 0.0;
  est.reliable = est.joint >= 5;
  return est;
}

}  // namespace epca
