#pragma once

// Site panels: parsing, period-maximum aggregation and missing-data
// bookkeeping.

#include "epca/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace epca {

// T x K panel of per-period, per-site values. mask(t, k) is true when the
// cell was observed; masked cells hold 0 and must never be read.
struct DataMatrix {
  Matrix values;
  BoolMatrix mask;
  std::vector<std::string> site_ids;
  std::vector<std::string> period_index;
  double periods_per_year = 52.0;

  Index periods() const { return values.rows(); }
  Index sites() const { return values.cols(); }

  // Observed values of one site, in row order.
  std::vector<double> observed(Index k) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(periods()));
    for (Index t = 0; t < periods(); ++t)
      if (mask(t, k)) out.push_back(values(t, k));
    return out;
  }

  Index observed_count(Index k) const { return mask.col(k).count(); }

  void validate() const {
    if (sites() < 2) throw data_error("panel needs at least 2 sites, got " + std::to_string(sites()));
    if (periods() < 2) throw data_error("panel needs at least 2 rows, got " + std::to_string(periods()));
    if (!(periods_per_year > 0.0)) throw config_error("periods_per_year must be positive");
    if (static_cast<Index>(site_ids.size()) != sites() ||
        static_cast<Index>(period_index.size()) != periods())
      throw data_error("panel labels do not match its shape");
    for (Index t = 0; t < periods(); ++t)
      for (Index k = 0; k < sites(); ++k)
        if (mask(t, k) && !std::isfinite(values(t, k)))
          throw data_error("non-finite observed value at row " + std::to_string(t));
  }
};

// Rows of a panel with every site observed.
struct CompleteIndex {
  std::vector<Index> rows;
  double retained_fraction = 0.0;
};

struct IngestConfig {
  double periods_per_year = 52.0;
  // Inclusive month range applied to ISO-8601 dates; wraps around the year
  // end when from > to (e.g. 11..3 keeps November to March).
  std::optional<int> month_from;
  std::optional<int> month_to;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Month of an ISO-8601 date (YYYY-MM-DD...), or nullopt for ordinals.
inline std::optional<int> iso_month(std::string_view date) {
  if (date.size() < 7 || date[4] != '-') return std::nullopt;
  int month = 0;
  const auto [ptr, ec] = std::from_chars(date.data() + 5, date.data() + 7, month);
  if (ec != std::errc{} || ptr != date.data() + 7 || month < 1 || month > 12) return std::nullopt;
  return month;
}

inline bool in_month_range(int month, int from, int to) {
  return from <= to ? (month >= from && month <= to) : (month >= from || month <= to);
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

// Parses a panel CSV: header `date,<site>,...`, one row per period, empty
// cell = missing. Lines beginning with '#' are skipped.
inline DataMatrix parse_panel(std::istream& in, const IngestConfig& config = {}) {
  std::string line;
  std::vector<std::string> header;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    for (auto f : detail::split_commas(t)) header.emplace_back(f);
    break;
  }
  if (header.size() < 2) throw data_error("malformed header: expected a date column and site columns");
  std::set<std::string> seen;
  for (std::size_t c = 1; c < header.size(); ++c) {
    if (header[c].empty()) throw data_error("malformed header: empty site name in column " + std::to_string(c + 1));
    if (!seen.insert(header[c]).second) throw data_error("duplicated site column '" + header[c] + "'");
  }
  const auto K = static_cast<Index>(header.size() - 1);
  if (K < 2) throw data_error("panel needs at least 2 sites, got " + std::to_string(K));

  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> masks;
  std::vector<std::string> dates;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto fields = detail::split_commas(t);
    if (fields.size() != header.size())
      throw data_error("ragged row at line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) +
                       " fields, expected " + std::to_string(header.size()));
    if (config.month_from && config.month_to) {
      const auto month = detail::iso_month(fields[0]);
      if (!month) throw data_error("month filter needs ISO-8601 dates, line " + std::to_string(line_no));
      if (!detail::in_month_range(*month, *config.month_from, *config.month_to)) continue;
    }
    std::vector<double> vals(static_cast<std::size_t>(K), 0.0);
    std::vector<bool> obs(static_cast<std::size_t>(K), false);
    for (Index k = 0; k < K; ++k) {
      const auto cell = fields[static_cast<std::size_t>(k) + 1];
      if (cell.empty()) continue;
      const auto v = detail::parse_double(cell);
      if (!v)
        throw data_error("non-numeric cell '" + std::string(cell) + "' at line " + std::to_string(line_no) +
                         ", site '" + header[static_cast<std::size_t>(k) + 1] + "'");
      vals[static_cast<std::size_t>(k)] = *v;
      obs[static_cast<std::size_t>(k)] = true;
    }
    rows.push_back(std::move(vals));
    masks.push_back(std::move(obs));
    dates.emplace_back(fields[0]);
  }
  if (rows.empty()) throw data_error("no usable rows");

  DataMatrix dm;
  const auto T = static_cast<Index>(rows.size());
  dm.values = Matrix::Zero(T, K);
  dm.mask = BoolMatrix::Constant(T, K, false);
  for (Index t = 0; t < T; ++t)
    for (Index k = 0; k < K; ++k) {
      dm.values(t, k) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
      dm.mask(t, k) = masks[static_cast<std::size_t>(t)][static_cast<std::size_t>(k)];
    }
  dm.site_ids.assign(header.begin() + 1, header.end());
  dm.period_index = std::move(dates);
  dm.periods_per_year = config.periods_per_year;
  if (T < 2) throw data_error("panel needs at least 2 rows, got 1");
  dm.validate();
  return dm;
}

inline DataMatrix load_panel(const std::string& path, const IngestConfig& config = {}) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open input file '" + path + "'");
  try {
    return parse_panel(in, config);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

// Shortest round-trip formatting, so parse(write(x)) is bit-identical.
inline void write_panel(std::ostream& out, const DataMatrix& dm, const std::string& first_column = "date") {
  out << first_column;
  for (const auto& id : dm.site_ids) out << ',' << id;
  out << '\n';
  for (Index t = 0; t < dm.periods(); ++t) {
    out << dm.period_index[static_cast<std::size_t>(t)];
    for (Index k = 0; k < dm.sites(); ++k) {
      out << ',';
      if (dm.mask(t, k)) out << detail::format_double(dm.values(t, k));
    }
    out << '\n';
  }
}

// Block maxima over consecutive groups of period_len rows. A block's cell is
// the max of its observed entries, or missing if none was observed. A
// trailing partial block is dropped.
inline DataMatrix aggregate_period_maxima(const DataMatrix& daily, Index period_len) {
  if (period_len < 1) throw config_error("period_len must be >= 1");
  if (period_len > daily.periods())
    throw config_error("period_len " + std::to_string(period_len) + " exceeds panel length " +
                       std::to_string(daily.periods()));
  const Index blocks = daily.periods() / period_len;
  DataMatrix out;
  out.values = Matrix::Zero(blocks, daily.sites());
  out.mask = BoolMatrix::Constant(blocks, daily.sites(), false);
  out.site_ids = daily.site_ids;
  out.periods_per_year = daily.periods_per_year / static_cast<double>(period_len);
  out.period_index.reserve(static_cast<std::size_t>(blocks));
  for (Index b = 0; b < blocks; ++b) {
    out.period_index.push_back(daily.period_index[static_cast<std::size_t>(b * period_len)]);
    for (Index k = 0; k < daily.sites(); ++k) {
      for (Index t = b * period_len; t < (b + 1) * period_len; ++t) {
        if (!daily.mask(t, k)) continue;
        if (!out.mask(b, k) || daily.values(t, k) > out.values(b, k)) out.values(b, k) = daily.values(t, k);
        out.mask(b, k) = true;
      }
    }
  }
  return out;
}

inline CompleteIndex complete_rows(const DataMatrix& data) {
  CompleteIndex idx;
  for (Index t = 0; t < data.periods(); ++t)
    if (data.mask.row(t).all()) idx.rows.push_back(t);
  if (idx.rows.empty()) throw data_error("no rows with all sites observed");
  idx.retained_fraction = static_cast<double>(idx.rows.size()) / static_cast<double>(data.periods());
  return idx;
}

// Selects the given rows (with repetition) into a new panel.
inline DataMatrix take_rows(const DataMatrix& data, const std::vector<Index>& rows) {
  DataMatrix out;
  const auto n = static_cast<Index>(rows.size());
  out.values.resize(n, data.sites());
  out.mask.resize(n, data.sites());
  out.site_ids = data.site_ids;
  out.periods_per_year = data.periods_per_year;
  for (Index i = 0; i < n; ++i) {
    out.values.row(i) = data.values.row(rows[static_cast<std::size_t>(i)]);
    out.mask.row(i) = data.mask.row(rows[static_cast<std::size_t>(i)]);
    out.period_index.push_back(data.period_index[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])]);
  }
  return out;
}

// Wraps a fully observed matrix as a panel with ordinal period labels.
inline DataMatrix panel_from_matrix(const Matrix& values, std::vector<std::string> site_ids = {},
                                    double periods_per_year = 52.0) {
  DataMatrix dm;
  dm.values = values;
  dm.mask = BoolMatrix::Constant(values.rows(), values.cols(), true);
  if (site_ids.empty())
    for (Index k = 0; k < values.cols(); ++k) site_ids.push_back("s" + std::to_string(k + 1));
  dm.site_ids = std::move(site_ids);
  for (Index t = 0; t < values.rows(); ++t) dm.period_index.push_back(std::to_string(t + 1));
  dm.periods_per_year = periods_per_year;
  return dm;
}

}  // namespace epca
