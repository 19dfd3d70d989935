#pragma once

// Run configuration: key=value file, command-line overrides, validation and
// the canonical hash embedded in every artifact.

#include "epca/core.hpp"
#include "epca/ingest.hpp"
#include "epca/rng.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace epca {

struct RunConfig {
  std::string input;
  std::string out_dir = "epca_out";
  double periods_per_year = 52.0;
  Index aggregate = 1;  // rows per period; 1 keeps the input as is
  std::optional<int> month_from;
  std::optional<int> month_to;
  std::string shape_overrides;  // optional margins.json-style {id, xi} file

  double q_fit = 0.94;
  double q_transform = 0.96;
  double q_radial = 0.94;
  double q_rv = 0.94;
  double v_quantile = 0.93;
  Index min_exceed = 10;
  Index ht_min_exceed = 20;

  std::optional<Index> m = 7;  // nullopt = "auto"
  std::vector<Index> m_grid;
  Index samples_per_fold = 2000;
  Index ci_resamples = 1000;
  double ci_level = 0.9;
  bool condition_on_rv = true;
  std::string radial_scale = "tail_mass";  // tail_mass | sites

  Index n_events = 848;
  Index n_replicates = 100;
  bool resample = true;
  std::optional<std::uint64_t> seed;
  std::string generator = "epca";  // epca | ht
  std::string conditioning = "uniform";  // uniform | exceedance_rate

  std::vector<double> taus{2, 5, 10, 25, 50, 100, 200};
  std::map<std::string, std::vector<std::string>> groups;
  Index top_k = 50;
  double band_level = 0.95;
  double chi_q = 0.95;
  Index severity_top = 10;
};

namespace detail {

inline std::string trimmed(std::string_view s) { return std::string(trim(s)); }

inline double parse_number(const std::string& key, const std::string& v) {
  const auto d = parse_double(trim(v));
  if (!d) throw config_error("config key '" + key + "': expected a number, got '" + v + "'");
  return *d;
}

inline Index parse_index(const std::string& key, const std::string& v) {
  const auto t = trim(v);
  long long out = 0;
  const auto* end = t.data() + t.size();
  const auto r = std::from_chars(t.data(), end, out);
  if (r.ec != std::errc() || r.ptr != end)
    throw config_error("config key '" + key + "': expected an integer, got '" + v + "'");
  return static_cast<Index>(out);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  const auto t = trimmed(v);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw config_error("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  for (auto c : split_commas(v)) out.push_back(trimmed(c));
  return out;
}

// Integer list; entries may be ranges "a-b" or "a..b".
inline std::vector<Index> parse_index_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  for (const auto& item : parse_list(v)) {
    auto sep = item.find("..");
    std::size_t width = 2;
    if (sep == std::string::npos) {
      sep = item.find('-', 1);
      width = 1;
    }
    if (sep == std::string::npos) {
      out.push_back(parse_index(key, item));
      continue;
    }
    const Index a = parse_index(key, item.substr(0, sep));
    const Index b = parse_index(key, item.substr(sep + width));
    if (b < a) throw config_error("config key '" + key + "': empty range '" + item + "'");
    for (Index m = a; m <= b; ++m) out.push_back(m);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

}  // namespace detail

// Applies one key=value setting. Group definitions use "group.<name>".
inline void apply_setting(RunConfig& c, const std::string& key_in, const std::string& value) {
  using namespace detail;
  const std::string key = trimmed(key_in);
  const std::string v = trimmed(value);
  if (key.rfind("group.", 0) == 0) {
    const std::string name = key.substr(6);
    if (name.empty()) throw config_error("group definition needs a name: '" + key + "'");
    c.groups[name] = parse_list(v);
    return;
  }
  if (key == "input") c.input = v;
  else if (key == "out_dir") c.out_dir = v;
  else if (key == "periods_per_year") c.periods_per_year = parse_number(key, v);
  else if (key == "aggregate") c.aggregate = parse_index(key, v);
  else if (key == "month_from") c.month_from = static_cast<int>(parse_index(key, v));
  else if (key == "month_to") c.month_to = static_cast<int>(parse_index(key, v));
  else if (key == "shape_overrides") c.shape_overrides = v;
  else if (key == "q_fit") c.q_fit = parse_number(key, v);
  else if (key == "q_transform") c.q_transform = parse_number(key, v);
  else if (key == "q_radial") c.q_radial = parse_number(key, v);
  else if (key == "q_rv") c.q_rv = parse_number(key, v);
  else if (key == "v_quantile") c.v_quantile = parse_number(key, v);
  else if (key == "min_exceed") c.min_exceed = parse_index(key, v);
  else if (key == "ht_min_exceed") c.ht_min_exceed = parse_index(key, v);
  else if (key == "m") c.m = v == "auto" ? std::nullopt : std::optional<Index>(parse_index(key, v));
  else if (key == "m_grid") c.m_grid = parse_index_list(key, v);
  else if (key == "samples_per_fold") c.samples_per_fold = parse_index(key, v);
  else if (key == "ci_resamples") c.ci_resamples = parse_index(key, v);
  else if (key == "ci_level") c.ci_level = parse_number(key, v);
  else if (key == "condition_on_rv") c.condition_on_rv = parse_bool(key, v);
  else if (key == "radial_scale") c.radial_scale = v;
  else if (key == "n_events") c.n_events = parse_index(key, v);
  else if (key == "n_replicates") c.n_replicates = parse_index(key, v);
  else if (key == "resample") c.resample = parse_bool(key, v);
  else if (key == "seed") {
    const auto t = trim(v);
    std::uint64_t s = 0;
    const auto r = std::from_chars(t.data(), t.data() + t.size(), s);
    if (r.ec != std::errc() || r.ptr != t.data() + t.size())
      throw config_error("config key 'seed': expected an unsigned 64-bit integer, got '" + v + "'");
    c.seed = s;
  } else if (key == "generator") c.generator = v;
  else if (key == "conditioning") c.conditioning = v;
  else if (key == "taus") {
    c.taus.clear();
    for (const auto& t : parse_list(v)) c.taus.push_back(parse_number(key, t));
  } else if (key == "top_k") c.top_k = parse_index(key, v);
  else if (key == "band_level") c.band_level = parse_number(key, v);
  else if (key == "chi_q") c.chi_q = parse_number(key, v);
  else if (key == "severity_top") c.severity_top = parse_index(key, v);
  else throw config_error("unknown config key '" + key + "'");
}

// key=value lines; '#' starts a comment line.
inline void parse_config(std::istream& in, RunConfig& c, const std::string& what = "config") {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos)
      throw config_error(what + ":" + std::to_string(lineno) + ": expected key = value");
    try {
      apply_setting(c, std::string(t.substr(0, eq)), std::string(t.substr(eq + 1)));
    } catch (const Error& e) {
      throw config_error(what + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_config(const std::string& path, RunConfig& c) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file '" + path + "'");
  parse_config(in, c, path);
}

inline void validate(const RunConfig& c) {
  auto unit = [](const char* name, double q) {
    if (!(q > 0.0 && q < 1.0)) throw config_error(std::string(name) + " must lie in (0,1), got " + std::to_string(q));
  };
  unit("q_fit", c.q_fit);
  unit("q_transform", c.q_transform);
  unit("q_radial", c.q_radial);
  unit("q_rv", c.q_rv);
  unit("v_quantile", c.v_quantile);
  unit("ci_level", c.ci_level);
  unit("band_level", c.band_level);
  unit("chi_q", c.chi_q);
  if (!c.seed) throw config_error("seed is required");
  if (!c.m && c.m_grid.empty()) throw config_error("m = auto needs a nonempty m_grid");
  if (c.m && *c.m < 1) throw config_error("m must be >= 1");
  for (Index m : c.m_grid)
    if (m < 1) throw config_error("m_grid entries must be >= 1");
  if (c.n_events < 1) throw config_error("n_events must be >= 1");
  if (c.n_replicates < 1) throw config_error("n_replicates must be >= 1");
  if (c.aggregate < 1) throw config_error("aggregate must be >= 1");
  if (!(c.periods_per_year > 0.0)) throw config_error("periods_per_year must be positive");
  if (c.samples_per_fold < 1) throw config_error("samples_per_fold must be >= 1");
  if (c.ci_resamples < 0) throw config_error("ci_resamples must be >= 0");
  if (c.top_k < 1) throw config_error("top_k must be >= 1");
  if (c.severity_top < 0) throw config_error("severity_top must be >= 0");
  if (c.generator != "epca" && c.generator != "ht") throw config_error("generator must be 'epca' or 'ht'");
  if (c.conditioning != "uniform" && c.conditioning != "exceedance_rate")
    throw config_error("conditioning must be 'uniform' or 'exceedance_rate'");
  if (c.radial_scale != "tail_mass" && c.radial_scale != "sites")
    throw config_error("radial_scale must be 'tail_mass' or 'sites'");
  for (int mth : {c.month_from.value_or(1), c.month_to.value_or(12)})
    if (mth < 1 || mth > 12) throw config_error("month_from/month_to must lie in 1..12");
  if (c.month_from.has_value() != c.month_to.has_value())
    throw config_error("month_from and month_to must be given together");
  for (const auto& [name, ids] : c.groups)
    if (ids.empty()) throw config_error("group '" + name + "' has no sites");
}

// Canonical text of every setting that affects fitted models or generated
// events. Diagnostic-only settings and output locations are excluded.
inline std::string canonical_config(const RunConfig& c) {
  std::ostringstream o;
  auto num = [](double v) { return detail::format_double(v); };
  o << "aggregate=" << c.aggregate << "\n";
  o << "ci_level=" << num(c.ci_level) << "\n";
  o << "ci_resamples=" << c.ci_resamples << "\n";
  o << "condition_on_rv=" << (c.condition_on_rv ? "true" : "false") << "\n";
  o << "conditioning=" << c.conditioning << "\n";
  o << "generator=" << c.generator << "\n";
  o << "ht_min_exceed=" << c.ht_min_exceed << "\n";
  o << "input=" << c.input << "\n";
  o << "m=" << (c.m ? std::to_string(*c.m) : std::string("auto")) << "\n";
  o << "m_grid=";
  for (std::size_t i = 0; i < c.m_grid.size(); ++i) o << (i ? "," : "") << c.m_grid[i];
  o << "\n";
  o << "min_exceed=" << c.min_exceed << "\n";
  o << "month_from=" << (c.month_from ? std::to_string(*c.month_from) : "") << "\n";
  o << "month_to=" << (c.month_to ? std::to_string(*c.month_to) : "") << "\n";
  o << "n_events=" << c.n_events << "\n";
  o << "n_replicates=" << c.n_replicates << "\n";
  o << "periods_per_year=" << num(c.periods_per_year) << "\n";
  o << "q_fit=" << num(c.q_fit) << "\n";
  o << "q_radial=" << num(c.q_radial) << "\n";
  o << "q_rv=" << num(c.q_rv) << "\n";
  o << "q_transform=" << num(c.q_transform) << "\n";
  o << "radial_scale=" << c.radial_scale << "\n";
  o << "resample=" << (c.resample ? "true" : "false") << "\n";
  o << "samples_per_fold=" << c.samples_per_fold << "\n";
  o << "seed=" << (c.seed ? std::to_string(*c.seed) : "") << "\n";
  o << "shape_overrides=" << c.shape_overrides << "\n";
  o << "v_quantile=" << num(c.v_quantile) << "\n";
  return o.str();
}

inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_config(c))));
  return buf;
}

}  // namespace epca
