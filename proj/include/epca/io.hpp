#pragma once

// On-disk artifacts: margins.json, tpdm.json, eigenvector CSV, model
// manifest, event-set CSV files and their metadata sidecars.

#include "epca/core.hpp"
#include "epca/extremal_pca.hpp"
#include "epca/generator.hpp"
#include "epca/ingest.hpp"
#include "epca/marginals.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace epca::io {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot write file '" + path + "'");
  out << text;
  if (!out) throw data_error("write failed for '" + path + "'");
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw data_error(what + ": invalid JSON (" + e.what() + ")");
  }
}

inline Json read_json(const std::string& path) { return parse_json(read_text(path), path); }

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const Json& a, const std::string& what) {
  if (!a.is_array()) throw data_error(what + ": expected an array");
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw data_error(what + ": non-numeric entry");
    v(static_cast<Index>(i)) = a[i].get<double>();
  }
  return v;
}

template <class T>
T required(const Json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw data_error(what + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw data_error(what + ": field '" + key + "' has the wrong type");
  }
}

// ---------------------------------------------------------------------------
// Margins.

inline Json margins_to_json(const Margins& margins, const std::string& config_hash) {
  Json sites = Json::array();
  for (const auto& m : margins) {
    const auto& f = m.fit();
    sites.push_back({{"id", f.id},
                     {"u", f.u},
                     {"sigma", f.sigma},
                     {"xi", f.xi},
                     {"rate_per_year", f.rate_per_year},
                     {"n_exceed", f.n_exceed},
                     {"q_fit", f.q_fit}});
  }
  return {{"schema", kSchemaVersion}, {"config_hash", config_hash}, {"sites", sites}};
}

struct ShapeOverride {
  std::string id;
  double xi = 0.0;
};

// Accepts either a bare array or an object with a "sites" array; each entry
// needs "id" and "xi", other fields are ignored.
inline std::vector<ShapeOverride> parse_shape_overrides(const Json& j, const std::string& what = "shape overrides") {
  const Json* arr = &j;
  if (j.is_object()) {
    if (!j.contains("sites")) throw config_error(what + ": expected a 'sites' array");
    arr = &j.at("sites");
  }
  if (!arr->is_array()) throw config_error(what + ": expected an array of {id, xi}");
  std::vector<ShapeOverride> out;
  for (const auto& e : *arr) {
    if (!e.is_object() || !e.contains("id") || !e.contains("xi") || !e.at("id").is_string() ||
        !e.at("xi").is_number())
      throw config_error(what + ": every entry needs a string 'id' and a numeric 'xi'");
    out.push_back({e.at("id").get<std::string>(), e.at("xi").get<double>()});
  }
  return out;
}

// Shapes in site order; every site must be covered and no unknown id may
// appear.
inline std::vector<double> shapes_for_sites(const std::vector<ShapeOverride>& overrides,
                                            const std::vector<std::string>& site_ids) {
  std::map<std::string, double> by_id;
  for (const auto& o : overrides) {
    if (!by_id.emplace(o.id, o.xi).second) throw config_error("shape overrides: duplicated id '" + o.id + "'");
    if (std::find(site_ids.begin(), site_ids.end(), o.id) == site_ids.end())
      throw config_error("shape overrides: unknown site '" + o.id + "'");
  }
  std::vector<double> out;
  for (const auto& id : site_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw config_error("shape overrides: no shape for site '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// TPDM.

inline Json tpdm_to_json(const Tpdm& t, const std::string& config_hash) {
  Json sigma = Json::array();
  for (Index i = 0; i < t.sigma.rows(); ++i)
    for (Index j = 0; j < t.sigma.cols(); ++j) sigma.push_back(t.sigma(i, j));
  Json vecs = Json::array();
  for (Index j = 0; j < t.eigvecs.cols(); ++j)
    for (Index i = 0; i < t.eigvecs.rows(); ++i) vecs.push_back(t.eigvecs(i, j));
  return {{"schema", kSchemaVersion},
          {"config_hash", config_hash},
          {"dim", t.dim()},
          {"sigma", sigma},
          {"eigvals", to_json(t.eigvals)},
          {"eigvecs", vecs},
          {"r0", t.r0},
          {"n_exc", t.n_exc},
          {"q_radial", t.q_radial}};
}

inline Tpdm tpdm_from_json(const Json& j) {
  const std::string what = "tpdm.json";
  const auto K = required<Index>(j, "dim", what);
  const Vector sigma = vector_from_json(j.at("sigma"), what + " sigma");
  const Vector vecs = vector_from_json(required<Json>(j, "eigvecs", what), what + " eigvecs");
  if (K < 2 || sigma.size() != K * K || vecs.size() != K * K) throw data_error(what + ": inconsistent dimensions");
  Tpdm t;
  t.sigma.resize(K, K);
  t.eigvecs.resize(K, K);
  for (Index i = 0; i < K; ++i)
    for (Index c = 0; c < K; ++c) {
      t.sigma(i, c) = sigma(i * K + c);
      t.eigvecs(i, c) = vecs(c * K + i);
    }
  t.eigvals = vector_from_json(required<Json>(j, "eigvals", what), what + " eigvals");
  if (t.eigvals.size() != K) throw data_error(what + ": eigvals length mismatch");
  t.r0 = required<double>(j, "r0", what);
  t.n_exc = required<Index>(j, "n_exc", what);
  t.q_radial = required<double>(j, "q_radial", what);
  return t;
}

// K rows (sites) by m columns (leading eigenvectors).
inline std::string eigvecs_csv(const Tpdm& t, Index m, const std::vector<std::string>& site_ids,
                               const std::string& config_hash) {
  m = std::clamp<Index>(m, 1, t.dim());
  std::ostringstream out;
  out << "# config_hash: " << config_hash << "\n";
  out << "site";
  for (Index j = 0; j < m; ++j) out << ",pc" << (j + 1);
  out << "\n";
  for (Index i = 0; i < t.dim(); ++i) {
    out << (static_cast<std::size_t>(i) < site_ids.size() ? site_ids[static_cast<std::size_t>(i)]
                                                          : "s" + std::to_string(i + 1));
    for (Index j = 0; j < m; ++j) out << "," << detail::format_double(t.eigvecs(i, j));
    out << "\n";
  }
  return out.str();
}

// Scree table plus the explained-scale fraction of the first m components.
inline std::string scree_report(const Vector& eigvals, Index m) {
  std::ostringstream out;
  const auto K = static_cast<double>(eigvals.size());
  out << "component  eigenvalue  fraction  cumulative\n";
  double cum = 0.0;
  for (Index j = 0; j < eigvals.size(); ++j) {
    cum += eigvals(j);
    out << std::setw(9) << (j + 1) << "  " << std::setw(10) << std::fixed << std::setprecision(4) << eigvals(j)
        << "  " << std::setw(8) << std::setprecision(4) << eigvals(j) / K << "  " << std::setw(10)
        << std::setprecision(4) << cum / K << "\n";
  }
  if (m >= 1 && m <= eigvals.size()) {
    out << "explained scale (m = " << m << "): " << std::fixed << std::setprecision(4)
        << eigvals.head(m).sum() << " / " << std::setprecision(0) << K << " = " << std::setprecision(1)
        << 100.0 * explained_fraction(eigvals, m) << "%\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Event sets.

inline std::string events_csv(const EventSet& set, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash: " << config_hash << "\n";
  for (std::size_t k = 0; k < set.site_ids.size(); ++k) out << (k ? "," : "") << set.site_ids[k];
  out << "\n";
  for (Index e = 0; e < set.events.rows(); ++e) {
    for (Index k = 0; k < set.events.cols(); ++k) out << (k ? "," : "") << detail::format_double(set.events(e, k));
    out << "\n";
  }
  return out.str();
}

inline Json events_meta(const EventSet& set, const std::string& config_hash) {
  Json radii = {{"min", 0.0}, {"median", 0.0}, {"max", 0.0}};
  if (set.radii.size() > 0) {
    std::vector<double> r(set.radii.data(), set.radii.data() + set.radii.size());
    radii = {{"min", *std::min_element(r.begin(), r.end())},
             {"median", empirical_quantile(r, 0.5)},
             {"max", *std::max_element(r.begin(), r.end())}};
  }
  return {{"schema", kSchemaVersion},
          {"config_hash", config_hash},
          {"generator", set.generator},
          {"seed", set.seed},
          {"m", set.m},
          {"replicate_id", set.replicate_id},
          {"n_events", set.size()},
          {"radii", radii}};
}

struct LoadedEvents {
  std::vector<std::string> site_ids;
  Matrix events;
  std::string config_hash;
};

inline LoadedEvents parse_events(std::istream& in, const std::string& what) {
  LoadedEvents out;
  std::string line;
  bool header = false;
  std::vector<std::vector<double>> rows;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      constexpr std::string_view tag = "# config_hash:";
      if (t.substr(0, tag.size()) == tag) out.config_hash = std::string(detail::trim(t.substr(tag.size())));
      continue;
    }
    const auto cells = detail::split_commas(t);
    if (!header) {
      for (auto c : cells) out.site_ids.emplace_back(detail::trim(c));
      header = true;
      continue;
    }
    if (cells.size() != out.site_ids.size())
      throw data_error(what + ": line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                       " fields, expected " + std::to_string(out.site_ids.size()));
    std::vector<double> row;
    for (auto c : cells) {
      const auto v = detail::parse_double(detail::trim(c));
      if (!v) throw data_error(what + ": non-numeric value on line " + std::to_string(lineno));
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
  }
  if (!header || rows.empty()) throw data_error(what + ": no events");
  out.events.resize(static_cast<Index>(rows.size()), static_cast<Index>(out.site_ids.size()));
  for (std::size_t e = 0; e < rows.size(); ++e)
    for (std::size_t k = 0; k < rows[e].size(); ++k) out.events(static_cast<Index>(e), static_cast<Index>(k)) = rows[e][k];
  return out;
}

inline LoadedEvents load_events(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open event file '" + path + "'");
  return parse_events(in, path);
}

}  // namespace epca::io
