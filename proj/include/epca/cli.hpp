#pragma once

// Command-line pipeline: fit, select-m, generate, diagnose and
// simulate-synthetic, with on-disk artifacts between stages.

#include "epca/config.hpp"
#include "epca/core.hpp"
#include "epca/diagnostics.hpp"
#include "epca/extremal_pca.hpp"
#include "epca/generator.hpp"
#include "epca/ht_baseline.hpp"
#include "epca/ingest.hpp"
#include "epca/io.hpp"
#include "epca/marginals.hpp"
#include "epca/parallel.hpp"
#include "epca/rng.hpp"
#include "epca/synthetic.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace epca::cli {

namespace fs = std::filesystem;

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 4;
}

struct Context {
  RunConfig cfg;
  std::string hash;
  unsigned jobs = 1;
  bool force = false;
  bool json = false;
  std::ostream* out = &std::cout;
};

inline std::string path_in(const Context& c, const std::string& name) { return (fs::path(c.cfg.out_dir) / name).string(); }

inline DataMatrix load_data(const RunConfig& cfg) {
  if (cfg.input.empty()) throw config_error("no input file given");
  IngestConfig ic;
  ic.periods_per_year = cfg.periods_per_year;
  ic.month_from = cfg.month_from;
  ic.month_to = cfg.month_to;
  DataMatrix data = load_panel(cfg.input, ic);
  if (cfg.aggregate > 1) data = aggregate_period_maxima(data, cfg.aggregate);
  return data;
}

inline MarginPlan margin_plan(const RunConfig& cfg) { return {cfg.q_fit, cfg.q_transform, cfg.min_exceed}; }

inline std::optional<std::vector<double>> shape_overrides(const RunConfig& cfg, const DataMatrix& data) {
  if (cfg.shape_overrides.empty()) return std::nullopt;
  return io::shapes_for_sites(io::parse_shape_overrides(io::read_json(cfg.shape_overrides), cfg.shape_overrides),
                              data.site_ids);
}

inline GeneratorConfig generator_config(const RunConfig& cfg, Index m) {
  GeneratorConfig g;
  g.q_radial = cfg.q_radial;
  g.q_rv = cfg.q_rv;
  g.m = m;
  g.radial = cfg.radial_scale == "sites" ? RadialScale::sites : RadialScale::tail_mass;
  return g;
}

struct Fitted {
  DataMatrix data;
  Margins margins;
  FrechetPanel panel;
  Tpdm tpdm;
};

inline Fitted fit_common(const RunConfig& cfg) {
  Fitted f;
  f.data = load_data(cfg);
  f.margins = fit_margins(f.data, margin_plan(cfg), shape_overrides(cfg, f.data));
  const auto rows = complete_rows(f.data);
  log(LogLevel::info, "complete rows: " + std::to_string(rows.rows.size()) + " of " +
                          std::to_string(f.data.periods()));
  f.panel = to_frechet(f.data, f.margins, rows);
  f.tpdm = estimate_tpdm(f.panel, cfg.q_radial);
  return f;
}

inline GeneratorModel point_model(const Fitted& f, const RunConfig& cfg, Index m) {
  const Matrix scores = pc_scores(f.panel.values, f.tpdm);
  GeneratorModel model;
  model.tpdm = f.tpdm;
  model.angular = build_angular(scores, cfg.q_rv, m);
  model.kernel = kde_fit(model.angular.z);
  model.radial_scale = radial_scale(generator_config(cfg, m).radial, model.tpdm);
  model.margins = f.margins;
  model.site_ids = f.data.site_ids;
  return model;
}

inline io::Json manifest(const Context& c, const Fitted& f, const GeneratorModel* model, const io::Json& select) {
  io::Json j;
  j["schema"] = io::kSchemaVersion;
  j["config_hash"] = c.hash;
  j["generator"] = c.cfg.generator;
  j["seed"] = *c.cfg.seed;
  j["sites"] = f.data.site_ids;
  j["m"] = model ? io::Json(model->m()) : io::Json(nullptr);
  j["kappa"] = model ? io::Json(model->kernel.kappa) : io::Json(nullptr);
  j["kappa_capped"] = model ? io::Json(model->kernel.kappa_capped) : io::Json(nullptr);
  j["r_V"] = model ? io::Json(model->angular.r_v) : io::Json(nullptr);
  j["q_rv"] = c.cfg.q_rv;
  j["n_angular"] = model ? io::Json(model->angular.size()) : io::Json(nullptr);
  j["radial_scale"] = model ? io::Json(model->radial_scale) : io::Json(nullptr);
  j["eigvals"] = io::to_json(f.tpdm.eigvals);
  j["explained_fraction"] = model ? io::Json(explained_fraction(f.tpdm.eigvals, model->m())) : io::Json(nullptr);
  j["margins"] = "margins.json";
  j["tpdm"] = "tpdm.json";
  j["select_m"] = select;
  return j;
}

inline void write_fit_artifacts(const Context& c, const Fitted& f, const GeneratorModel* model,
                                const io::Json& select) {
  io::write_json(path_in(c, "margins.json"), io::margins_to_json(f.margins, c.hash));
  io::write_json(path_in(c, "tpdm.json"), io::tpdm_to_json(f.tpdm, c.hash));
  io::write_text(path_in(c, "eigvecs.csv"),
                 io::eigvecs_csv(f.tpdm, model ? model->m() : f.tpdm.dim(), f.data.site_ids, c.hash));
  io::write_json(path_in(c, "model.json"), manifest(c, f, model, select));
}

inline int cmd_fit(Context& c) {
  const Fitted f = fit_common(c.cfg);
  std::optional<GeneratorModel> model;
  if (c.cfg.m) model = point_model(f, c.cfg, *c.cfg.m);
  write_fit_artifacts(c, f, model ? &*model : nullptr, nullptr);
  if (c.json) {
    *c.out << manifest(c, f, model ? &*model : nullptr, nullptr).dump(2) << "\n";
  } else {
    *c.out << io::scree_report(f.tpdm.eigvals, model ? model->m() : 0);
    if (model) *c.out << "kappa = " << detail::format_double(model->kernel.kappa) << "\n";
  }
  return 0;
}

inline int cmd_select_m(Context& c) {
  if (c.cfg.m_grid.empty()) throw config_error("select-m: m_grid is empty");
  const Fitted f = fit_common(c.cfg);
  SelectMConfig sc;
  sc.m_grid = c.cfg.m_grid;
  sc.samples_per_fold = c.cfg.samples_per_fold;
  sc.q_radial = c.cfg.q_radial;
  sc.q_rv = c.cfg.q_rv;
  sc.radial = generator_config(c.cfg, 1).radial;
  sc.condition_on_rv = c.cfg.condition_on_rv;
  sc.ci_resamples = static_cast<int>(c.cfg.ci_resamples);
  sc.ci_level = c.cfg.ci_level;
  sc.jobs = c.jobs;
  const SelectMResult res = select_m(f.panel.values, sc, *c.cfg.seed);

  std::ostringstream csv;
  csv << "# config_hash: " << c.hash << "\n";
  csv << "m,dbar,lo,hi\n";
  io::Json curve = io::Json::array();
  for (const auto& p : res.curve) {
    csv << p.m << "," << detail::format_double(p.dbar) << "," << detail::format_double(p.lo) << ","
        << detail::format_double(p.hi) << "\n";
    curve.push_back({{"m", p.m}, {"dbar", p.dbar}, {"lo", p.lo}, {"hi", p.hi}});
  }
  io::write_text(path_in(c, "dbar.csv"), csv.str());

  const Index chosen = c.cfg.m ? *c.cfg.m : res.m_opt;
  const GeneratorModel model = point_model(f, c.cfg, chosen);
  const io::Json select = {{"m_opt", res.m_opt},
                           {"r0", res.r0},
                           {"r_V", res.r_v},
                           {"folds", res.fold_errors.rows()},
                           {"table", "dbar.csv"}};
  write_fit_artifacts(c, f, &model, select);
  if (c.json) {
    *c.out << io::Json{{"m_opt", res.m_opt}, {"m", chosen}, {"curve", curve}}.dump(2) << "\n";
  } else {
    *c.out << "     m        dbar          lo          hi\n";
    for (const auto& p : res.curve)
      *c.out << std::setw(6) << p.m << std::setw(12) << std::setprecision(6) << std::fixed << p.dbar
             << std::setw(12) << p.lo << std::setw(12) << p.hi << "\n";
    *c.out << "chosen m = " << res.m_opt << (c.cfg.m ? " (manifest keeps configured m = " + std::to_string(*c.cfg.m) + ")" : "")
           << "\n";
  }
  return 0;
}

inline io::Json read_manifest(const Context& c) {
  const std::string path = path_in(c, "model.json");
  if (!fs::exists(path)) throw data_error("model manifest '" + path + "' not found; run fit first");
  io::Json j = io::read_json(path);
  const auto schema = io::required<int>(j, "schema", path);
  if (schema != io::kSchemaVersion) throw data_error(path + ": unsupported schema version " + std::to_string(schema));
  const auto hash = io::required<std::string>(j, "config_hash", path);
  if (hash != c.hash) {
    if (!c.force)
      throw config_error(path + ": config hash " + hash + " does not match the current config (" + c.hash +
                         "); rerun fit or pass --force");
    log(LogLevel::warn, path + ": config hash mismatch ignored (--force)");
  }
  return j;
}

inline std::string replicate_name(Index r) {
  std::ostringstream s;
  s << "events_r" << std::setw(4) << std::setfill('0') << r;
  return s.str();
}

inline std::vector<std::string> default_event_files(const Context& c) {
  const fs::path dir = fs::path(c.cfg.out_dir) / "events";
  std::vector<std::string> files;
  if (fs::exists(dir))
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (name.rfind("events_r", 0) == 0 && e.path().extension() == ".csv") files.push_back(e.path().string());
    }
  std::sort(files.begin(), files.end());
  return files;
}

inline int cmd_generate(Context& c) {
  const io::Json man = read_manifest(c);
  if (man.at("m").is_null()) throw config_error("model manifest has no m; run select-m or set m");
  const auto m = man.at("m").get<Index>();
  const Fitted f = fit_common(c.cfg);
  if (man.contains("sites") && man.at("sites").get<std::vector<std::string>>() != f.data.site_ids)
    throw data_error("model manifest sites do not match the input panel");

  std::vector<EventSet> sets;
  if (c.cfg.generator == "epca") {
    const GeneratorModel point = point_model(f, c.cfg, m);
    if (!c.force && man.at("kappa").get<double>() != point.kernel.kappa)
      throw data_error("refitted model does not reproduce the manifest (kappa differs); rerun fit");
    BootstrapConfig bc;
    bc.margins = margin_plan(c.cfg);
    bc.generator = generator_config(c.cfg, m);
    bc.n_replicates = c.cfg.n_replicates;
    bc.events_per_replicate = c.cfg.n_events;
    bc.resample = c.cfg.resample;
    bc.jobs = c.jobs;
    sets = bootstrap_generate(f.data, point, bc, *c.cfg.seed);
  } else {
    const Matrix y = to_laplace(f.data, f.margins, complete_rows(f.data));
    HtOptions ho;
    ho.v_quantile = c.cfg.v_quantile;
    ho.min_exceed = c.cfg.ht_min_exceed;
    const auto fits = fit_ht_all(y, ho);
    const auto weights =
        c.cfg.conditioning == "uniform" ? ConditioningWeights::uniform : ConditioningWeights::exceedance_rate;
    std::vector<EventSet> slots(static_cast<std::size_t>(c.cfg.n_replicates));
    parallel_for(slots.size(), c.jobs, [&](std::size_t r) {
      Rng rng(*c.cfg.seed, stage::ht, r);
      slots[r] = ht_generate(fits, f.margins, c.cfg.n_events, rng, weights);
      slots[r].seed = *c.cfg.seed;
      slots[r].replicate_id = static_cast<Index>(r);
    });
    sets = std::move(slots);
  }

  const fs::path dir = fs::path(c.cfg.out_dir) / "events";
  fs::create_directories(dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("events_r", 0) == 0) fs::remove(e.path());
  }
  const auto fits = fits_of(f.margins);
  std::vector<double> site_max(static_cast<std::size_t>(f.data.sites()), -std::numeric_limits<double>::infinity());
  std::vector<std::vector<Index>> counts(site_max.size(), std::vector<Index>(c.cfg.taus.size(), 0));
  validate_ladder(c.cfg.taus);
  for (const auto& s : sets) {
    const std::string base = (dir / replicate_name(s.replicate_id)).string();
    io::write_text(base + ".csv", io::events_csv(s, c.hash));
    io::write_json(base + ".meta.json", io::events_meta(s, c.hash));
    for (Index e = 0; e < s.size(); ++e) {
      const Vector ev = s.events.row(e).transpose();
      const auto sev = classify_severity(ev, fits, c.cfg.taus);
      for (Index k = 0; k < ev.size(); ++k) {
        site_max[static_cast<std::size_t>(k)] = std::max(site_max[static_cast<std::size_t>(k)], ev(k));
        for (std::size_t t = 0; t < c.cfg.taus.size(); ++t)
          if (sev.classes[static_cast<std::size_t>(k)] >= c.cfg.taus[t]) ++counts[static_cast<std::size_t>(k)][t];
      }
    }
  }
  io::Json sites = io::Json::array();
  for (std::size_t k = 0; k < site_max.size(); ++k) {
    io::Json sc = io::Json::object();
    for (std::size_t t = 0; t < c.cfg.taus.size(); ++t) sc[detail::format_double(c.cfg.taus[t])] = counts[k][t];
    sites.push_back({{"id", f.data.site_ids[k]}, {"max", site_max[k]}, {"severity_counts", sc}});
  }
  const io::Json summary = {{"schema", io::kSchemaVersion},
                            {"config_hash", c.hash},
                            {"generator", c.cfg.generator},
                            {"m", m},
                            {"n_replicates", sets.size()},
                            {"n_events", c.cfg.n_events},
                            {"taus", c.cfg.taus},
                            {"sites", sites}};
  io::write_json(path_in(c, "summary.json"), summary);
  if (c.json)
    *c.out << summary.dump(2) << "\n";
  else
    *c.out << "wrote " << sets.size() << " event sets of " << c.cfg.n_events << " events to " << dir.string()
           << "\n";
  return 0;
}

struct BandSummary {
  double lo = 0.0, med = 0.0, hi = 0.0;
};

inline BandSummary band_of(std::vector<double> v, double level) {
  std::sort(v.begin(), v.end());
  const double a = 0.5 * (1.0 - level);
  return {empirical_quantile_sorted(v, a), empirical_quantile_sorted(v, 0.5), empirical_quantile_sorted(v, 1.0 - a)};
}

inline std::vector<double> top_of(const std::vector<double>& v, Index k, const std::string& what) {
  if (static_cast<Index>(v.size()) < k)
    throw data_error(what + ": " + std::to_string(v.size()) + " values, fewer than top_k = " + std::to_string(k));
  return top_order_stats(v, static_cast<std::size_t>(k));
}

inline std::vector<double> column(const Matrix& m, Index k) {
  return std::vector<double>(m.col(k).data(), m.col(k).data() + m.rows());
}

inline int cmd_diagnose(Context& c, std::vector<std::string> files, const std::vector<std::string>& requested_groups) {
  const RunConfig& cfg = c.cfg;
  if (files.empty()) files = default_event_files(c);
  if (files.empty()) throw data_error("diagnose: no event set files found; run generate first");
  for (const auto& g : requested_groups)
    if (!cfg.groups.count(g)) throw config_error("diagnose: group '" + g + "' is not defined in the config");
  validate_ladder(cfg.taus);

  const DataMatrix data = load_data(cfg);
  const Margins margins = fit_margins(data, margin_plan(cfg), shape_overrides(cfg, data));
  const auto rows = complete_rows(data);
  Matrix observed(static_cast<Index>(rows.rows.size()), data.sites());
  for (std::size_t i = 0; i < rows.rows.size(); ++i) observed.row(static_cast<Index>(i)) = data.values.row(rows.rows[i]);

  std::vector<io::LoadedEvents> sets;
  for (const auto& path : files) {
    auto s = io::load_events(path);
    if (s.site_ids != data.site_ids) throw data_error("diagnose: site ids in '" + path + "' do not match the input");
    if (s.config_hash != c.hash) {
      if (!c.force)
        throw config_error("diagnose: '" + path + "' has config hash '" + s.config_hash +
                           "', current config is " + c.hash + "; pass --force to compare anyway");
      log(LogLevel::warn, "diagnose: config hash mismatch in '" + path + "' ignored (--force)");
    }
    sets.push_back(std::move(s));
  }

  // Group index sets.
  std::vector<std::pair<std::string, std::vector<Index>>> groups;
  for (const auto& [name, ids] : cfg.groups) {
    if (!requested_groups.empty() &&
        std::find(requested_groups.begin(), requested_groups.end(), name) == requested_groups.end())
      continue;
    std::vector<Index> idx;
    for (const auto& id : ids) {
      auto it = std::find(data.site_ids.begin(), data.site_ids.end(), id);
      if (it == data.site_ids.end()) throw config_error("group '" + name + "' names unknown site '" + id + "'");
      idx.push_back(static_cast<Index>(it - data.site_ids.begin()));
    }
    groups.emplace_back(name, idx);
  }

  struct Row {
    std::string statistic, subject;
    QqRow q;
  };
  std::vector<Row> qq;
  io::Json jqq = io::Json::array();
  auto add_band = [&](const std::string& stat, const std::string& subject, const std::vector<double>& obs_series,
                      const std::function<std::vector<double>(const io::LoadedEvents&)>& sim_series) {
    const auto obs = top_of(obs_series, cfg.top_k, stat + " " + subject + " (observed)");
    std::vector<std::vector<double>> sim;
    for (const auto& s : sets) sim.push_back(top_of(sim_series(s), cfg.top_k, stat + " " + subject + " (simulated)"));
    const QqBand band = qq_band(obs, sim, cfg.band_level);
    io::Json jr = io::Json::array();
    for (const auto& r : band.rows) {
      qq.push_back({stat, subject, r});
      jr.push_back({{"rank", r.rank}, {"observed", r.observed}, {"lo", r.lo}, {"med", r.med}, {"hi", r.hi},
                    {"covered", r.covered}});
    }
    jqq.push_back({{"statistic", stat}, {"subject", subject}, {"coverage", band.coverage()}, {"rows", jr}});
    return band.coverage();
  };

  std::ostringstream report;
  for (Index k = 0; k < data.sites(); ++k) {
    const double cov = add_band("site", data.site_ids[static_cast<std::size_t>(k)], data.observed(k),
                                [k](const io::LoadedEvents& s) { return column(s.events, k); });
    report << "site " << data.site_ids[static_cast<std::size_t>(k)] << ": coverage " << std::fixed
           << std::setprecision(3) << cov << "\n";
  }
  for (const auto& [name, idx] : groups) {
    const GroupSeries og = group_summaries(observed, idx);
    const double cmax = add_band("group_max", name, og.max,
                                 [&idx](const io::LoadedEvents& s) { return group_summaries(s.events, idx).max; });
    const double cl2 = add_band("group_l2", name, og.l2,
                                [&idx](const io::LoadedEvents& s) { return group_summaries(s.events, idx).l2; });
    report << "group " << name << ": max coverage " << std::fixed << std::setprecision(3) << cmax
           << ", l2 coverage " << cl2 << "\n";
  }

  // Pairwise chi.
  std::ostringstream chi_csv;
  chi_csv << "# config_hash: " << c.hash << "\n";
  chi_csv << "statistic,subject,rank,observed,lo,med,hi,covered,joint,reliable\n";
  io::Json jchi = io::Json::array();
  for (Index i = 0; i < data.sites(); ++i)
    for (Index j = i + 1; j < data.sites(); ++j) {
      const ChiEstimate o = pairwise_dependence(observed, i, j, cfg.chi_q);
      std::vector<double> sim;
      for (const auto& s : sets) sim.push_back(pairwise_dependence(s.events, i, j, cfg.chi_q).chi);
      const BandSummary b = band_of(sim, cfg.band_level);
      const bool covered = b.lo <= o.chi && o.chi <= b.hi;
      const std::string subject =
          data.site_ids[static_cast<std::size_t>(i)] + "|" + data.site_ids[static_cast<std::size_t>(j)];
      chi_csv << "chi," << subject << ",0," << detail::format_double(o.chi) << "," << detail::format_double(b.lo)
              << "," << detail::format_double(b.med) << "," << detail::format_double(b.hi) << ","
              << (covered ? 1 : 0) << "," << o.joint << "," << (o.reliable ? 1 : 0) << "\n";
      jchi.push_back({{"subject", subject}, {"observed", o.chi}, {"lo", b.lo}, {"med", b.med}, {"hi", b.hi},
                      {"covered", covered}, {"joint", o.joint}, {"reliable", o.reliable}});
    }

  // Severity maps of the largest events by standardised norm.
  struct Ranked {
    double norm;
    std::size_t set;
    Index event;
  };
  std::vector<Ranked> ranked;
  for (std::size_t s = 0; s < sets.size(); ++s)
    for (Index e = 0; e < sets[s].events.rows(); ++e) {
      double ss = 0.0;
      for (Index k = 0; k < data.sites(); ++k) {
        const double p = margins[static_cast<std::size_t>(k)].eval(sets[s].events(e, k));
        const double xt = p >= 1.0 ? std::numeric_limits<double>::infinity()
                                   : 1.0 / std::sqrt(-std::log(std::max(p, std::numeric_limits<double>::min())));
        ss += xt * xt;
      }
      ranked.push_back({std::sqrt(ss), s, e});
    }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.norm > b.norm; });
  const auto fits = fits_of(margins);
  std::ostringstream sev_csv;
  sev_csv << "# config_hash: " << c.hash << "\n";
  sev_csv << "event_rank,file,event,norm,site,value,return_period\n";
  io::Json jsev = io::Json::array();
  const auto n_top = std::min<std::size_t>(static_cast<std::size_t>(cfg.severity_top), ranked.size());
  for (std::size_t r = 0; r < n_top; ++r) {
    const auto& ev = ranked[r];
    const Vector x = sets[ev.set].events.row(ev.event).transpose();
    const SeverityMap sm = classify_severity(x, fits, cfg.taus);
    io::Json jsites = io::Json::array();
    for (Index k = 0; k < x.size(); ++k) {
      sev_csv << (r + 1) << "," << fs::path(files[ev.set]).filename().string() << "," << ev.event << ","
              << detail::format_double(ev.norm) << "," << data.site_ids[static_cast<std::size_t>(k)] << ","
              << detail::format_double(x(k)) << "," << detail::format_double(sm.classes[static_cast<std::size_t>(k)])
              << "\n";
      jsites.push_back({{"site", data.site_ids[static_cast<std::size_t>(k)]},
                        {"value", x(k)},
                        {"return_period", sm.classes[static_cast<std::size_t>(k)]}});
    }
    jsev.push_back({{"event_rank", r + 1},
                    {"file", fs::path(files[ev.set]).filename().string()},
                    {"event", ev.event},
                    {"norm", ev.norm},
                    {"sites", jsites}});
  }

  std::ostringstream qq_csv;
  qq_csv << "# config_hash: " << c.hash << "\n";
  qq_csv << "statistic,subject,rank,observed,lo,med,hi,covered\n";
  for (const auto& r : qq)
    qq_csv << r.statistic << "," << r.subject << "," << r.q.rank << "," << detail::format_double(r.q.observed) << ","
           << detail::format_double(r.q.lo) << "," << detail::format_double(r.q.med) << ","
           << detail::format_double(r.q.hi) << "," << (r.q.covered ? 1 : 0) << "\n";
  io::write_text(path_in(c, "diagnostics.csv"), qq_csv.str());
  io::write_text(path_in(c, "chi.csv"), chi_csv.str());
  io::write_text(path_in(c, "severity.csv"), sev_csv.str());
  const io::Json all = {{"schema", io::kSchemaVersion},
                        {"config_hash", c.hash},
                        {"n_sets", sets.size()},
                        {"band_level", cfg.band_level},
                        {"top_k", cfg.top_k},
                        {"qq", jqq},
                        {"chi", jchi},
                        {"severity", jsev}};
  if (c.json) {
    io::write_json(path_in(c, "diagnostics.json"), all);
    *c.out << all.dump(2) << "\n";
  } else {
    *c.out << report.str();
  }
  return 0;
}

struct SyntheticOptions {
  Index sites = 10;
  Index factors = 5;
  Index rows = 20000;
  double noise = 0.0;
  std::uint64_t seed = 1;
  std::string output;
  std::string truth;
  std::string scale = "frechet";  // frechet | data
};

inline int cmd_simulate_synthetic(const SyntheticOptions& o, std::ostream& out) {
  if (o.sites < 2 || o.factors < 1 || o.rows < 2) throw config_error("simulate-synthetic: sites >= 2, factors >= 1, rows >= 2");
  if (!(o.noise >= 0.0 && o.noise < 1.0)) throw config_error("simulate-synthetic: noise must lie in [0,1)");
  if (o.scale != "frechet" && o.scale != "data") throw config_error("simulate-synthetic: scale must be frechet or data");
  if (o.output.empty()) throw config_error("simulate-synthetic: --output is required");
  Rng rng(o.seed, stage::synthetic, 0);
  Matrix a = synthetic::loading_matrix(o.sites, o.factors, rng);
  if (o.noise > 0.0) a = synthetic::with_noise(a, o.noise);
  Matrix x = synthetic::max_linear(a, o.rows, rng);
  if (o.scale == "data") x = synthetic::to_data_scale(x, synthetic::default_margins(o.sites));
  std::ostringstream csv;
  write_panel(csv, panel_from_matrix(x));
  io::write_text(o.output, csv.str());
  if (!o.truth.empty()) {
    const Matrix s = a * a.transpose();
    io::Json sig = io::Json::array(), load = io::Json::array();
    for (Index i = 0; i < s.rows(); ++i)
      for (Index j = 0; j < s.cols(); ++j) sig.push_back(s(i, j));
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < a.cols(); ++j) load.push_back(a(i, j));
    io::write_json(o.truth, {{"sites", o.sites},
                             {"columns", a.cols()},
                             {"loadings", load},
                             {"tpdm", sig},
                             {"scale", o.scale},
                             {"seed", o.seed}});
  }
  out << "wrote " << o.rows << " rows x " << o.sites << " sites to " << o.output << "\n";
  return 0;
}

// Every RunConfig key is also a flag: --q-radial 0.95 sets q_radial.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "input",        "out_dir",        "periods_per_year", "aggregate",    "month_from",   "month_to",
      "shape_overrides", "q_fit",       "q_transform",      "q_radial",     "q_rv",         "v_quantile",
      "min_exceed",   "ht_min_exceed",  "m",                "m_grid",       "samples_per_fold", "ci_resamples",
      "ci_level",     "condition_on_rv", "radial_scale",    "n_events",     "n_replicates", "resample",
      "seed",         "generator",      "conditioning",     "taus",         "top_k",        "band_level",
      "chi_q",        "severity_top"};
  return keys;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::mutex log_mutex;
  set_log_sink([&](LogLevel level, const std::string& msg) {
    if (level == LogLevel::debug) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    err << (level == LogLevel::warn ? "warning: " : "") << msg << "\n";
  });
  struct Restore {
    ~Restore() { set_log_sink([](LogLevel, const std::string&) {}); }
  } restore;

  CLI::App app{"Extremal-PCA hazard event set generator"};
  app.require_subcommand(1);
  std::string config_path;
  unsigned jobs = 1;
  bool force = false, json = false;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flag_values;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--jobs", jobs, "worker threads")->check(CLI::Range(1u, 1024u));
    sub->add_flag("--force", force, "ignore config-hash mismatches");
    sub->add_flag("--json", json, "machine-readable output on stdout");
    sub->add_option("--set", sets, "extra key=value setting (repeatable)");
    for (const auto& key : config_keys()) {
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      sub->add_option_function<std::string>(flag, [&flag_values, key](const std::string& v) { flag_values[key] = v; },
                                             "config key " + key);
    }
  };
  auto* fit = app.add_subcommand("fit", "fit margins, TPDM and angular model");
  auto* sel = app.add_subcommand("select-m", "cross-validated choice of m");
  auto* gen = app.add_subcommand("generate", "bootstrap event sets");
  auto* dia = app.add_subcommand("diagnose", "observed vs generated diagnostics");
  auto* syn = app.add_subcommand("simulate-synthetic", "max-linear data with known TPDM");
  for (auto* s : {fit, sel, gen, dia}) add_common(s);
  std::vector<std::string> event_files, groups;
  dia->add_option("--events", event_files, "event set CSV files (default: <out_dir>/events/events_r*.csv)");
  dia->add_option("--groups", groups, "restrict group diagnostics to these names")->delimiter(',');
  SyntheticOptions so;
  syn->add_option("--sites", so.sites);
  syn->add_option("--factors", so.factors);
  syn->add_option("--rows", so.rows);
  syn->add_option("--noise", so.noise);
  syn->add_option("--seed", so.seed);
  syn->add_option("--output", so.output)->required();
  syn->add_option("--truth", so.truth, "write loadings and true TPDM as JSON");
  syn->add_option("--scale", so.scale, "frechet or data");

  std::vector<std::string> argv_store{"epca"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (syn->parsed()) return cmd_simulate_synthetic(so, out);
    Context c;
    if (!config_path.empty()) load_config(config_path, c.cfg);
    for (const auto& [k, v] : flag_values) apply_setting(c.cfg, k, v);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + s + "'");
      apply_setting(c.cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    validate(c.cfg);
    c.hash = config_hash(c.cfg);
    c.jobs = jobs;
    c.force = force;
    c.json = json;
    c.out = &out;
    if (fit->parsed()) return cmd_fit(c);
    if (sel->parsed()) return cmd_select_m(c);
    if (gen->parsed()) return cmd_generate(c);
    return cmd_diagnose(c, event_files, groups);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace epca::cli
