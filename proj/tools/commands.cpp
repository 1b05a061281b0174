#include "commands.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "hbkmr/csv.hpp"
#include "hbkmr/diagnostics.hpp"
#include "hbkmr/error.hpp"
#include "hbkmr/inference.hpp"
#include "hbkmr/report.hpp"
#include "hbkmr/simulate.hpp"

namespace hbkmr::cli {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir);
}

template <typename Fn>
void write_file(const std::string& path, Fn&& fn) {
  std::ostringstream s;
  fn(s);
  write_text(path, s.str());
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

std::string lpad(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

// Index into g.levels for each row.
std::vector<std::size_t> level_of_rows(const Dataset& d, const CategoricalGroup& g) {
  std::vector<std::size_t> out(static_cast<std::size_t>(d.n()), 0);
  for (int i = 0; i < d.n(); ++i)
    for (int k = 0; k < g.width(); ++k)
      if (d.X(i, g.first_column + k) == 1.0) out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(k) + 1;
  return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

std::vector<double> parse_list(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("cannot parse '" + item + "' in " + what);
    }
  }
  return out;
}

std::string input_hash(const std::string& path) { return hex64(fnv1a(read_text(path))); }

// -------------------------------------------------------------------------------------------------
// fit

struct FitFlags {
  std::string config;
  std::string input;
  std::string out;
  std::string variance;
  std::string r_prior;
  bool bkmr = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int burn = -1;
  int keep = -1;
  int thin = -1;
};

RPrior parse_r_prior(const std::string& text) {
  // "uniform:5" or "inverse-uniform:100"
  const auto colon = text.find(':');
  RPrior p;
  const std::string kind = text.substr(0, colon);
  if (kind == "uniform") {
    p.kind = RPrior::Kind::Uniform;
  } else if (kind == "inverse-uniform") {
    p.kind = RPrior::Kind::InverseUniform;
  } else {
    throw InputError("--r-prior must look like uniform:5 or inverse-uniform:100");
  }
  if (colon != std::string::npos) p.upper = parse_list(text.substr(colon + 1), "--r-prior").at(0);
  return p;
}

json summary_json(const PosteriorSamples& s, const Dataset& d, const VarianceDesign& W) {
  json j;
  j["model"] = s.model_label();
  j["n_obs"] = d.n();
  j["dropped_rows"] = d.dropped_rows;
  j["n_draws"] = s.n_draws();
  j["n_burn"] = s.config.n_burn;
  j["thin"] = s.config.thin;
  j["seed"] = s.config.seed;
  j["r_prior"] = s.prior.r_prior.describe();
  j["variance_columns"] = W.column_names;
  json acc = json::array();
  for (const auto& b : s.blocks) acc.push_back({{"block", b.name}, {"acceptance", b.acceptance}, {"step", b.step}});
  j["acceptance"] = acc;
  json params = json::array();
  for (int k = 0; k < static_cast<int>(s.names.size()); ++k) {
    const Eigen::VectorXd col = s.draws.col(k);
    const double mean = col.mean();
    const double sd = col.size() > 1 ? std::sqrt((col.array() - mean).square().sum() / (col.size() - 1)) : 0.0;
    params.push_back({{"name", s.names[k]},
                      {"mean", mean},
                      {"sd", sd},
                      {"q025", quantile(col, 0.025)},
                      {"q975", quantile(col, 0.975)},
                      {"ess", s.ess(k)},
                      {"ess_degenerate", static_cast<bool>(s.ess_degenerate[k])}});
  }
  j["parameters"] = params;
  json tr = json::array();
  for (int m = 0; m < d.m(); ++m)
    tr.push_back({{"exposure", d.z_names[m]},
                  {"shift", d.transform_log[m].shift},
                  {"mean", d.transform_log[m].mean},
                  {"sd", d.transform_log[m].sd}});
  j["exposure_transforms"] = tr;
  return j;
}

int cmd_fit(const FitFlags& f, std::ostream& out) {
  const auto t_start = Clock::now();
  RunConfig c = load_run_config(f.config);
  if (!f.input.empty()) c.input = fs::absolute(f.input).lexically_normal().string();
  if (!f.out.empty()) c.output_dir = fs::absolute(f.out).lexically_normal().string();
  if (f.bkmr) c.variance.clear();
  if (!f.variance.empty()) {
    c.variance.clear();
    std::stringstream s(f.variance);
    std::string item;
    while (std::getline(s, item, ',')) c.variance.push_back(parse_variance_entry(item));
  }
  if (!f.r_prior.empty()) c.prior.r_prior = parse_r_prior(f.r_prior);
  if (f.seed_set) c.mcmc.seed = f.seed;
  if (f.burn >= 0) c.mcmc.n_burn = f.burn;
  if (f.keep >= 0) c.mcmc.n_keep = f.keep;
  if (f.thin >= 0) c.mcmc.thin = f.thin;
  if (c.input.empty()) throw InputError("no input file (set \"input\" in the config or pass --input)");
  c.prior.validate();
  c.mcmc.validate();

  auto t0 = Clock::now();
  const Dataset d = load_training(c);
  const VarianceDesign W = build_variance_design(d, c.variance);
  const double t_load = seconds_since(t0);

  t0 = Clock::now();
  const PosteriorSamples s = fit(d, W, c.prior, c.mcmc);
  const double t_fit = seconds_since(t0);

  t0 = Clock::now();
  ensure_dir(c.output_dir);
  write_file(path_in(c.output_dir, "samples.csv"), [&](std::ostream& o) { write_samples_csv(o, s); });
  json summary = summary_json(s, d, W);
  if (c.outputs.waic) {
    const WaicResult w = waic(s, d, W);
    summary["waic"] = {{"waic", w.waic}, {"lppd", w.lppd}, {"p_waic", w.p_waic}};
  }
  write_text(path_in(c.output_dir, "summary.json"), summary.dump(2) + "\n");
  const std::string config_text = to_json(c).dump(2) + "\n";
  write_text(path_in(c.output_dir, "config.json"), config_text);
  const double t_write = seconds_since(t0);

  json manifest;
  manifest["version"] = kVersion;
  manifest["command"] = "fit";
  manifest["model"] = s.model_label();
  manifest["seed"] = c.mcmc.seed;
  manifest["config_hash"] = hex64(fnv1a(config_text));
  manifest["input_hash"] = input_hash(c.input);
  manifest["timings"] = {{"load_s", t_load}, {"fit_s", t_fit}, {"write_s", t_write}, {"total_s", seconds_since(t_start)}};
  write_text(path_in(c.output_dir, "manifest.json"), manifest.dump(2) + "\n");

  out << s.model_label() << " fit: " << d.n() << " rows, " << s.n_draws() << " draws kept after " << c.mcmc.n_burn
      << " burn-in\n";
  for (const auto& b : s.blocks)
    out << "  acceptance " << pad(b.name, 16) << fixed(b.acceptance, 3) << "  step " << fixed(b.step, 4) << "\n";
  for (std::size_t k = 0; k < s.names.size(); ++k)
    out << "  " << pad(s.names[k], 26) << " mean " << lpad(fixed(summary["parameters"][k]["mean"].get<double>(), 4), 10)
        << "  ess " << lpad(fixed(s.ess(static_cast<Eigen::Index>(k)), 1), 9) << "\n";
  if (summary.contains("waic")) out << "  WAIC " << fixed(summary["waic"]["waic"].get<double>(), 2) << "\n";
  out << "artifact: " << c.output_dir << "\n";
  return kOk;
}

// -------------------------------------------------------------------------------------------------
// diagnose

struct DiagnoseFlags {
  std::string fit_dir;
  std::string config;
  std::string predictors;
  std::string method;
  std::string out;
};

void print_associations(std::ostream& out, const ResidualReport& r) {
  out << "residual method: " << to_string(r.method);
  if (r.method == ResidualMethod::LinearApproximation) out << " (" << r.n_regressors << " regressors)";
  out << "\n  " << pad("predictor", 24) << " " << lpad("spearman", 10) << lpad("var ratio", 11) << "  flag\n";
  for (const auto& a : r.associations)
    out << "  " << pad(a.name, 24) << " " << lpad(a.categorical ? "-" : fixed(a.spearman, 3), 10)
        << lpad(a.categorical ? fixed(a.variance_ratio, 2) : "-", 11) << "  " << (a.flagged ? "*" : "") << "\n";
  for (const auto& c : r.dropped_columns) out << "  dropped collinear regressor: " << c << "\n";
}

void write_residual_outputs(const std::string& dir, const std::string& stem, const ResidualReport& r, const Dataset& d,
                            const std::vector<std::string>& predictors) {
  write_file(path_in(dir, stem + ".csv"), [&](std::ostream& o) {
    std::vector<std::string> header{"fitted", "residual"};
    header.insert(header.end(), predictors.begin(), predictors.end());
    csv::write_row(o, header);
    std::vector<std::vector<std::size_t>> levels;
    for (const auto& p : predictors)
      levels.push_back(d.categorical(p) ? level_of_rows(d, *d.categorical(p)) : std::vector<std::size_t>{});
    for (int i = 0; i < d.n(); ++i) {
      std::vector<std::string> row{csv::format_double(r.fitted(i)), csv::format_double(r.residuals(i))};
      for (std::size_t k = 0; k < predictors.size(); ++k) {
        if (const CategoricalGroup* g = d.categorical(predictors[k]))
          row.push_back(g->levels[levels[k][static_cast<std::size_t>(i)]]);
        else
          row.push_back(csv::format_double(predictor_values(d, predictors[k])(i)));
      }
      csv::write_row(o, row);
    }
  });
  write_file(path_in(dir, stem + "_associations.csv"), [&](std::ostream& o) {
    csv::write_row(o, {"predictor", "categorical", "spearman", "variance_ratio", "flagged"});
    for (const auto& a : r.associations)
      csv::write_row(o, {a.name, a.categorical ? "1" : "0", csv::format_double(a.spearman),
                         csv::format_double(a.variance_ratio), a.flagged ? "1" : "0"});
  });
  std::vector<report::Panel> panels;
  panels.push_back({{"Residuals vs fitted", "fitted", "residual"}, to_std(r.fitted), to_std(r.residuals), {}});
  for (const auto& p : predictors) {
    report::Panel panel{{"Residuals vs " + p, p, "residual"}, {}, to_std(r.residuals), {}};
    if (const CategoricalGroup* g = d.categorical(p)) {
      for (std::size_t l : level_of_rows(d, *g)) panel.x.push_back(static_cast<double>(l));
      panel.groups = g->levels;
    } else {
      panel.x = to_std(predictor_values(d, p));
    }
    panels.push_back(std::move(panel));
  }
  write_file(path_in(dir, stem + ".svg"), [&](std::ostream& o) { report::svg_scatter_panels(o, panels); });
}

int cmd_diagnose(const DiagnoseFlags& f, std::ostream& out) {
  std::optional<FitArtifact> art;
  RunConfig c;
  Dataset d;
  if (!f.fit_dir.empty()) {
    art = load_artifact(f.fit_dir);
    c = art->config;
    d = art->data;
  } else if (!f.config.empty()) {
    c = load_run_config(f.config);
    d = load_training(c);
  } else {
    throw InputError("diagnose needs --fit (fit artifact) or --config");
  }
  std::string method = f.method.empty() ? c.outputs.residual_method : f.method;
  if (method != "posterior-mean-h" && method != "linear" && method != "both")
    throw InputError("--method must be posterior-mean-h, linear or both");
  if (!art && method != "linear") throw InputError("posterior-mean-h residuals need a fit artifact (--fit)");

  std::vector<std::string> predictors = c.outputs.diagnostics_predictors;
  if (!f.predictors.empty()) {
    predictors.clear();
    std::stringstream s(f.predictors);
    std::string item;
    while (std::getline(s, item, ',')) predictors.push_back(item);
  }
  if (predictors.empty()) predictors = default_predictors(d);
  for (const auto& p : predictors)
    if (!d.categorical(p) && d.x_index(p) < 0 && d.z_index(p) < 0) throw InputError("unknown predictor '" + p + "'");

  const std::string dir = !f.out.empty() ? f.out : path_in(art ? art->dir : c.output_dir, "diagnostics");
  ensure_dir(dir);
  std::vector<ResidualReport> reports;
  if (method != "linear") {
    reports.push_back(bayesian_residuals(art->samples, d, art->W, predictors));
    write_residual_outputs(dir, "residuals_posterior_mean_h", reports.back(), d, predictors);
  }
  if (method != "posterior-mean-h") {
    reports.push_back(linear_approx_residuals(d, predictors));
    write_residual_outputs(dir, "residuals_linear", reports.back(), d, predictors);
  }
  for (const auto& r : reports) print_associations(out, r);
  if (reports.size() == 2) {
    out << "flagged by both methods:";
    for (const auto& p : predictors)
      if (reports[0].flags(p) && reports[1].flags(p)) out << " " << p;
    out << "\n";
  }
  out << "diagnostics: " << dir << "\n";
  return kOk;
}

// -------------------------------------------------------------------------------------------------
// sections

struct SectionFlags {
  std::string fit_dir;
  std::string compare_dir;
  std::string labels;
  std::string quantiles;
  std::string fixed;
  std::string out;
  double base = -1.0;
  int grid = -1;
  int stride = -1;
  bool no_curves = false;
};

struct SectionResults {
  std::string label;
  std::vector<std::vector<CurvePoint>> curves;  // per exposure
  std::vector<EffectEstimate> joint;
  std::vector<SingleVariableEffect> single;
};

SectionResults run_sections(const FitArtifact& a, const std::string& label, double base,
                            const std::vector<double>& quantiles, const std::vector<double>& fixed_q, int grid,
                            int stride, bool curves) {
  InferenceOptions opts;
  opts.stride = stride;
  SectionResults r;
  r.label = label;
  if (curves)
    for (int m = 0; m < a.data.m(); ++m) r.curves.push_back(univariate_curve(a.samples, a.data, a.W, m, grid, opts));
  r.joint = joint_effects(a.samples, a.data, a.W, base, quantiles, opts);
  r.single = single_variable_effects(a.samples, a.data, a.W, fixed_q, opts);
  return r;
}

void check_compatible(const FitArtifact& a, const FitArtifact& b) {
  const auto& ra = a.config.roles;
  const auto& rb = b.config.roles;
  if (a.manifest.value("input_hash", "") != b.manifest.value("input_hash", ""))
    throw InputError("artifacts were fit on different input data; overlay needs the same dataset");
  if (ra.outcome != rb.outcome || ra.exposures != rb.exposures || ra.covariates != rb.covariates)
    throw InputError("artifacts use different outcome, exposure or covariate columns; overlay needs the same model data");
}

int cmd_sections(const SectionFlags& f, std::ostream& out) {
  if (f.fit_dir.empty()) throw InputError("sections needs --fit");
  const FitArtifact a = load_artifact(f.fit_dir);
  std::optional<FitArtifact> b;
  if (!f.compare_dir.empty()) {
    b = load_artifact(f.compare_dir);
    check_compatible(a, *b);
  }
  const auto& o = a.config.outputs;
  const double base = f.base >= 0.0 ? f.base : o.joint_base;
  const auto quantiles = f.quantiles.empty() ? o.joint_quantiles : parse_list(f.quantiles, "--quantiles");
  const auto fixed_q = f.fixed.empty() ? o.single_fixed : parse_list(f.fixed, "--fixed");
  const int grid = f.grid > 0 ? f.grid : o.curve_grid;
  const int stride = f.stride > 0 ? f.stride : o.stride;

  std::vector<std::string> labels{a.samples.model_label()};
  if (b) labels.push_back(b->samples.model_label());
  if (!f.labels.empty()) {
    labels.clear();
    std::stringstream s(f.labels);
    std::string item;
    while (std::getline(s, item, ',')) labels.push_back(item);
    if (labels.size() != (b ? 2u : 1u)) throw InputError("--labels needs one label per artifact");
  } else if (b && labels[0] == labels[1]) {
    labels = {labels[0] + " (A)", labels[1] + " (B)"};
  }

  std::vector<SectionResults> results;
  results.push_back(run_sections(a, labels[0], base, quantiles, fixed_q, grid, stride, !f.no_curves));
  if (b) results.push_back(run_sections(*b, labels[1], base, quantiles, fixed_q, grid, stride, !f.no_curves));

  const std::string dir = !f.out.empty() ? f.out : path_in(a.dir, "sections");
  ensure_dir(dir);

  if (!f.no_curves) {
    write_file(path_in(dir, "curves.csv"), [&](std::ostream& os) {
      csv::write_row(os, {"model", "exposure", "z", "original", "estimate", "sd", "lower95", "upper95"});
      for (const auto& r : results)
        for (const auto& curve : r.curves)
          for (const auto& pt : curve)
            csv::write_row(os, {r.label, pt.h.label, csv::format_double(pt.z), csv::format_double(pt.original),
                                csv::format_double(pt.h.estimate), csv::format_double(pt.h.sd),
                                csv::format_double(pt.h.lower95), csv::format_double(pt.h.upper95)});
    });
    for (int m = 0; m < a.data.m(); ++m) {
      std::vector<report::Series> series;
      for (const auto& r : results) {
        report::Series s{r.label, {}, {}, {}, {}};
        for (const auto& pt : r.curves[m]) {
          s.x.push_back(pt.original);
          s.y.push_back(pt.h.estimate);
          s.lower.push_back(pt.h.lower95);
          s.upper.push_back(pt.h.upper95);
        }
        series.push_back(std::move(s));
      }
      const auto& name = a.data.z_names[m];
      write_file(path_in(dir, "curve_" + name + ".svg"), [&](std::ostream& os) {
        report::svg_band_plot(os, {"h(" + name + "), others at median", name, "h(z)"}, series);
      });
    }
  }

  write_file(path_in(dir, "joint_effects.csv"), [&](std::ostream& os) {
    csv::write_row(os, {"model", "quantile", "label", "estimate", "sd", "lower95", "upper95"});
    for (const auto& r : results)
      for (std::size_t k = 0; k < r.joint.size(); ++k) {
        const auto& e = r.joint[k];
        csv::write_row(os, {r.label, csv::format_double(quantiles[k]), e.label, csv::format_double(e.estimate),
                            csv::format_double(e.sd), csv::format_double(e.lower95), csv::format_double(e.upper95)});
      }
  });
  {
    std::vector<report::Series> series;
    for (const auto& r : results) {
      report::Series s{r.label, quantiles, {}, {}, {}};
      for (const auto& e : r.joint) {
        s.y.push_back(e.estimate);
        s.lower.push_back(e.lower95);
        s.upper.push_back(e.upper95);
      }
      series.push_back(std::move(s));
    }
    write_file(path_in(dir, "joint_effects.svg"), [&](std::ostream& os) {
      report::svg_interval_plot(os, {"Joint effect vs base quantile " + fixed(base, 2), "quantile q", "h(z_q) - h(z_base)"},
                                series);
    });
  }

  write_file(path_in(dir, "single_variable.csv"), [&](std::ostream& os) {
    csv::write_row(os, {"model", "exposure", "fixed_quantile", "label", "estimate", "sd", "lower95", "upper95"});
    for (const auto& r : results)
      for (const auto& s : r.single)
        csv::write_row(os, {r.label, a.data.z_names[s.exposure], csv::format_double(s.fixed_quantile), s.effect.label,
                            csv::format_double(s.effect.estimate), csv::format_double(s.effect.sd),
                            csv::format_double(s.effect.lower95), csv::format_double(s.effect.upper95)});
  });
  {
    std::vector<report::Series> series;
    for (const auto& r : results)
      for (double fq : fixed_q) {
        report::Series s{r.label + " q" + fixed(fq, 2), {}, {}, {}, {}};
        for (const auto& e : r.single)
          if (e.fixed_quantile == fq) {
            s.x.push_back(static_cast<double>(e.exposure));
            s.y.push_back(e.effect.estimate);
            s.lower.push_back(e.effect.lower95);
            s.upper.push_back(e.effect.upper95);
          }
        series.push_back(std::move(s));
      }
    write_file(path_in(dir, "single_variable.svg"), [&](std::ostream& os) {
      report::svg_interval_plot(os, {"Single-exposure effect, 25th to 75th percentile", "exposure", "change in h"},
                                series, a.data.z_names);
    });
  }

  out << "joint effects (" << results[0].label << ")\n";
  for (const auto& e : results[0].joint)
    out << "  " << pad(e.label, 24) << " " << lpad(fixed(e.estimate, 4), 10) << "  [" << fixed(e.lower95, 4) << ", "
        << fixed(e.upper95, 4) << "]\n";

  if (results.size() == 2) {
    // Percent change in 95% CI width of the second artifact relative to the first.
    struct Row {
      std::string section, contrast;
      double wa, wb;
    };
    std::vector<Row> rows;
    for (std::size_t k = 0; k < results[0].joint.size(); ++k)
      rows.push_back({"joint", results[0].joint[k].label, results[0].joint[k].width(), results[1].joint[k].width()});
    for (std::size_t k = 0; k < results[0].single.size(); ++k)
      rows.push_back({"single", results[0].single[k].effect.label, results[0].single[k].effect.width(),
                      results[1].single[k].effect.width()});
    for (std::size_t m = 0; m < results[0].curves.size(); ++m)
      for (std::size_t g = 0; g < results[0].curves[m].size(); ++g)
        rows.push_back({"curve", results[0].curves[m][g].h.label + " at z=" + fixed(results[0].curves[m][g].z, 3),
                        results[0].curves[m][g].h.width(), results[1].curves[m][g].h.width()});
    auto pct = [](double wa, double wb) { return wa > 0.0 ? 100.0 * (wb - wa) / wa : 0.0; };
    write_file(path_in(dir, "width_change.csv"), [&](std::ostream& os) {
      csv::write_row(os, {"section", "contrast", "width_" + labels[0], "width_" + labels[1], "pct_change"});
      for (const auto& r : rows)
        csv::write_row(os, {r.section, r.contrast, csv::format_double(r.wa), csv::format_double(r.wb),
                            fixed(pct(r.wa, r.wb), 1)});
    });
    out << "95% CI width, " << labels[1] << " relative to " << labels[0] << "\n";
    out << "  " << pad("contrast", 28) << " " << lpad("width " + labels[0], 16) << lpad("width " + labels[1], 16)
        << lpad("% change", 10) << "\n";
    for (const auto& r : rows) {
      if (r.section == "curve") continue;
      out << "  " << pad(r.contrast, 28) << " " << lpad(fixed(r.wa, 4), 16) << lpad(fixed(r.wb, 4), 16)
          << lpad(fixed(pct(r.wa, r.wb), 1), 10) << "\n";
    }
  }
  out << "sections: " << dir << "\n";
  return kOk;
}

// -------------------------------------------------------------------------------------------------
// predict

struct PredictFlags {
  std::string fit_dir;
  std::string newdata;
  std::string out;
  int stride = -1;
};

int cmd_predict(const PredictFlags& f, std::ostream& out) {
  if (f.fit_dir.empty()) throw InputError("predict needs --fit");
  const FitArtifact a = load_artifact(f.fit_dir);
  const std::string newdata = !f.newdata.empty() ? f.newdata : a.config.outputs.predict_input;

  Dataset nd;
  if (newdata.empty()) {
    nd = a.data;
  } else {
    ColumnRoles roles = a.config.roles;
    roles.outcome_optional = true;
    roles.known_levels = a.data.categoricals;
    nd = apply_exposure_transforms(load_csv(newdata, roles), a.data.transform_log);
    if (nd.x_names != a.data.x_names) throw InputError("new data covariate columns do not match the fit");
  }
  const VarianceDesign Wn = build_variance_design(nd, a.config.variance, false);
  InferenceOptions opts;
  opts.stride = f.stride > 0 ? f.stride : a.config.outputs.stride;
  const auto pred = predict(a.samples, a.data, a.W, nd.X, nd.Z, Wn.W, opts);

  const std::string dir = !f.out.empty() ? f.out : path_in(a.dir, "predict");
  ensure_dir(dir);
  int covered = 0, observed = 0;
  write_file(path_in(dir, "predictions.csv"), [&](std::ostream& os) {
    csv::write_row(os, {"row", "observed", "estimate", "sd", "lower95", "upper95"});
    for (int i = 0; i < nd.n(); ++i) {
      const auto& e = pred[static_cast<std::size_t>(i)];
      const double y = nd.y(i);
      if (std::isfinite(y)) {
        ++observed;
        covered += (e.lower95 <= y && y <= e.upper95) ? 1 : 0;
      }
      csv::write_row(os, {std::to_string(i + 1), std::isfinite(y) ? csv::format_double(y) : "NA",
                          csv::format_double(e.estimate), csv::format_double(e.sd), csv::format_double(e.lower95),
                          csv::format_double(e.upper95)});
    }
  });
  write_file(path_in(dir, "predictions.svg"), [&](std::ostream& os) {
    report::svg_prediction_plot(os, {a.samples.model_label() + " 95% posterior predictive intervals", "row", a.data.outcome_name},
                                to_std(nd.y), pred);
  });
  out << a.samples.model_label() << " predictions for " << nd.n() << " rows";
  if (observed > 0) out << "; observed inside 95% interval: " << covered << "/" << observed;
  out << "\npredictions: " << dir << "\n";
  return kOk;
}

// -------------------------------------------------------------------------------------------------
// waic

struct WaicFlags {
  std::vector<std::string> fits;
  std::string labels;
  std::string out;
  int stride = 1;
  bool conditional_h = false;
  std::uint64_t seed = 1;
};

int cmd_waic(const WaicFlags& f, std::ostream& out) {
  if (f.fits.empty()) throw InputError("waic needs at least one --fit");
  std::vector<std::string> labels;
  if (!f.labels.empty()) {
    std::stringstream s(f.labels);
    std::string item;
    while (std::getline(s, item, ',')) labels.push_back(item);
    if (labels.size() != f.fits.size()) throw InputError("--labels needs one label per --fit");
  }
  WaicOptions opts;
  opts.stride = f.stride;
  opts.seed = f.seed;
  opts.pointwise = f.conditional_h ? WaicOptions::Pointwise::ConditionalH : WaicOptions::Pointwise::Marginal;
  std::vector<WaicResult> results;
  std::string first_hash;
  for (std::size_t k = 0; k < f.fits.size(); ++k) {
    const FitArtifact a = load_artifact(f.fits[k]);
    const std::string hash = a.manifest.value("input_hash", "");
    if (k == 0) first_hash = hash;
    else if (hash != first_hash) throw InputError("WAIC comparison needs every artifact fit to the same data");
    results.push_back(waic(a.samples, a.data, a.W, opts));
    if (labels.size() < f.fits.size() && f.labels.empty()) {
      std::string label = std::to_string(k + 1) + ". " + a.samples.model_label();
      if (a.W.q() > 0) {
        label += ":";
        for (int j = 1; j < static_cast<int>(a.W.column_names.size()); ++j) label += " " + a.W.column_names[j];
      }
      labels.push_back(label);
    }
  }
  std::vector<WaicRanking> ranking;
  if (results.size() >= 2) {
    ranking = compare(results, labels);
  } else {
    ranking.push_back({labels[0], results[0].waic, 0.0, results[0].p_waic});
  }
  std::size_t w = 8;
  for (const auto& r : ranking) w = std::max(w, r.label.size() + 2);
  out << pad("Model", w) << lpad("WAIC", 12) << lpad("dWAIC", 10) << lpad("p_WAIC", 10) << "\n";
  for (const auto& r : ranking)
    out << pad(r.label, w) << lpad(fixed(r.waic, 1), 12) << lpad(fixed(r.delta, 1), 10) << lpad(fixed(r.p_waic, 1), 10)
        << "\n";
  if (!f.out.empty()) {
    write_file(f.out, [&](std::ostream& os) {
      csv::write_row(os, {"model", "waic", "delta", "p_waic"});
      for (const auto& r : ranking)
        csv::write_row(os, {r.label, csv::format_double(r.waic), csv::format_double(r.delta),
                            csv::format_double(r.p_waic)});
    });
  }
  return kOk;
}

// -------------------------------------------------------------------------------------------------
// simulate

struct SimulateFlags {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int n = -1;
};

int cmd_simulate(const SimulateFlags& f, std::ostream& out) {
  if (f.config.empty()) throw InputError("simulate needs --config");
  json j;
  try {
    j = json::parse(read_text(f.config));
  } catch (const json::parse_error& e) {
    throw InputError("simulation config is not valid JSON: " + std::string(e.what()));
  }
  SimConfig c = parse_sim_config(j);
  if (f.seed_set) c.seed = f.seed;
  if (f.n > 0) c.n = f.n;
  const Simulation sim = generate(c);

  const std::string dir = !f.out.empty() ? f.out : "hbkmr_sim";
  ensure_dir(dir);
  ColumnRoles roles;
  write_file(path_in(dir, "data.csv"), [&](std::ostream& os) { roles = write_csv(os, sim.data); });

  json truth;
  truth["h"] = to_std(sim.truth.h);
  truth["beta"] = to_std(sim.truth.beta);
  truth["gamma"] = to_std(sim.truth.gamma);
  truth["sigma2"] = to_std(sim.truth.sigma2);
  truth["tau"] = sim.truth.tau;
  truth["r"] = to_std(sim.truth.r);
  truth["x_names"] = sim.data.x_names;
  truth["variance_columns"] = sim.W.column_names;
  write_text(path_in(dir, "truth.json"), truth.dump(2) + "\n");

  RunConfig fitc;
  fitc.input = "data.csv";
  fitc.roles = roles;
  fitc.variance = c.variance_recipe;
  fitc.output_dir = "fit";
  json fj = to_json(fitc);
  fj["input"] = "data.csv";
  fj["output_dir"] = "fit";
  fj["outputs"].erase("predict_input");
  write_text(path_in(dir, "fit_config.json"), fj.dump(2) + "\n");

  json manifest;
  manifest["version"] = kVersion;
  manifest["command"] = "simulate";
  manifest["seed"] = c.seed;
  manifest["config_hash"] = hex64(fnv1a(j.dump()));
  manifest["input_hash"] = hex64(fnv1a(read_text(path_in(dir, "data.csv"))));
  write_text(path_in(dir, "manifest.json"), manifest.dump(2) + "\n");

  out << "simulated " << sim.data.n() << " rows, " << sim.data.m() << " exposures, " << sim.data.p()
      << " covariate columns\n";
  out << "data: " << path_in(dir, "data.csv") << "\nfit config: " << path_in(dir, "fit_config.json") << "\n";
  return kOk;
}

}  // namespace

// -------------------------------------------------------------------------------------------------

Dataset load_training(const RunConfig& c) {
  if (c.input.empty()) throw InputError("config has no input file");
  return standardize_exposures(load_csv(c.input, c.roles));
}

void write_samples_csv(std::ostream& out, const PosteriorSamples& s) {
  csv::write_row(out, s.names);
  std::vector<std::string> row(s.names.size());
  for (int i = 0; i < s.n_draws(); ++i) {
    for (std::size_t k = 0; k < row.size(); ++k) row[k] = csv::format_double(s.draws(i, static_cast<Eigen::Index>(k)));
    csv::write_row(out, row);
  }
}

PosteriorSamples read_samples_csv(const std::string& path, const Dataset& d, const VarianceDesign& W) {
  const csv::Table t = csv::read_file(path);
  PosteriorSamples s;
  s.names = parameter_names(d, W);
  if (t.header != s.names) throw InputError(path + ": sample columns do not match the model in config.json");
  s.p = d.p();
  s.q1 = static_cast<int>(W.W.cols());
  s.m = d.m();
  s.draws.resize(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(s.names.size()));
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    for (std::size_t k = 0; k < s.names.size(); ++k) {
      const std::string& cell = t.rows[i][k];
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || cell.empty())
        throw InputError(path + ": bad number '" + cell + "' in draw " + std::to_string(i + 1));
      s.draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
  s.ess = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(s.names.size()), std::nan(""));
  s.ess_degenerate.assign(s.names.size(), false);
  return s;
}

FitArtifact load_artifact(const std::string& dir) {
  if (!fs::is_directory(dir)) throw InputError("fit artifact " + dir + " does not exist");
  FitArtifact a;
  a.dir = dir;
  try {
    a.config = parse_run_config(json::parse(read_text(path_in(dir, "config.json"))), dir);
    a.manifest = json::parse(read_text(path_in(dir, "manifest.json")));
  } catch (const json::parse_error& e) {
    throw InputError("fit artifact " + dir + " has malformed JSON: " + e.what());
  }
  if (a.manifest.value("input_hash", "") != input_hash(a.config.input))
    throw InputError("input " + a.config.input + " changed since the fit in " + dir);
  a.data = load_training(a.config);
  a.W = build_variance_design(a.data, a.config.variance);
  a.samples = read_samples_csv(path_in(dir, "samples.csv"), a.data, a.W);
  a.samples.config = a.config.mcmc;
  a.samples.prior = a.config.prior;
  return a;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian kernel machine regression with a log-linear error-variance model"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  FitFlags fit_f;
  auto* fit_cmd = app.add_subcommand("fit", "Run the sampler and write a fit artifact");
  fit_cmd->add_option("-c,--config", fit_f.config, "Run configuration (JSON)")->required();
  fit_cmd->add_option("--input", fit_f.input, "Override the input CSV");
  fit_cmd->add_option("-o,--out", fit_f.out, "Override the output directory");
  fit_cmd->add_option("--variance", fit_f.variance, "Variance predictors, comma separated; |x| for absolute value");
  fit_cmd->add_flag("--bkmr", fit_f.bkmr, "Homoscedastic fit (intercept-only variance model)");
  fit_cmd->add_option("--r-prior", fit_f.r_prior, "uniform:U or inverse-uniform:U");
  auto* seed_opt = fit_cmd->add_option("--seed", fit_f.seed, "Sampler seed");
  fit_cmd->add_option("--burn", fit_f.burn, "Burn-in sweeps");
  fit_cmd->add_option("--keep", fit_f.keep, "Retained draws");
  fit_cmd->add_option("--thin", fit_f.thin, "Thinning interval");

  DiagnoseFlags diag_f;
  auto* diag_cmd = app.add_subcommand("diagnose", "Residual diagnostics for heteroscedasticity");
  diag_cmd->add_option("-f,--fit", diag_f.fit_dir, "Fit artifact directory");
  diag_cmd->add_option("-c,--config", diag_f.config, "Run configuration (linear method without a fit)");
  diag_cmd->add_option("--predictors", diag_f.predictors, "Candidate predictors, comma separated");
  diag_cmd->add_option("--method", diag_f.method, "posterior-mean-h, linear or both");
  diag_cmd->add_option("-o,--out", diag_f.out, "Output directory");

  SectionFlags sec_f;
  auto* sec_cmd = app.add_subcommand("sections", "Exposure-response curves, joint and single-exposure effects");
  sec_cmd->add_option("-f,--fit", sec_f.fit_dir, "Fit artifact directory")->required();
  sec_cmd->add_option("--compare", sec_f.compare_dir, "Second fit artifact to overlay");
  sec_cmd->add_option("--labels", sec_f.labels, "Labels for the artifacts, comma separated");
  sec_cmd->add_option("--base", sec_f.base, "Base quantile for joint effects");
  sec_cmd->add_option("--quantiles", sec_f.quantiles, "Joint-effect target quantiles, comma separated");
  sec_cmd->add_option("--fixed", sec_f.fixed, "Fixed quantiles for single-exposure effects");
  sec_cmd->add_option("--grid", sec_f.grid, "Grid points per curve");
  sec_cmd->add_option("--stride", sec_f.stride, "Use every stride-th draw");
  sec_cmd->add_flag("--no-curves", sec_f.no_curves, "Skip univariate curves");
  sec_cmd->add_option("-o,--out", sec_f.out, "Output directory");

  PredictFlags pred_f;
  auto* pred_cmd = app.add_subcommand("predict", "Posterior predictive intervals");
  pred_cmd->add_option("-f,--fit", pred_f.fit_dir, "Fit artifact directory")->required();
  pred_cmd->add_option("--newdata", pred_f.newdata, "CSV of new rows (outcome column optional)");
  pred_cmd->add_option("--stride", pred_f.stride, "Use every stride-th draw");
  pred_cmd->add_option("-o,--out", pred_f.out, "Output directory");

  WaicFlags waic_f;
  auto* waic_cmd = app.add_subcommand("waic", "WAIC for one or more fits, ranked");
  waic_cmd->add_option("-f,--fit", waic_f.fits, "Fit artifact directory (repeat)")->required();
  waic_cmd->add_option("--labels", waic_f.labels, "Model labels, comma separated");
  waic_cmd->add_option("--stride", waic_f.stride, "Use every stride-th draw");
  waic_cmd->add_flag("--conditional-h", waic_f.conditional_h, "Pointwise density given a draw of h");
  waic_cmd->add_option("--seed", waic_f.seed, "Seed for the h draws");
  waic_cmd->add_option("-o,--out", waic_f.out, "CSV file for the ranking");

  SimulateFlags sim_f;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset from the model");
  sim_cmd->add_option("-c,--config", sim_f.config, "Simulation configuration (JSON)")->required();
  sim_cmd->add_option("-o,--out", sim_f.out, "Output directory");
  auto* sim_seed = sim_cmd->add_option("--seed", sim_f.seed, "Override the seed");
  sim_cmd->add_option("--n", sim_f.n, "Override the number of rows");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUserError;
  }
  fit_f.seed_set = seed_opt->count() > 0;
  sim_f.seed_set = sim_seed->count() > 0;

  try {
    if (*fit_cmd) return cmd_fit(fit_f, out);
    if (*diag_cmd) return cmd_diagnose(diag_f, out);
    if (*sec_cmd) return cmd_sections(sec_f, out);
    if (*pred_cmd) return cmd_predict(pred_f, out);
    if (*waic_cmd) return cmd_waic(waic_f, out);
    if (*sim_cmd) return cmd_simulate(sim_f, out);
  } catch (const InputError& e) {
    err << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kNumericalFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUserError;
  }
  return kUserError;
}

}  // namespace hbkmr::cli
