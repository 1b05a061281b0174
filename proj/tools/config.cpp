#include "config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "hbkmr/error.hpp"

namespace hbkmr::cli {
namespace {

namespace fs = std::filesystem;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw InputError("unknown key '" + key + "' in " + where);
}

template <typename T>
T get(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw InputError(where + "." + key + " has the wrong type");
  }
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty()) return path;
  fs::path p(path);
  if (p.is_relative()) p = fs::path(base_dir) / p;
  return fs::absolute(p).lexically_normal().string();
}

Eigen::VectorXd vector_of(const json& j, const char* key, const std::string& where) {
  const auto v = get<std::vector<double>>(j, key, {}, where);
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd matrix_of(const json& j, const std::string& where) {
  std::vector<std::vector<double>> rows;
  try {
    rows = j.get<std::vector<std::vector<double>>>();
  } catch (const json::exception&) {
    throw InputError(where + " must be an array of numeric rows");
  }
  if (rows.empty()) return {};
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size()) throw InputError(where + " rows differ in length");
    for (std::size_t k = 0; k < rows[i].size(); ++k)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return out;
}

std::vector<VarianceSpec> variance_list(const json& j, const std::string& where) {
  std::vector<VarianceSpec> out;
  if (!j.is_array()) throw InputError(where + " must be an array");
  for (const auto& e : j) {
    if (e.is_string()) {
      out.push_back(parse_variance_entry(e.get<std::string>()));
    } else if (e.is_object()) {
      check_keys(e, {"column", "encoding"}, where + " entry");
      VarianceSpec s;
      s.column = get<std::string>(e, "column", "", where);
      s.encoding = parse_encoding(get<std::string>(e, "encoding", "identity", where));
      if (s.column.empty()) throw InputError(where + " entry needs a column");
      out.push_back(s);
    } else {
      throw InputError(where + " entries must be strings or objects");
    }
  }
  return out;
}

}  // namespace

VarianceSpec parse_variance_entry(std::string_view text) {
  VarianceSpec s;
  if (text.size() >= 2 && text.front() == '|' && text.back() == '|') {
    s.column = std::string(text.substr(1, text.size() - 2));
    s.encoding = Encoding::AbsoluteValue;
  } else {
    s.column = std::string(text);
  }
  if (s.column.empty()) throw InputError("empty variance predictor");
  return s;
}

std::string format_variance_entry(const VarianceSpec& s) {
  return s.encoding == Encoding::AbsoluteValue ? "|" + s.column + "|" : s.column;
}

RunConfig parse_run_config(const json& j, const std::string& base_dir) {
  check_keys(j, {"input", "columns", "variance", "prior", "mcmc", "outputs", "output_dir"}, "config");
  RunConfig c;
  c.input = resolve(get<std::string>(j, "input", "", "config"), base_dir);

  if (j.contains("columns")) {
    const auto& col = j.at("columns");
    check_keys(col, {"outcome", "exposures", "covariates", "categorical"}, "columns");
    c.roles.outcome = get<std::string>(col, "outcome", "", "columns");
    c.roles.exposures = get<std::vector<std::string>>(col, "exposures", {}, "columns");
    c.roles.covariates = get<std::vector<std::string>>(col, "covariates", {}, "columns");
    c.roles.force_categorical = get<std::vector<std::string>>(col, "categorical", {}, "columns");
  }
  if (j.contains("variance")) c.variance = variance_list(j.at("variance"), "variance");

  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    check_keys(p, {"beta_sd", "gamma_sd", "sqrt_tau_upper", "r"}, "prior");
    c.prior.beta_sd = get<double>(p, "beta_sd", c.prior.beta_sd, "prior");
    c.prior.gamma_sd = get<double>(p, "gamma_sd", c.prior.gamma_sd, "prior");
    c.prior.sqrt_tau_upper = get<double>(p, "sqrt_tau_upper", c.prior.sqrt_tau_upper, "prior");
    if (p.contains("r")) {
      const auto& r = p.at("r");
      check_keys(r, {"kind", "upper"}, "prior.r");
      const auto kind = get<std::string>(r, "kind", "inverse-uniform", "prior.r");
      if (kind == "inverse-uniform") {
        c.prior.r_prior.kind = RPrior::Kind::InverseUniform;
      } else if (kind == "uniform") {
        c.prior.r_prior.kind = RPrior::Kind::Uniform;
      } else {
        throw InputError("prior.r.kind must be 'inverse-uniform' or 'uniform'");
      }
      c.prior.r_prior.upper = get<double>(r, "upper", 100.0, "prior.r");
    }
  }

  if (j.contains("mcmc")) {
    const auto& m = j.at("mcmc");
    check_keys(m, {"burn", "keep", "thin", "seed", "adapt_window", "verbose"}, "mcmc");
    c.mcmc.n_burn = get<int>(m, "burn", c.mcmc.n_burn, "mcmc");
    c.mcmc.n_keep = get<int>(m, "keep", c.mcmc.n_keep, "mcmc");
    c.mcmc.thin = get<int>(m, "thin", c.mcmc.thin, "mcmc");
    c.mcmc.seed = get<std::uint64_t>(m, "seed", c.mcmc.seed, "mcmc");
    c.mcmc.adapt_window = get<int>(m, "adapt_window", c.mcmc.adapt_window, "mcmc");
    c.mcmc.verbose = get<bool>(m, "verbose", false, "mcmc");
  }

  if (j.contains("outputs")) {
    const auto& o = j.at("outputs");
    check_keys(o,
               {"diagnostics_predictors", "residual_method", "curve_grid", "joint_base", "joint_quantiles",
                "single_fixed", "stride", "waic", "predict_input"},
               "outputs");
    auto& out = c.outputs;
    out.diagnostics_predictors = get(o, "diagnostics_predictors", out.diagnostics_predictors, "outputs");
    out.residual_method = get(o, "residual_method", out.residual_method, "outputs");
    out.curve_grid = get(o, "curve_grid", out.curve_grid, "outputs");
    out.joint_base = get(o, "joint_base", out.joint_base, "outputs");
    out.joint_quantiles = get(o, "joint_quantiles", out.joint_quantiles, "outputs");
    out.single_fixed = get(o, "single_fixed", out.single_fixed, "outputs");
    out.stride = get(o, "stride", out.stride, "outputs");
    out.waic = get(o, "waic", out.waic, "outputs");
    out.predict_input = resolve(get(o, "predict_input", out.predict_input, "outputs"), base_dir);
  }
  c.output_dir = resolve(get<std::string>(j, "output_dir", c.output_dir, "config"), base_dir);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw InputError("config " + path + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, fs::absolute(fs::path(path)).parent_path().string());
}

json to_json(const RunConfig& c) {
  json j;
  j["input"] = c.input;
  j["columns"] = {{"outcome", c.roles.outcome},
                  {"exposures", c.roles.exposures},
                  {"covariates", c.roles.covariates},
                  {"categorical", c.roles.force_categorical}};
  json var = json::array();
  for (const auto& s : c.variance) var.push_back(format_variance_entry(s));
  j["variance"] = var;
  j["prior"] = {{"beta_sd", c.prior.beta_sd},
                {"gamma_sd", c.prior.gamma_sd},
                {"sqrt_tau_upper", c.prior.sqrt_tau_upper},
                {"r",
                 {{"kind", c.prior.r_prior.kind == RPrior::Kind::Uniform ? "uniform" : "inverse-uniform"},
                  {"upper", c.prior.r_prior.upper}}}};
  j["mcmc"] = {{"burn", c.mcmc.n_burn},
               {"keep", c.mcmc.n_keep},
               {"thin", c.mcmc.thin},
               {"seed", c.mcmc.seed},
               {"adapt_window", c.mcmc.adapt_window}};
  const auto& o = c.outputs;
  j["outputs"] = {{"diagnostics_predictors", o.diagnostics_predictors},
                  {"residual_method", o.residual_method},
                  {"curve_grid", o.curve_grid},
                  {"joint_base", o.joint_base},
                  {"joint_quantiles", o.joint_quantiles},
                  {"single_fixed", o.single_fixed},
                  {"stride", o.stride},
                  {"waic", o.waic},
                  {"predict_input", o.predict_input}};
  j["output_dir"] = c.output_dir;
  return j;
}

SimConfig parse_sim_config(const json& j) {
  check_keys(j,
             {"n", "seed", "outcome", "exposures", "preset", "correlation", "calibration", "covariates", "beta",
              "variance", "gamma", "tau", "r"},
             "simulation config");
  const std::string where = "simulation config";
  SimConfig c;
  c.n = get<int>(j, "n", c.n, where);
  c.seed = get<std::uint64_t>(j, "seed", c.seed, where);
  c.outcome_name = get<std::string>(j, "outcome", c.outcome_name, where);
  if (j.contains("preset")) {
    const auto preset = calibration_preset(get<std::string>(j, "preset", "", where));
    c.exposure_names = preset.names;
    c.calibration = preset.calibration;
    c.exposure_corr = preset.corr;
  }
  if (j.contains("exposures")) c.exposure_names = get<std::vector<std::string>>(j, "exposures", {}, where);
  if (j.contains("correlation")) c.exposure_corr = matrix_of(j.at("correlation"), "correlation");
  if (j.contains("calibration")) {
    const auto& cal = j.at("calibration");
    check_keys(cal, {"probs", "quantiles"}, "calibration");
    Calibration out;
    out.probs = get(cal, "probs", out.probs, "calibration");
    if (!cal.contains("quantiles")) throw InputError("calibration needs a quantiles table");
    out.quantiles = matrix_of(cal.at("quantiles"), "calibration.quantiles");
    c.calibration = out;
  }
  if (j.contains("covariates")) {
    const auto& cov = j.at("covariates");
    check_keys(cov, {"continuous", "categorical"}, "covariates");
    for (const auto& e : cov.value("continuous", json::array())) {
      check_keys(e, {"name", "mean", "sd"}, "continuous covariate");
      c.continuous.push_back({get<std::string>(e, "name", "", where), get<double>(e, "mean", 0.0, where),
                              get<double>(e, "sd", 1.0, where)});
    }
    for (const auto& e : cov.value("categorical", json::array())) {
      check_keys(e, {"name", "levels", "probs"}, "categorical covariate");
      CategoricalCovariate g;
      g.name = get<std::string>(e, "name", "", where);
      g.levels = get<std::vector<std::string>>(e, "levels", {}, where);
      g.probs = get<std::vector<double>>(e, "probs", std::vector<double>(g.levels.size(), 1.0), where);
      c.categorical.push_back(std::move(g));
    }
  }
  c.beta = vector_of(j, "beta", where);
  if (j.contains("variance")) c.variance_recipe = variance_list(j.at("variance"), "variance");
  c.gamma = j.contains("gamma") ? vector_of(j, "gamma", where) : Eigen::VectorXd::Zero(1);
  c.tau = get<double>(j, "tau", c.tau, where);
  c.r = j.contains("r") ? vector_of(j, "r", where) : Eigen::VectorXd::Constant(c.m(), 0.1);
  return c;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << text;
  if (!out) throw InputError("write failed for " + path);
}

}  // namespace hbkmr::cli
