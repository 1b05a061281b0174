#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hbkmr/data.hpp"
#include "hbkmr/model.hpp"
#include "hbkmr/sampler.hpp"
#include "hbkmr/simulate.hpp"

namespace hbkmr::cli {

using json = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

struct OutputSpec {
  std::vector<std::string> diagnostics_predictors;  // empty: every exposure and covariate
  std::string residual_method = "posterior-mean-h";  // or "linear", "both"
  int curve_grid = 50;
  double joint_base = 0.5;
  std::vector<double> joint_quantiles{0.10, 0.20, 0.30, 0.40, 0.50, 0.60, 0.70, 0.80, 0.90};
  std::vector<double> single_fixed{0.25, 0.50, 0.75};
  int stride = 10;
  bool waic = true;
  std::string predict_input;  // new rows for cmd_predict; empty predicts the training rows
};

struct RunConfig {
  std::string input;  // absolute after resolution
  ColumnRoles roles;
  std::vector<VarianceSpec> variance;
  PriorSpec prior;
  McmcConfig mcmc;
  OutputSpec outputs;
  std::string output_dir = "hbkmr_out";
};

// Relative paths resolve against base_dir (the config file's directory).
RunConfig parse_run_config(const json& j, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);
json to_json(const RunConfig& c);

// "z1" identity, "|z1|" absolute value, categorical names expand to dummies.
VarianceSpec parse_variance_entry(std::string_view text);
std::string format_variance_entry(const VarianceSpec& s);

SimConfig parse_sim_config(const json& j);

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace hbkmr::cli
