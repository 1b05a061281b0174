#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hbkmr/data.hpp"
#include "hbkmr/model.hpp"

namespace hbkmr {

struct McmcConfig {
  int n_burn = 20000;
  int n_keep = 80000;
  int thin = 1;
  std::uint64_t seed = 1;
  // Iterations between step-size adjustments during burn-in.
  int adapt_window = 50;
  double target_accept_scalar = 0.44;
  double target_accept_block = 0.234;

  // Blocks can be frozen at their starting values (used by conditional checks).
  bool update_beta = true;
  bool update_gamma = true;
  bool update_sqrt_tau = true;
  bool update_r = true;

  // Starting point; initialize() is used when empty.
  std::optional<ParamState> init;
  bool verbose = false;

  void validate() const;
};

struct BlockStats {
  std::string name;
  double acceptance = 0.0;  // post burn-in
  double step = 0.0;        // frozen proposal scale
};

struct EssResult {
  double ess = 0.0;
  bool degenerate = false;  // constant chain
};

// Effective sample size via Geyer's initial positive sequence.
EssResult ess(const Eigen::Ref<const Eigen::VectorXd>& chain);

struct PosteriorSamples {
  // n_keep x (P + Q + 1 + 1 + M): beta, gamma, sqrt_tau, r.
  Eigen::MatrixXd draws;
  std::vector<std::string> names;
  int p = 0;
  int q1 = 1;
  int m = 0;
  std::vector<BlockStats> blocks;
  Eigen::VectorXd ess;
  std::vector<bool> ess_degenerate;
  McmcConfig config;
  PriorSpec prior;

  int n_draws() const { return static_cast<int>(draws.rows()); }
  int sqrt_tau_col() const { return p + q1; }
  int r_col(int k) const { return p + q1 + 1 + k; }
  ParamState state(int i) const;
  ParamState posterior_mean_state() const;
  std::string model_label() const { return q1 == 1 ? "BKMR" : "HBKMR"; }
  // Same draws with a subset of rows (used for strided conditioning and tests).
  PosteriorSamples subset(const std::vector<int>& rows) const;
};

std::vector<std::string> parameter_names(const Dataset& d, const VarianceDesign& W);

ParamState initialize(const Dataset& d, const VarianceDesign& W, const PriorSpec& p);

// Metropolis-within-Gibbs on the h-marginalized posterior. One sweep:
//   beta     exact Gibbs draw from its normal full conditional
//   gamma    adaptive random-walk block update
//   sqrt_tau random walk on log scale
//   r_m      random walk on log scale, one coordinate at a time
// Proposal scales adapt during burn-in only and are frozen afterwards.
PosteriorSamples fit(const Dataset& d, const VarianceDesign& W, const PriorSpec& p, const McmcConfig& c);

}  // namespace hbkmr
