#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hbkmr/data.hpp"
#include "hbkmr/sampler.hpp"

namespace hbkmr {

struct ContinuousCovariate {
  std::string name;
  double mean = 0.0;
  double sd = 1.0;
};

// levels must be in sorted order so the dummy layout matches what load_csv rebuilds.
struct CategoricalCovariate {
  std::string name;
  std::vector<std::string> levels;
  std::vector<double> probs;
};

// Target exposure quantiles in original units, one row per exposure.
struct Calibration {
  std::vector<double> probs{0.10, 0.25, 0.50, 0.75, 0.90};
  Eigen::MatrixXd quantiles;  // M x probs.size(), strictly increasing and positive along each row
};

struct SimConfig {
  int n = 300;
  std::vector<std::string> exposure_names;
  // Gaussian-copula correlation of the latent exposures; empty means identity.
  Eigen::MatrixXd exposure_corr;
  std::vector<ContinuousCovariate> continuous;
  std::vector<CategoricalCovariate> categorical;
  // Continuous covariates first, then each categorical's dummy columns in level order.
  Eigen::VectorXd beta;
  std::vector<VarianceSpec> variance_recipe;
  Eigen::VectorXd gamma;  // length 1 + width of the expanded recipe
  double tau = 1.0;
  Eigen::VectorXd r;  // on the standardized exposure scale
  std::uint64_t seed = 1;
  std::optional<Calibration> calibration;
  std::string outcome_name = "y";

  int m() const { return static_cast<int>(exposure_names.size()); }
  int p() const;
  void validate() const;
};

struct Truth {
  Eigen::VectorXd h;  // at the realized standardized exposures
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;
  Eigen::VectorXd sigma2;
  double tau = 0.0;
  Eigen::VectorXd r;
};

struct Simulation {
  Dataset data;  // exposures standardized
  VarianceDesign W;
  Truth truth;
};

Simulation generate(const SimConfig& c);

// Presets with five quantiles (10/25/50/75/90%) and a plausible latent correlation.
// "blood-metals": Pb, Hg, Mn, Cd in ug/L. "toenail-metals": As, Cd, Mn, Pb in ppm.
struct CalibrationPreset {
  std::vector<std::string> names;
  Calibration calibration;
  Eigen::MatrixXd corr;
};
CalibrationPreset calibration_preset(const std::string& name);

// Gaussian-copula correlation matching a Spearman correlation: 2 sin(pi rho / 6).
double spearman_to_pearson(double rho_s);

struct RecoveryRow {
  std::string parameter;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double lower95 = 0.0;
  double upper95 = 0.0;
  bool covered = false;
  // tau and r trade off against each other; their coverage is reported but not judged.
  bool informational = false;
};

std::vector<RecoveryRow> recovery_report(const Truth& truth, const PosteriorSamples& samples);

}  // namespace hbkmr
