#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hbkmr {

// Per-exposure record of the log/center/scale transform: z = (log(x + shift) - mean) / sd.
struct ExposureTransform {
  double shift = 0.0;
  double mean = 0.0;
  double sd = 1.0;

  double forward(double raw) const;
  double inverse(double standardized) const;
};

// A categorical covariate expanded into reference-coded dummy columns of X.
// levels[0] is the dropped reference level; dummy column k of X encodes levels[k + 1].
struct CategoricalGroup {
  std::string name;
  std::vector<std::string> levels;
  int first_column = 0;

  int width() const { return static_cast<int>(levels.size()) - 1; }
};

// Column roles and (optionally) fixed categorical levels for load_csv.
struct ColumnRoles {
  std::string outcome;
  std::vector<std::string> exposures;
  std::vector<std::string> covariates;
  // Covariates to treat as categorical even when every cell parses as a number.
  std::vector<std::string> force_categorical;
  // When loading new rows for prediction, reuse the training levels so the dummy layout matches.
  std::vector<CategoricalGroup> known_levels;
  // Allow a missing outcome column (prediction inputs); y is filled with NaN.
  bool outcome_optional = false;
};

struct Dataset {
  Eigen::VectorXd y;
  Eigen::MatrixXd X;  // N x P, no intercept column unless the user supplies one
  Eigen::MatrixXd Z;  // N x M
  std::string outcome_name;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;
  std::vector<CategoricalGroup> categoricals;
  // Empty until standardize_exposures has run.
  std::vector<ExposureTransform> transform_log;
  std::size_t dropped_rows = 0;

  int n() const { return static_cast<int>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }
  int m() const { return static_cast<int>(Z.cols()); }
  bool standardized() const { return !transform_log.empty(); }

  int x_index(const std::string& name) const;
  int z_index(const std::string& name) const;
  const CategoricalGroup* categorical(const std::string& name) const;

  // Throws InputError when the structural invariants do not hold.
  void validate() const;
};

Dataset load_csv(const std::string& path, const ColumnRoles& roles);

// Writes the schema load_csv reads: outcome, exposures in original units, covariates with
// categorical groups collapsed back to their level labels. Returns the matching column roles.
ColumnRoles write_csv(std::ostream& out, const Dataset& d);

// Replaces each exposure column by (log z - mean) / sd using the sample sd.
Dataset standardize_exposures(const Dataset& d);
// Applies previously fitted transforms (prediction data).
Dataset apply_exposure_transforms(const Dataset& d, const std::vector<ExposureTransform>& transforms);
// Maps standardized exposures back to original units.
Eigen::MatrixXd inverse_transform(const Dataset& d);

// Type-7 sample quantile: linear interpolation at h = (n - 1) p + 1.
double quantile(std::vector<double> v, double p);
double quantile(const Eigen::Ref<const Eigen::VectorXd>& v, double p);

struct QuantileProfile {
  std::vector<double> probs;  // 0.05, 0.10, ..., 0.95
  Eigen::MatrixXd table;      // M x probs.size()
  std::string method = "type7";
};

QuantileProfile quantile_profile(const Dataset& d);

enum class Encoding { Identity, AbsoluteValue, DummySet };

struct VarianceSpec {
  std::string column;
  Encoding encoding = Encoding::Identity;
};

Encoding parse_encoding(const std::string& text);
std::string to_string(Encoding e);

struct VarianceDesign {
  Eigen::MatrixXd W;  // N x (Q + 1), first column all ones
  std::vector<VarianceSpec> recipe;
  std::vector<std::string> column_names;  // "(intercept)" first
  bool full_rank = true;

  int q() const { return static_cast<int>(W.cols()) - 1; }
};

// check_rank off for small prediction batches, where a rank test on a few rows means nothing.
VarianceDesign build_variance_design(const Dataset& d, const std::vector<VarianceSpec>& recipe, bool check_rank = true);

}  // namespace hbkmr
