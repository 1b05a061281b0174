#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "hbkmr/data.hpp"
#include "hbkmr/inference.hpp"
#include "hbkmr/sampler.hpp"

namespace hbkmr {

enum class ResidualMethod { PosteriorMeanH, LinearApproximation };
std::string to_string(ResidualMethod m);

// Thresholds for the advisory heteroscedasticity flags.
struct AssociationOptions {
  double rho_threshold = 0.2;    // |Spearman rho(|e|, predictor)|
  double ratio_threshold = 2.0;  // max/min within-group residual variance
};

struct PredictorAssociation {
  std::string name;
  bool categorical = false;
  double spearman = 0.0;        // NaN for categorical groups
  double variance_ratio = 0.0;  // NaN for continuous predictors
  bool flagged = false;
};

struct ResidualReport {
  Eigen::VectorXd residuals;
  Eigen::VectorXd fitted;
  ResidualMethod method = ResidualMethod::PosteriorMeanH;
  std::vector<PredictorAssociation> associations;
  // Linear approximation only: regressors excluding the intercept, and any dropped as collinear.
  int n_regressors = 0;
  std::vector<std::string> dropped_columns;

  bool flags(const std::string& predictor) const;
};

// Average-rank Spearman correlation.
double spearman(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

// Every exposure, numeric covariate and categorical group.
std::vector<std::string> default_predictors(const Dataset& d);

// Values of a named numeric predictor (X column, dummy column or exposure).
Eigen::VectorXd predictor_values(const Dataset& d, const std::string& name);

std::vector<PredictorAssociation> associate(const Eigen::Ref<const Eigen::VectorXd>& residuals, const Dataset& d,
                                            const std::vector<std::string>& predictors,
                                            const AssociationOptions& opts = {});

// e = y - E(h | y) - X E(beta | y), with E(h | y) from the conditional at the posterior means of
// tau, r, gamma and beta.
ResidualReport bayesian_residuals(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                  const std::vector<std::string>& predictors = {},
                                  const AssociationOptions& opts = {});

// OLS residuals on exposures, all pairwise exposure products and covariates (plus an intercept).
ResidualReport linear_approx_residuals(const Dataset& d, const std::vector<std::string>& predictors = {},
                                       const AssociationOptions& opts = {});

struct WaicResult {
  double waic = 0.0;
  double lppd = 0.0;
  double p_waic = 0.0;
  Eigen::VectorXd pointwise_lppd;
  Eigen::VectorXd pointwise_p_waic;

  int n() const { return static_cast<int>(pointwise_lppd.size()); }
};

struct WaicOptions {
  enum class Pointwise {
    // N(y_i; x_i'beta, tau + exp(w_i'gamma)), the coordinate marginal of the h-integrated model.
    Marginal,
    // N(y_i; x_i'beta + h_i, exp(w_i'gamma)) with h drawn from h | y per draw.
    ConditionalH,
  };
  Pointwise pointwise = Pointwise::Marginal;
  int stride = 1;  // draws used; ConditionalH costs one N x N factorization per draw
  std::uint64_t seed = 1;
};

// Streaming WAIC over a draws x N matrix of pointwise log densities.
class WaicAccumulator {
 public:
  explicit WaicAccumulator(Eigen::Index n);
  void add(const Eigen::Ref<const Eigen::VectorXd>& log_density);
  WaicResult result() const;

 private:
  int draws_ = 0;
  Eigen::VectorXd max_, sum_exp_, mean_, m2_;
};

WaicResult waic(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                const WaicOptions& opts = {});

struct WaicRanking {
  std::string label;
  double waic = 0.0;
  double delta = 0.0;  // to the best model
  double p_waic = 0.0;
};

// Ascending WAIC, ties kept in input order.
std::vector<WaicRanking> compare(const std::vector<WaicResult>& models, const std::vector<std::string>& labels);

}  // namespace hbkmr
