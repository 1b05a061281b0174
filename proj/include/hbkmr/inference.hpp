#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hbkmr/data.hpp"
#include "hbkmr/model.hpp"
#include "hbkmr/sampler.hpp"

namespace hbkmr {

inline constexpr double kZ95 = 1.959964;

struct InferenceOptions {
  // Condition on every stride-th retained draw; 1 uses all draws.
  int stride = 10;
};

// Normal moments of h(Znew) | y (or y_new | y) for a single parameter draw.
struct DrawConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

DrawConditional h_conditional_draw(const ParamState& s, const Dataset& d, const VarianceDesign& W,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Znew);

DrawConditional predict_draw(const ParamState& s, const Dataset& d, const VarianceDesign& W,
                             const Eigen::Ref<const Eigen::MatrixXd>& Xnew,
                             const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                             const Eigen::Ref<const Eigen::MatrixXd>& Wnew);

// Aggregate over draws: mean = E(mu), cov = E(Sigma) + Var(mu).
struct Conditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int n_draws = 0;
  bool diagonal_only = false;  // off-diagonal entries of cov were not computed
};

// Streaming E(mu), Var(mu) and E(Sigma) accumulator.
class ConditionalAccumulator {
 public:
  explicit ConditionalAccumulator(Eigen::Index dim, bool diagonal_only = false);
  void add(const DrawConditional& draw);
  Conditional result() const;

 private:
  bool diagonal_only_;
  int n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  Eigen::MatrixXd sigma_sum_;
};

std::vector<int> strided_rows(const PosteriorSamples& samples, const InferenceOptions& opts);

Conditional h_conditional(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                          const Eigen::Ref<const Eigen::MatrixXd>& Znew, const InferenceOptions& opts = {});

Conditional predictive(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                       const Eigen::Ref<const Eigen::MatrixXd>& Xnew, const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                       const Eigen::Ref<const Eigen::MatrixXd>& Wnew, const InferenceOptions& opts = {},
                       bool diagonal_only = true);

struct EffectEstimate {
  std::string label;
  double estimate = 0.0;
  double sd = 0.0;
  double lower95 = 0.0;
  double upper95 = 0.0;

  double width() const { return upper95 - lower95; }
};

EffectEstimate make_estimate(std::string label, double estimate, double variance);
// c' mean with variance c' cov c.
EffectEstimate contrast(const Conditional& c, const Eigen::Ref<const Eigen::VectorXd>& weights, std::string label);

// Row vector with every exposure at its q-th sample quantile (standardized scale).
Eigen::RowVectorXd quantile_profile_row(const Dataset& d, double q);

enum class CrossSectionKind { UnivariateCurve, JointEffect, SingleVariable };

// h does not involve X, so covariates enter only through the fitted beta draws.
enum class CovariateHandling { ObservedX };

struct CrossSectionRequest {
  CrossSectionKind kind = CrossSectionKind::JointEffect;
  int exposure = 0;    // univariate curve
  int grid_size = 50;  // univariate curve
  double base_quantile = 0.5;
  std::vector<double> quantiles;  // joint-effect targets or single-variable fixed quantiles
  CovariateHandling covariates = CovariateHandling::ObservedX;

  void validate(const Dataset& d) const;
};

struct CurvePoint {
  double z = 0.0;         // standardized exposure value
  double original = 0.0;  // back-transformed to original units
  EffectEstimate h;
};

// h along a grid over [q_0.01, q_0.99] of exposure m with the others at their medians.
std::vector<CurvePoint> univariate_curve(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                         int m, int grid_size = 50, const InferenceOptions& opts = {});

// h(z_q) - h(z_p0) with all exposures moved together.
EffectEstimate joint_effect(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W, double p0,
                            double q, const InferenceOptions& opts = {});

// Several targets against one base, sharing one conditioning pass.
std::vector<EffectEstimate> joint_effects(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                          double p0, const std::vector<double>& targets,
                                          const InferenceOptions& opts = {});

struct SingleVariableEffect {
  int exposure = 0;
  double fixed_quantile = 0.5;
  EffectEstimate effect;
};

// Exposure m moved from its 25th to 75th percentile, others held at each fixed quantile.
std::vector<SingleVariableEffect> single_variable_effects(const PosteriorSamples& samples, const Dataset& d,
                                                          const VarianceDesign& W,
                                                          const std::vector<double>& fixed_quantiles,
                                                          const InferenceOptions& opts = {});

// Posterior predictive moments of y_new with normal-approximation 95% intervals.
std::vector<EffectEstimate> predict(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Xnew,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Wnew, const InferenceOptions& opts = {});

}  // namespace hbkmr
