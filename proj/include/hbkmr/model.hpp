#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "hbkmr/data.hpp"
#include "hbkmr/kernel.hpp"

namespace hbkmr {

// Prior on each kernel weight r_m.
struct RPrior {
  enum class Kind {
    InverseUniform,  // 1/r ~ Uniform(0, upper): support r > 1/upper, density 1/(upper r^2)
    Uniform,         // r ~ Uniform(0, upper)
  };
  Kind kind = Kind::InverseUniform;
  double upper = 100.0;

  bool in_support(double r) const;
  double log_density(double r) const;
  std::string describe() const;
};

struct PriorSpec {
  double beta_sd = std::sqrt(1000.0);
  double gamma_sd = std::sqrt(1000.0);
  double sqrt_tau_upper = 100.0;
  RPrior r_prior;

  void validate() const;
};

// One point (beta, gamma, sqrt(tau), r) of the h-marginalized parameter space.
struct ParamState {
  Eigen::VectorXd beta;   // P
  Eigen::VectorXd gamma;  // Q + 1
  double sqrt_tau = 1.0;
  Eigen::VectorXd r;      // M

  double tau() const { return sqrt_tau * sqrt_tau; }
};

// exp(W gamma), the diagonal of S_gamma.
Eigen::VectorXd s_diag(const Eigen::Ref<const Eigen::MatrixXd>& W, const Eigen::Ref<const Eigen::VectorXd>& gamma);
Eigen::VectorXd s_diag(const VarianceDesign& W, const Eigen::Ref<const Eigen::VectorXd>& gamma);

// log MVN(y; X beta, tau K + S) from an existing factorization.
double mvn_log_density(const Eigen::Ref<const Eigen::VectorXd>& resid, const CovFactor& V);

// log p(y | beta, gamma, tau, r) with h integrated out: y ~ MVN(X beta, tau K_r + S_gamma).
double log_marginal_likelihood(const ParamState& state, const Dataset& d, const VarianceDesign& W);

double log_prior(const ParamState& state, const PriorSpec& p);

double log_posterior(const ParamState& state, const Dataset& d, const VarianceDesign& W, const PriorSpec& p);

}  // namespace hbkmr
