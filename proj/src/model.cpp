#include "hbkmr/model.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "hbkmr/error.hpp"

namespace hbkmr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double normal_log_density(double x, double sd) {
  return -0.5 * std::log(2.0 * std::numbers::pi * sd * sd) - 0.5 * (x / sd) * (x / sd);
}

void check_dims(const ParamState& s, const Dataset& d, const VarianceDesign& W) {
  if (s.beta.size() != d.p()) throw InputError("beta has length " + std::to_string(s.beta.size()) +
                                               ", expected " + std::to_string(d.p()));
  if (s.gamma.size() != W.W.cols()) throw InputError("gamma length does not match the variance design");
  if (s.r.size() != d.m()) throw InputError("r length does not match the exposure count");
  if (W.W.rows() != d.n()) throw InputError("variance design row count does not match the dataset");
}

}  // namespace

bool RPrior::in_support(double r) const {
  if (kind == Kind::InverseUniform) return r > 1.0 / upper && std::isfinite(r);
  return r > 0.0 && r < upper;
}

double RPrior::log_density(double r) const {
  if (!in_support(r)) return kNegInf;
  if (kind == Kind::InverseUniform) return -std::log(upper) - 2.0 * std::log(r);
  return -std::log(upper);
}

std::string RPrior::describe() const {
  std::string u = std::to_string(upper);
  u.erase(u.find_last_not_of('0') + 1);
  if (!u.empty() && u.back() == '.') u.pop_back();
  return (kind == Kind::InverseUniform ? "inverse-uniform(0," : "uniform(0,") + u + ")";
}

void PriorSpec::validate() const {
  if (!(beta_sd > 0.0) || !(gamma_sd > 0.0) || !(sqrt_tau_upper > 0.0) || !(r_prior.upper > 0.0))
    throw InputError("prior scales and bounds must be strictly positive");
}

Eigen::VectorXd s_diag(const Eigen::Ref<const Eigen::MatrixXd>& W, const Eigen::Ref<const Eigen::VectorXd>& gamma) {
  if (W.cols() != gamma.size())
    throw InputError("s_diag: gamma has length " + std::to_string(gamma.size()) + ", variance design has " +
                     std::to_string(W.cols()) + " columns");
  return (W * gamma).array().exp().matrix();
}

Eigen::VectorXd s_diag(const VarianceDesign& W, const Eigen::Ref<const Eigen::VectorXd>& gamma) {
  return s_diag(W.W, gamma);
}

double mvn_log_density(const Eigen::Ref<const Eigen::VectorXd>& resid, const CovFactor& V) {
  const double quad = V.half_solve(resid).squaredNorm();
  return -0.5 * (static_cast<double>(resid.size()) * std::log(2.0 * std::numbers::pi) + V.log_det() + quad);
}

double log_marginal_likelihood(const ParamState& state, const Dataset& d, const VarianceDesign& W) {
  check_dims(state, d, W);
  const KernelMatrix K(d.Z, state.r);
  const CovFactor V = factor_cov(K, state.tau(), s_diag(W, state.gamma));
  Eigen::VectorXd resid = d.y;
  if (d.p() > 0) resid -= d.X * state.beta;
  return mvn_log_density(resid, V);
}

double log_prior(const ParamState& state, const PriorSpec& p) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < state.beta.size(); ++i) lp += normal_log_density(state.beta(i), p.beta_sd);
  for (Eigen::Index i = 0; i < state.gamma.size(); ++i) lp += normal_log_density(state.gamma(i), p.gamma_sd);
  if (!(state.sqrt_tau > 0.0 && state.sqrt_tau < p.sqrt_tau_upper)) return kNegInf;
  lp -= std::log(p.sqrt_tau_upper);
  for (Eigen::Index m = 0; m < state.r.size(); ++m) {
    const double term = p.r_prior.log_density(state.r(m));
    if (term == kNegInf) return kNegInf;
    lp += term;
  }
  return lp;
}

double log_posterior(const ParamState& state, const Dataset& d, const VarianceDesign& W, const PriorSpec& p) {
  const double lp = log_prior(state, p);
  if (lp == kNegInf) return kNegInf;
  return log_marginal_likelihood(state, d, W) + lp;
}

}  // namespace hbkmr
