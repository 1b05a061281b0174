#include "hbkmr/sampler.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <iostream>
#include <limits>
#include <random>

#include "hbkmr/error.hpp"
#include "hbkmr/kernel.hpp"

namespace hbkmr {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() < 2) return 0.0;
  return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1);
}

// Robbins-Monro controller for a log proposal scale.
struct StepSize {
  double log_step = 0.0;
  double target = 0.44;
  int accepted = 0;
  int proposed = 0;
  int windows = 0;
  long long kept_accepted = 0;
  long long kept_proposed = 0;

  void record(bool accept, bool burn) {
    if (burn) {
      ++proposed;
      accepted += accept;
    } else {
      ++kept_proposed;
      kept_accepted += accept;
    }
  }
  void adapt() {
    if (proposed == 0) return;
    ++windows;
    const double rate = static_cast<double>(accepted) / proposed;
    log_step += (rate - target) / std::sqrt(static_cast<double>(windows));
    accepted = proposed = 0;
  }
  double step() const { return std::exp(log_step); }
  double acceptance() const {
    return kept_proposed ? static_cast<double>(kept_accepted) / static_cast<double>(kept_proposed) : 0.0;
  }
};

// Cached quantities for the current (gamma, tau, r) and the proposals made against it.
class Chain {
 public:
  Chain(const Dataset& d, const VarianceDesign& W, const PriorSpec& p, ParamState init)
      : d_(d), W_(W), p_(p), dist_(d.Z), st_(std::move(init)) {
    dist_.fill_lower(st_.r, K_);
    s_ = s_diag(W_, st_.gamma);
    V_ = CovFactor(K_, st_.tau(), s_);
    refresh_resid();
    loglik_ = loglik_for(V_);
  }

  const ParamState& state() const { return st_; }
  double loglik() const { return loglik_; }

  double log_prior_gamma(const Eigen::VectorXd& g) const {
    return -0.5 * g.squaredNorm() / (p_.gamma_sd * p_.gamma_sd);
  }

  void gibbs_beta(std::mt19937_64& rng) {
    if (d_.p() == 0) return;
    const Eigen::MatrixXd LX = V_.half_solve(d_.X);
    const Eigen::VectorXd Ly = V_.half_solve(d_.y);
    Eigen::MatrixXd A = LX.transpose() * LX;
    A.diagonal().array() += 1.0 / (p_.beta_sd * p_.beta_sd);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw NumericalError("beta full-conditional precision is not positive definite");
    const Eigen::VectorXd mean = llt.solve(LX.transpose() * Ly);
    Eigen::VectorXd z(d_.p());
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = normal_(rng);
    st_.beta = mean + llt.matrixU().solve(z);
    refresh_resid();
    loglik_ = loglik_for(V_);
  }

  bool propose_gamma(const Eigen::VectorXd& g, std::mt19937_64& rng) {
    const Eigen::VectorXd s = s_diag(W_, g);
    if (!s.allFinite() || !(s.array() > 0.0).all()) return false;
    auto V = try_factor(K_, st_.tau(), s);
    if (!V) return false;
    const double ll = loglik_for(*V);
    const double log_ratio = ll + log_prior_gamma(g) - loglik_ - log_prior_gamma(st_.gamma);
    if (!accept(log_ratio, rng)) return false;
    st_.gamma = g;
    s_ = s;
    V_ = std::move(*V);
    loglik_ = ll;
    return true;
  }

  // Random walk on eta = log sqrt(tau); the Jacobian adds eta to the log target.
  bool propose_log_sqrt_tau(double eta, std::mt19937_64& rng) {
    const double sqrt_tau = std::exp(eta);
    if (!(sqrt_tau < p_.sqrt_tau_upper) || !(sqrt_tau > 0.0)) return false;
    auto V = try_factor(K_, sqrt_tau * sqrt_tau, s_);
    if (!V) return false;
    const double ll = loglik_for(*V);
    const double log_ratio = ll + eta - loglik_ - std::log(st_.sqrt_tau);
    if (!accept(log_ratio, rng)) return false;
    st_.sqrt_tau = sqrt_tau;
    V_ = std::move(*V);
    loglik_ = ll;
    return true;
  }

  bool propose_log_r(int m, double rho, std::mt19937_64& rng) {
    const double r_new = std::exp(rho);
    const double prior_new = p_.r_prior.log_density(r_new);
    if (prior_new == kNegInf) return false;
    Eigen::VectorXd r = st_.r;
    r(m) = r_new;
    dist_.fill_lower(r, Kprop_);
    auto V = try_factor(Kprop_, st_.tau(), s_);
    if (!V) return false;
    const double ll = loglik_for(*V);
    const double log_ratio =
        ll + prior_new + rho - loglik_ - p_.r_prior.log_density(st_.r(m)) - std::log(st_.r(m));
    if (!accept(log_ratio, rng)) return false;
    st_.r = r;
    K_.swap(Kprop_);
    V_ = std::move(*V);
    loglik_ = ll;
    return true;
  }

 private:
  void refresh_resid() {
    resid_ = d_.y;
    if (d_.p() > 0) resid_ -= d_.X * st_.beta;
  }

  double loglik_for(const CovFactor& V) const { return mvn_log_density(resid_, V); }

  static std::optional<CovFactor> try_factor(const Eigen::MatrixXd& K, double tau, const Eigen::VectorXd& s) {
    try {
      return CovFactor(K, tau, s);
    } catch (const NumericalError&) {
      return std::nullopt;
    }
  }

  bool accept(double log_ratio, std::mt19937_64& rng) {
    if (!std::isfinite(log_ratio)) return log_ratio > 0.0;
    if (log_ratio >= 0.0) return true;
    return std::log(uniform_(rng)) < log_ratio;
  }

  const Dataset& d_;
  const VarianceDesign& W_;
  const PriorSpec& p_;
  PairwiseDistances dist_;
  ParamState st_;
  Eigen::MatrixXd K_, Kprop_;
  Eigen::VectorXd s_;
  Eigen::VectorXd resid_;
  CovFactor V_;
  double loglik_ = 0.0;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Proposal covariance for the gamma block, learned from the later half of the burn-in draws.
struct BlockProposal {
  StepSize scale;
  Eigen::MatrixXd chol;  // lower Cholesky factor of the base covariance
  std::vector<Eigen::VectorXd> history;
  bool learned = false;

  explicit BlockProposal(int dim, double target) : chol(Eigen::MatrixXd::Identity(dim, dim) * 0.1) {
    scale.target = target;
  }

  void learn(int min_draws) {
    const auto n = static_cast<Eigen::Index>(history.size());
    const Eigen::Index start = n / 2;
    if (n - start < min_draws) return;
    const Eigen::Index dim = chol.rows();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = start; i < n; ++i) mean += history[i];
    mean /= static_cast<double>(n - start);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (Eigen::Index i = start; i < n; ++i) cov += (history[i] - mean) * (history[i] - mean).transpose();
    cov /= static_cast<double>(n - start - 1);
    cov *= 2.38 * 2.38 / static_cast<double>(dim);
    cov.diagonal().array() += 1e-10;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return;
    chol = llt.matrixL();
    // Scale was tuned for the isotropic start; restart it for the learned shape.
    if (!learned) {
      scale.log_step = 0.0;
      scale.windows = 0;
    }
    learned = true;
  }
};

}  // namespace

void McmcConfig::validate() const {
  if (n_burn < 0) throw InputError("n_burn must be nonnegative");
  if (n_keep < 1) throw InputError("n_keep must be at least 1");
  if (thin < 1) throw InputError("thin must be at least 1");
  if (adapt_window < 1) throw InputError("adapt_window must be at least 1");
  if (!(target_accept_scalar > 0.0 && target_accept_scalar < 1.0) ||
      !(target_accept_block > 0.0 && target_accept_block < 1.0))
    throw InputError("target acceptance rates must lie in (0, 1)");
}

EssResult ess(const Eigen::Ref<const Eigen::VectorXd>& chain) {
  const Eigen::Index n = chain.size();
  if (n < 10) throw InputError("ess needs a chain of length at least 10");
  const Eigen::VectorXd x = chain.array() - chain.mean();
  const double c0 = x.squaredNorm() / static_cast<double>(n);
  if (!(c0 > 0.0) || !std::isfinite(c0)) return {static_cast<double>(n), true};

  // Autocovariance through a zero-padded FFT.
  Eigen::Index len = 1;
  while (len < 2 * n) len <<= 1;
  std::vector<double> padded(static_cast<std::size_t>(len), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) padded[i] = x(i);
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  fft.fwd(freq, padded);
  for (auto& f : freq) f = std::norm(f);
  std::vector<double> acov;
  fft.inv(acov, freq);

  auto rho = [&](Eigen::Index t) { return acov[t] / acov[0]; };
  double tau = -1.0;
  for (Eigen::Index k = 0; 2 * k + 1 < n; ++k) {
    const double pair = rho(2 * k) + rho(2 * k + 1);
    if (!(pair > 0.0)) break;
    tau += 2.0 * pair;
  }
  double e = static_cast<double>(n) / std::max(tau, 1e-12);
  e = std::min(e, static_cast<double>(n));
  return {e, false};
}

ParamState PosteriorSamples::state(int i) const {
  ParamState s;
  const Eigen::VectorXd row = draws.row(i).transpose();
  s.beta = row.segment(0, p);
  s.gamma = row.segment(p, q1);
  s.sqrt_tau = row(sqrt_tau_col());
  s.r = row.segment(r_col(0), m);
  return s;
}

ParamState PosteriorSamples::posterior_mean_state() const {
  ParamState s;
  const Eigen::VectorXd mean = draws.colwise().mean().transpose();
  s.beta = mean.segment(0, p);
  s.gamma = mean.segment(p, q1);
  s.sqrt_tau = mean(sqrt_tau_col());
  s.r = mean.segment(r_col(0), m);
  return s;
}

PosteriorSamples PosteriorSamples::subset(const std::vector<int>& rows) const {
  PosteriorSamples out = *this;
  out.draws.resize(static_cast<Eigen::Index>(rows.size()), draws.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.draws.row(i) = draws.row(rows[i]);
  return out;
}

std::vector<std::string> parameter_names(const Dataset& d, const VarianceDesign& W) {
  std::vector<std::string> names;
  for (const auto& x : d.x_names) names.push_back("beta[" + x + "]");
  for (const auto& w : W.column_names) names.push_back("gamma[" + w + "]");
  names.emplace_back("sqrt_tau");
  for (const auto& z : d.z_names) names.push_back("r[" + z + "]");
  return names;
}

ParamState initialize(const Dataset& d, const VarianceDesign& W, const PriorSpec& p) {
  ParamState s;
  s.beta = Eigen::VectorXd::Zero(d.p());
  if (d.p() > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d.X);
    if (qr.rank() < d.p()) {
      warn("covariate matrix is rank deficient; starting beta at zero");
    } else {
      s.beta = qr.solve(d.y);
    }
  }
  Eigen::VectorXd resid = d.y;
  if (d.p() > 0) resid -= d.X * s.beta;
  const double resid_var = std::max(sample_variance(resid), 1e-8);
  s.gamma = Eigen::VectorXd::Zero(W.W.cols());
  s.gamma(0) = std::log(resid_var);

  const double sd_y = std::sqrt(sample_variance(d.y));
  s.sqrt_tau = std::clamp(sd_y / 2.0, 1e-3, 0.5 * p.sqrt_tau_upper);

  double r0 = 0.1;
  if (!p.r_prior.in_support(r0))
    r0 = p.r_prior.kind == RPrior::Kind::InverseUniform ? 2.0 / p.r_prior.upper : 0.5 * p.r_prior.upper;
  s.r = Eigen::VectorXd::Constant(d.m(), r0);
  return s;
}

PosteriorSamples fit(const Dataset& d, const VarianceDesign& W, const PriorSpec& p, const McmcConfig& c) {
  d.validate();
  p.validate();
  c.validate();
  if (W.W.rows() != d.n()) throw InputError("variance design row count does not match the dataset");

  ParamState init = c.init ? *c.init : initialize(d, W, p);
  if (init.beta.size() != d.p() || init.gamma.size() != W.W.cols() || init.r.size() != d.m())
    throw InputError("initial state has the wrong dimensions");
  if (!std::isfinite(log_prior(init, p)))
    throw NumericalError("initial state is outside the prior support; re-initialize inside the support");

  std::optional<Chain> chain;
  try {
    chain.emplace(d, W, p, init);
  } catch (const NumericalError& e) {
    throw NumericalError(std::string("log-posterior is not finite at the initial state (") + e.what() +
                         "); re-initialize the chain");
  }
  if (!std::isfinite(chain->loglik()))
    throw NumericalError("log-posterior is not finite at the initial state; re-initialize the chain");

  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal;

  const int q1 = static_cast<int>(W.W.cols());
  BlockProposal gamma_prop(q1, q1 == 1 ? c.target_accept_scalar : c.target_accept_block);
  StepSize tau_step;
  tau_step.target = c.target_accept_scalar;
  tau_step.log_step = std::log(0.2);
  std::vector<StepSize> r_steps(d.m());
  for (auto& s : r_steps) {
    s.target = c.target_accept_scalar;
    s.log_step = std::log(0.5);
  }

  PosteriorSamples out;
  out.p = d.p();
  out.q1 = q1;
  out.m = d.m();
  out.names = parameter_names(d, W);
  out.config = c;
  out.prior = p;
  out.draws.resize(c.n_keep, static_cast<Eigen::Index>(out.names.size()));

  const long long total = static_cast<long long>(c.n_burn) + static_cast<long long>(c.n_keep) * c.thin;
  int kept = 0;
  for (long long it = 0; it < total; ++it) {
    const bool burn = it < c.n_burn;

    if (c.update_beta) chain->gibbs_beta(rng);

    if (c.update_gamma) {
      Eigen::VectorXd z(q1);
      for (int k = 0; k < q1; ++k) z(k) = normal(rng);
      const Eigen::VectorXd g = chain->state().gamma + gamma_prop.scale.step() * (gamma_prop.chol * z);
      gamma_prop.scale.record(chain->propose_gamma(g, rng), burn);
      if (burn) gamma_prop.history.push_back(chain->state().gamma);
    }

    if (c.update_sqrt_tau) {
      const double eta = std::log(chain->state().sqrt_tau) + tau_step.step() * normal(rng);
      tau_step.record(chain->propose_log_sqrt_tau(eta, rng), burn);
    }

    if (c.update_r) {
      for (int m = 0; m < d.m(); ++m) {
        const double rho = std::log(chain->state().r(m)) + r_steps[m].step() * normal(rng);
        r_steps[m].record(chain->propose_log_r(m, rho, rng), burn);
      }
    }

    if (burn && (it + 1) % c.adapt_window == 0) {
      gamma_prop.scale.adapt();
      gamma_prop.learn(2 * c.adapt_window);
      tau_step.adapt();
      for (auto& s : r_steps) s.adapt();
    }

    if (!burn && (it - c.n_burn + 1) % c.thin == 0) {
      const ParamState& s = chain->state();
      auto row = out.draws.row(kept++);
      row.segment(0, out.p) = s.beta.transpose();
      row.segment(out.p, q1) = s.gamma.transpose();
      row(out.sqrt_tau_col()) = s.sqrt_tau;
      row.segment(out.r_col(0), out.m) = s.r.transpose();
    }

    if (c.verbose && total >= 10 && (it + 1) % (total / 10) == 0)
      std::cerr << "  " << (it + 1) * 100 / total << "% (" << (it + 1) << "/" << total << " iterations)\n";
  }

  if (c.update_gamma) out.blocks.push_back({"gamma", gamma_prop.scale.acceptance(), gamma_prop.scale.step()});
  if (c.update_sqrt_tau) out.blocks.push_back({"sqrt_tau", tau_step.acceptance(), tau_step.step()});
  if (c.update_r)
    for (int m = 0; m < d.m(); ++m)
      out.blocks.push_back({"r[" + d.z_names[m] + "]", r_steps[m].acceptance(), r_steps[m].step()});

  // Chains shorter than the estimator minimum report their length, flagged.
  out.ess = Eigen::VectorXd::Constant(out.draws.cols(), out.n_draws());
  out.ess_degenerate.assign(static_cast<std::size_t>(out.draws.cols()), out.n_draws() < 10);
  if (out.n_draws() >= 10) {
    for (Eigen::Index j = 0; j < out.draws.cols(); ++j) {
      const EssResult e = ess(out.draws.col(j));
      out.ess(j) = e.ess;
      out.ess_degenerate[j] = e.degenerate;
    }
  }
  return out;
}

}  // namespace hbkmr
