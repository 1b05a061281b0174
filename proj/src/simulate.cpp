#include "hbkmr/simulate.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numbers>
#include <random>

#include "hbkmr/error.hpp"
#include "hbkmr/kernel.hpp"

namespace hbkmr {
namespace {

double normal_quantile(double p) { return boost::math::quantile(boost::math::normal_distribution<double>(), p); }

// Monotone piecewise-linear map from a latent N(0,1) value to log concentration. Knots sit at
// the normal quantiles of the target probabilities; the end segments extend linearly.
double calibrated_log_value(double z, const std::vector<double>& knots, const Eigen::RowVectorXd& logq) {
  const std::size_t k = knots.size();
  std::size_t seg = 0;
  while (seg + 2 < k && z > knots[seg + 1]) ++seg;
  const double t = (z - knots[seg]) / (knots[seg + 1] - knots[seg]);
  return logq(seg) + t * (logq(seg + 1) - logq(seg));
}

Eigen::MatrixXd correlation_or_identity(const SimConfig& c) {
  if (c.exposure_corr.size() == 0) return Eigen::MatrixXd::Identity(c.m(), c.m());
  return c.exposure_corr;
}

}  // namespace

int SimConfig::p() const {
  int p = static_cast<int>(continuous.size());
  for (const auto& g : categorical) p += static_cast<int>(g.levels.size()) - 1;
  return p;
}

void SimConfig::validate() const {
  if (n < 2) throw InputError("simulation needs n >= 2");
  if (m() < 1) throw InputError("simulation needs at least one exposure");
  const Eigen::MatrixXd R = correlation_or_identity(*this);
  if (R.rows() != m() || R.cols() != m()) throw InputError("exposure correlation must be M x M");
  if (!R.isApprox(R.transpose(), 1e-12)) throw InputError("exposure correlation must be symmetric");
  for (int i = 0; i < m(); ++i)
    if (std::abs(R(i, i) - 1.0) > 1e-12) throw InputError("exposure correlation must have a unit diagonal");
  if (Eigen::LLT<Eigen::MatrixXd>(R).info() != Eigen::Success)
    throw InputError("exposure correlation is not positive definite");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InputError("true tau must be positive");
  if (r.size() != m()) throw InputError("true r needs one entry per exposure");
  for (int k = 0; k < m(); ++k)
    if (!(r(k) > 0.0) || !std::isfinite(r(k))) throw InputError("true r_m must be positive");
  if (beta.size() != p())
    throw InputError("true beta has " + std::to_string(beta.size()) + " entries, covariates expand to " +
                     std::to_string(p()));
  for (const auto& g : categorical) {
    if (g.levels.size() < 2) throw InputError("categorical covariate " + g.name + " needs at least 2 levels");
    if (g.probs.size() != g.levels.size()) throw InputError("categorical covariate " + g.name + ": probs/levels");
    if (!std::is_sorted(g.levels.begin(), g.levels.end()) ||
        std::adjacent_find(g.levels.begin(), g.levels.end()) != g.levels.end())
      throw InputError("categorical covariate " + g.name + ": levels must be distinct and sorted");
    for (double pr : g.probs)
      if (!(pr >= 0.0)) throw InputError("categorical covariate " + g.name + ": negative probability");
  }
  for (const auto& cc : continuous)
    if (!(cc.sd >= 0.0)) throw InputError("continuous covariate " + cc.name + ": sd must be >= 0");
  if (calibration) {
    const auto& cal = *calibration;
    if (cal.probs.size() < 2) throw InputError("calibration needs at least 2 quantiles");
    for (std::size_t j = 0; j < cal.probs.size(); ++j) {
      if (!(cal.probs[j] > 0.0 && cal.probs[j] < 1.0)) throw InputError("calibration probs must be in (0, 1)");
      if (j > 0 && !(cal.probs[j] > cal.probs[j - 1])) throw InputError("calibration probs must increase");
    }
    if (cal.quantiles.rows() != m() || cal.quantiles.cols() != static_cast<Eigen::Index>(cal.probs.size()))
      throw InputError("calibration table must be M x number of probs");
    for (int i = 0; i < m(); ++i)
      for (Eigen::Index j = 0; j < cal.quantiles.cols(); ++j) {
        if (!(cal.quantiles(i, j) > 0.0)) throw InputError("calibration quantiles must be positive");
        if (j > 0 && !(cal.quantiles(i, j) > cal.quantiles(i, j - 1)))
          throw InputError("calibration quantiles must increase along each row");
      }
  }
}

Simulation generate(const SimConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform;
  const int n = c.n;
  const int m = c.m();

  // Latent exposures with unit margins.
  const Eigen::MatrixXd R = correlation_or_identity(c);
  const Eigen::MatrixXd Lr = Eigen::LLT<Eigen::MatrixXd>(R).matrixL();
  Eigen::MatrixXd latent(n, m);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd e(m);
    for (int k = 0; k < m; ++k) e(k) = normal(rng);
    latent.row(i) = (Lr * e).transpose();
  }

  Dataset raw;
  raw.outcome_name = c.outcome_name;
  raw.z_names = c.exposure_names;
  raw.Z.resize(n, m);
  if (c.calibration) {
    std::vector<double> knots;
    for (double pr : c.calibration->probs) knots.push_back(normal_quantile(pr));
    for (int k = 0; k < m; ++k) {
      const Eigen::RowVectorXd logq = c.calibration->quantiles.row(k).array().log();
      for (int i = 0; i < n; ++i) raw.Z(i, k) = std::exp(calibrated_log_value(latent(i, k), knots, logq));
    }
  } else {
    raw.Z = latent.array().exp();
  }

  raw.X.resize(n, c.p());
  int col = 0;
  for (const auto& cc : c.continuous) {
    for (int i = 0; i < n; ++i) raw.X(i, col) = cc.mean + cc.sd * normal(rng);
    raw.x_names.push_back(cc.name);
    ++col;
  }
  for (const auto& g : c.categorical) {
    CategoricalGroup group{g.name, g.levels, col};
    std::discrete_distribution<int> pick(g.probs.begin(), g.probs.end());
    for (int i = 0; i < n; ++i) {
      const int level = pick(rng);
      for (int k = 0; k < group.width(); ++k) raw.X(i, col + k) = (level == k + 1) ? 1.0 : 0.0;
    }
    for (int k = 0; k < group.width(); ++k) raw.x_names.push_back(g.name + "=" + g.levels[k + 1]);
    col += group.width();
    raw.categoricals.push_back(std::move(group));
  }
  raw.y = Eigen::VectorXd::Zero(n);

  Simulation sim;
  sim.data = standardize_exposures(raw);
  sim.W = build_variance_design(sim.data, c.variance_recipe);
  if (c.gamma.size() != sim.W.W.cols())
    throw InputError("true gamma has " + std::to_string(c.gamma.size()) + " entries, variance design has " +
                     std::to_string(sim.W.W.cols()));

  // h ~ MVN(0, tau K); K is numerically singular for smooth surfaces, so jitter until it factors.
  const Eigen::MatrixXd K = kernel_matrix(sim.data.Z, sim.data.Z, c.r);
  Eigen::LLT<Eigen::MatrixXd> llt;
  for (double jitter = 1e-8;; jitter *= 10.0) {
    Eigen::MatrixXd V = c.tau * K;
    V.diagonal().array() += jitter * c.tau;
    llt.compute(V);
    if (llt.info() == Eigen::Success) break;
    if (jitter > 1e-2) throw NumericalError("kernel matrix could not be factored for the h draw");
  }
  Eigen::VectorXd e(n);
  for (int i = 0; i < n; ++i) e(i) = normal(rng);
  const Eigen::VectorXd h = llt.matrixL() * e;

  const Eigen::VectorXd sigma2 = (sim.W.W * c.gamma).array().exp();
  Eigen::VectorXd eps(n);
  for (int i = 0; i < n; ++i) eps(i) = std::sqrt(sigma2(i)) * normal(rng);
  sim.data.y = h + sim.data.X * c.beta + eps;

  sim.truth = Truth{h, c.beta, c.gamma, sigma2, c.tau, c.r};
  return sim;
}

double spearman_to_pearson(double rho_s) { return 2.0 * std::sin(std::numbers::pi * rho_s / 6.0); }

CalibrationPreset calibration_preset(const std::string& name) {
  CalibrationPreset out;
  Eigen::MatrixXd spear;
  if (name == "blood-metals") {
    out.names = {"Pb", "Hg", "Mn", "Cd"};
    out.calibration.quantiles.resize(4, 5);
    out.calibration.quantiles << 0.89, 1.20, 1.79, 3.09, 7.20,  //
        1.09, 1.78, 2.95, 5.58, 13.50,                          //
        8.11, 10.50, 13.10, 17.40, 22.63,                       //
        0.09, 0.13, 0.19, 0.28, 0.37;
    // Pb-Hg, Hg-Cd and Pb-Cd are reported; the Mn pairs are filled inside the reported range.
    spear.resize(4, 4);
    spear << 1.0, 0.50, 0.20, -0.01,  //
        0.50, 1.0, 0.10, -0.24,       //
        0.20, 0.10, 1.0, 0.10,        //
        -0.01, -0.24, 0.10, 1.0;
  } else if (name == "toenail-metals") {
    out.names = {"As", "Cd", "Mn", "Pb"};
    out.calibration.quantiles.resize(4, 5);
    out.calibration.quantiles << 0.05, 0.07, 0.11, 0.22, 0.35,  //
        0.01, 0.02, 0.04, 0.08, 0.17,                           //
        0.37, 0.59, 0.99, 1.78, 2.94,                           //
        0.16, 0.28, 0.47, 0.87, 1.74;
    // Mn-As 0.63 and Cd-Mn 0.41 are reported; other pairs sit between them.
    spear.resize(4, 4);
    spear << 1.0, 0.50, 0.63, 0.50,  //
        0.50, 1.0, 0.41, 0.50,       //
        0.63, 0.41, 1.0, 0.50,       //
        0.50, 0.50, 0.50, 1.0;
  } else {
    throw InputError("unknown calibration preset '" + name + "' (blood-metals, toenail-metals)");
  }
  out.corr = spear.unaryExpr([](double s) { return spearman_to_pearson(s); });
  out.corr.diagonal().setOnes();
  return out;
}

std::vector<RecoveryRow> recovery_report(const Truth& truth, const PosteriorSamples& samples) {
  if (truth.beta.size() != samples.p || truth.gamma.size() != samples.q1 || truth.r.size() != samples.m)
    throw InputError("truth record does not match the fitted parameter layout");
  if (samples.n_draws() < 1) throw InputError("recovery_report needs at least one draw");

  auto row = [](std::string name, double t, const Eigen::VectorXd& chain, bool info) {
    RecoveryRow r;
    r.parameter = std::move(name);
    r.truth = t;
    r.mean = chain.mean();
    r.bias = r.mean - t;
    r.lower95 = quantile(chain, 0.025);
    r.upper95 = quantile(chain, 0.975);
    r.covered = r.lower95 <= t && t <= r.upper95;
    r.informational = info;
    return r;
  };

  std::vector<RecoveryRow> out;
  for (int j = 0; j < samples.p; ++j) out.push_back(row(samples.names[j], truth.beta(j), samples.draws.col(j), false));
  for (int k = 0; k < samples.q1; ++k)
    out.push_back(row(samples.names[samples.p + k], truth.gamma(k), samples.draws.col(samples.p + k), false));
  const Eigen::VectorXd tau = samples.draws.col(samples.sqrt_tau_col()).array().square();
  out.push_back(row("tau", truth.tau, tau, true));
  for (int k = 0; k < samples.m; ++k)
    out.push_back(row(samples.names[samples.r_col(k)], truth.r(k), samples.draws.col(samples.r_col(k)), true));
  return out;
}

}  // namespace hbkmr
