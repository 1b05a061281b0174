#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "hbkmr/error.hpp"
#include "hbkmr/model.hpp"
#include "hbkmr/simulate.hpp"
#include "oracles.hpp"

using namespace hbkmr;

namespace {

SimConfig base_config() {
  SimConfig c;
  c.n = 200;
  c.exposure_names = {"z1", "z2", "z3"};
  c.continuous = {{"age", 30.0, 5.0}};
  c.categorical = {{"site", {"a", "b", "c"}, {0.3, 0.3, 0.4}}};
  c.beta = Eigen::Vector3d(0.5, -0.2, 0.4);
  c.variance_recipe = {{"site", Encoding::Identity}};
  c.gamma = Eigen::Vector3d(std::log(0.5), 0.0, 0.0);
  c.tau = 1.0;
  c.r = Eigen::Vector3d(0.5, 0.2, 0.1);
  c.seed = 11;
  return c;
}

double sample_var(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / (v.size() - 1.0);
}

double sample_var(const Eigen::VectorXd& v) { return sample_var(std::vector<double>(v.data(), v.data() + v.size())); }

}  // namespace

TEST_CASE("generated data has the configured shape and a consistent truth record") {
  const SimConfig c = base_config();
  const Simulation s = generate(c);
  const Dataset& d = s.data;
  CHECK(d.n() == 200);
  CHECK(d.m() == 3);
  CHECK(d.p() == 3);
  CHECK(d.x_names == std::vector<std::string>{"age", "site=b", "site=c"});
  REQUIRE(d.categoricals.size() == 1);
  CHECK(d.categoricals[0].levels == std::vector<std::string>{"a", "b", "c"});
  CHECK(d.standardized());
  CHECK_NOTHROW(d.validate());
  for (int m = 0; m < 3; ++m) {
    CHECK(std::abs(d.Z.col(m).mean()) < 1e-12);
    CHECK(sample_var(Eigen::VectorXd(d.Z.col(m))) == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(s.W.column_names == std::vector<std::string>{"(intercept)", "site=b", "site=c"});
  CHECK(s.truth.h.size() == 200);
  CHECK((s.truth.sigma2 - (s.W.W * c.gamma).array().exp().matrix()).cwiseAbs().maxCoeff() < 1e-12);
  // Raw exposures are log-normal: every back-transformed value is positive.
  CHECK(inverse_transform(d).minCoeff() > 0.0);
}

TEST_CASE("identical configs give identical datasets; seeds matter") {
  const SimConfig c = base_config();
  const Simulation a = generate(c), b = generate(c);
  CHECK(a.data.y == b.data.y);
  CHECK(a.data.Z == b.data.Z);
  CHECK(a.data.X == b.data.X);
  CHECK(a.truth.h == b.truth.h);
  SimConfig other = c;
  other.seed = 12;
  CHECK(generate(other).data.y != a.data.y);
}

TEST_CASE("homoscedastic gamma gives homogeneous noise across driver groups at N = 500") {
  SimConfig c = base_config();
  c.n = 500;
  const Simulation s = generate(c);
  const Eigen::VectorXd eps = s.data.y - s.truth.h - s.data.X * c.beta;
  std::vector<std::vector<double>> groups(3);
  for (int i = 0; i < 500; ++i) {
    const int level = s.data.X(i, 1) == 1.0 ? 1 : s.data.X(i, 2) == 1.0 ? 2 : 0;
    groups[level].push_back(eps(i));
  }
  std::vector<double> v;
  for (const auto& g : groups) v.push_back(sample_var(g));
  CHECK(*std::max_element(v.begin(), v.end()) / *std::min_element(v.begin(), v.end()) < 1.5);
}

TEST_CASE("heteroscedastic gamma separates the group noise variances") {
  SimConfig c = base_config();
  c.n = 600;
  c.gamma = Eigen::Vector3d(std::log(0.25), std::log(4.0), std::log(16.0));
  const Simulation s = generate(c);
  const Eigen::VectorXd eps = s.data.y - s.truth.h - s.data.X * c.beta;
  std::vector<double> g0, g2;
  for (int i = 0; i < c.n; ++i) {
    if (s.data.X(i, 1) == 0.0 && s.data.X(i, 2) == 0.0) g0.push_back(eps(i));
    if (s.data.X(i, 2) == 1.0) g2.push_back(eps(i));
  }
  CHECK(sample_var(g2) / sample_var(g0) > 8.0);
}

TEST_CASE("calibrated exposures reproduce the blood-metal quantiles within 5% at N = 2000") {
  const CalibrationPreset preset = calibration_preset("blood-metals");
  CHECK(preset.names == std::vector<std::string>{"Pb", "Hg", "Mn", "Cd"});
  // Published 10/25/50/75/90% quantiles.
  const double pb[] = {0.89, 1.20, 1.79, 3.09, 7.20};
  for (int k = 0; k < 5; ++k) CHECK(preset.calibration.quantiles(0, k) == pb[k]);

  SimConfig c;
  c.n = 2000;
  c.exposure_names = preset.names;
  c.exposure_corr = preset.corr;
  c.calibration = preset.calibration;
  c.beta.resize(0);
  c.gamma = Eigen::VectorXd::Zero(1);
  c.r = Eigen::VectorXd::Constant(4, 0.2);
  c.seed = 21;
  const Simulation s = generate(c);
  const Eigen::MatrixXd raw = inverse_transform(s.data);
  for (int m = 0; m < 4; ++m) {
    for (int k = 0; k < 5; ++k) {
      const double target = preset.calibration.quantiles(m, k);
      const double got = quantile(raw.col(m), preset.calibration.probs[k]);
      CHECK_MESSAGE(std::abs(got - target) / target < 0.05, preset.names[m], " q", preset.calibration.probs[k]);
    }
  }
  // The copula keeps the published Pb-Hg rank correlation.
  CHECK(std::abs(oracle::normal_cdf(0.0) - 0.5) < 1e-15);
  CHECK(preset.corr(0, 1) == doctest::Approx(spearman_to_pearson(0.50)).epsilon(1e-12));
}

TEST_CASE("toenail preset and unknown preset names") {
  const CalibrationPreset t = calibration_preset("toenail-metals");
  CHECK(t.names == std::vector<std::string>{"As", "Cd", "Mn", "Pb"});
  CHECK(t.calibration.quantiles.rows() == 4);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(t.corr).info() == Eigen::Success);
  CHECK_THROWS_AS(calibration_preset("nope"), InputError);
  CHECK(spearman_to_pearson(0.0) == 0.0);
  CHECK(spearman_to_pearson(1.0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("law of total variance holds empirically at N = 2000") {
  SimConfig c;
  c.n = 2000;
  c.exposure_names = {"z1", "z2", "z3"};
  c.continuous = {{"x1", 0.0, 1.0}, {"x2", 1.0, 2.0}};
  c.beta = Eigen::Vector2d(0.8, -0.4);
  c.variance_recipe = {{"x1", Encoding::Identity}};
  c.gamma = Eigen::Vector2d(0.0, 0.5);
  c.tau = 1.5;
  // Large r keeps the realized surface close to independent draws (K_ii = 1, K_ij small).
  c.r = Eigen::Vector3d(2.0, 2.0, 2.0);
  c.seed = 31;
  const Simulation s = generate(c);
  const Eigen::VectorXd xb = s.data.X * c.beta;
  const double expected = c.tau + s.truth.sigma2.mean() + sample_var(xb);
  CHECK(std::abs(sample_var(s.data.y) - expected) / expected < 0.15);
  CHECK(std::abs(s.data.y.mean() - xb.mean()) < 0.15);
}

TEST_CASE("invalid configurations are rejected") {
  SimConfig c = base_config();
  c.exposure_corr = Eigen::Matrix3d::Identity();
  c.exposure_corr(0, 1) = c.exposure_corr(1, 0) = 0.9;
  c.exposure_corr(0, 2) = c.exposure_corr(2, 0) = -0.9;
  c.exposure_corr(1, 2) = c.exposure_corr(2, 1) = 0.9;
  CHECK_THROWS_WITH_AS(generate(c), doctest::Contains("positive definite"), InputError);

  c = base_config();
  c.tau = 0.0;
  CHECK_THROWS_AS(generate(c), InputError);
  c = base_config();
  c.r(1) = -0.1;
  CHECK_THROWS_AS(generate(c), InputError);
  c = base_config();
  c.beta = Eigen::Vector2d(1.0, 1.0);
  CHECK_THROWS_AS(generate(c), InputError);
  c = base_config();
  c.gamma = Eigen::Vector2d(0.0, 0.0);
  CHECK_THROWS_AS(generate(c), InputError);
  c = base_config();
  c.categorical[0].levels = {"b", "a", "c"};
  CHECK_THROWS_AS(generate(c), InputError);
}

TEST_CASE("recovery report covers, biases and flags tau and r as informational") {
  Truth t;
  t.beta = Eigen::VectorXd::Constant(1, 1.0);
  t.gamma = Eigen::Vector2d(-1.0, 0.8);
  t.tau = 4.0;
  t.r = Eigen::VectorXd::Constant(1, 0.3);
  PosteriorSamples s;
  s.p = 1;
  s.q1 = 2;
  s.m = 1;
  s.names = {"beta[x]", "gamma[(intercept)]", "gamma[w]", "sqrt_tau", "r[z]"};
  s.draws.resize(101, 5);
  for (int i = 0; i < 101; ++i) {
    const double u = i / 100.0;
    s.draws.row(i) << 0.9 + 0.2 * u, -3.0 + u, 0.5 + 0.6 * u, 1.5 + u, 0.2 + 0.2 * u;
  }
  const auto rows = recovery_report(t, s);
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].parameter == "beta[x]");
  CHECK(rows[0].covered);
  CHECK(rows[0].bias == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(rows[1].covered);
  CHECK(rows[1].bias == doctest::Approx(-1.5));
  CHECK(rows[2].covered);
  CHECK_FALSE(rows[2].informational);
  CHECK(rows[3].parameter == "tau");
  CHECK(rows[3].informational);
  CHECK(rows[3].mean == doctest::Approx(s.draws.col(3).array().square().mean()));
  CHECK(rows[4].informational);
  t.gamma = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(recovery_report(t, s), InputError);
}

TEST_CASE("tau is weakly identified next to the noise level") {
  SimConfig c = base_config();
  c.n = 150;
  c.seed = 41;
  const Simulation s = generate(c);
  ParamState st;
  st.beta = c.beta;
  st.gamma = c.gamma;
  st.r = c.r;
  st.sqrt_tau = std::sqrt(c.tau);
  auto range = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) - *std::min_element(v.begin(), v.end());
  };
  // Same multiplicative span (x1/4 .. x4) applied to tau or to every sigma_i^2.
  std::vector<double> by_tau, by_noise;
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    ParamState a = st;
    a.sqrt_tau = std::sqrt(c.tau * f);
    by_tau.push_back(log_marginal_likelihood(a, s.data, s.W));
    ParamState b = st;
    b.gamma(0) += std::log(f);
    by_noise.push_back(log_marginal_likelihood(b, s.data, s.W));
  }
  MESSAGE("log-likelihood range: tau ", range(by_tau), ", noise ", range(by_noise));
  CHECK(range(by_tau) < 0.25 * range(by_noise));
}
