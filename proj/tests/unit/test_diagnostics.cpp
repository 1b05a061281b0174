#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "hbkmr/diagnostics.hpp"
#include "hbkmr/error.hpp"
#include "hbkmr/simulate.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hbkmr;

namespace {

VarianceDesign intercept_only(int n) { return {Eigen::MatrixXd::Ones(n, 1), {}, {"(intercept)"}, true}; }

ParamState random_state(int p, int q1, int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.2);
  std::normal_distribution<double> normal(0.0, 0.5);
  ParamState s;
  s.beta.resize(p);
  for (auto& v : s.beta) v = normal(rng);
  s.gamma.resize(q1);
  for (auto& v : s.gamma) v = normal(rng);
  s.sqrt_tau = u(rng);
  s.r.resize(m);
  for (auto& v : s.r) v = u(rng);
  return s;
}

PosteriorSamples samples_from(const std::vector<ParamState>& states, const Dataset& d, const VarianceDesign& W) {
  PosteriorSamples s;
  s.p = d.p();
  s.q1 = static_cast<int>(W.W.cols());
  s.m = d.m();
  s.names = parameter_names(d, W);
  s.draws.resize(static_cast<Eigen::Index>(states.size()), s.p + s.q1 + 1 + s.m);
  for (std::size_t i = 0; i < states.size(); ++i)
    s.draws.row(static_cast<Eigen::Index>(i)) << states[i].beta.transpose(), states[i].gamma.transpose(),
        states[i].sqrt_tau, states[i].r.transpose();
  return s;
}

// Pearson correlation of hand-computed average ranks.
double spearman_oracle(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  auto ranks = [](const Eigen::VectorXd& v) {
    Eigen::VectorXd r(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      double below = 0.0, equal = 0.0;
      for (Eigen::Index j = 0; j < v.size(); ++j) {
        if (v(j) < v(i)) below += 1.0;
        if (v(j) == v(i)) equal += 1.0;
      }
      r(i) = below + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const Eigen::ArrayXd ra = ranks(a).array() - ranks(a).mean();
  const Eigen::ArrayXd rb = ranks(b).array() - ranks(b).mean();
  return (ra * rb).sum() / std::sqrt(ra.square().sum() * rb.square().sum());
}

// Dense two-pass WAIC from a draws x N matrix of log densities.
WaicResult waic_two_pass(const Eigen::MatrixXd& ld) {
  WaicResult w;
  const double s = static_cast<double>(ld.rows());
  w.pointwise_lppd.resize(ld.cols());
  w.pointwise_p_waic.resize(ld.cols());
  for (Eigen::Index i = 0; i < ld.cols(); ++i) {
    const double mx = ld.col(i).maxCoeff();
    w.pointwise_lppd(i) = mx + std::log((ld.col(i).array() - mx).exp().sum() / s);
    const double mean = ld.col(i).mean();
    w.pointwise_p_waic(i) = s > 1 ? (ld.col(i).array() - mean).square().sum() / (s - 1.0) : 0.0;
  }
  w.lppd = w.pointwise_lppd.sum();
  w.p_waic = w.pointwise_p_waic.sum();
  w.waic = -2.0 * (w.lppd - w.p_waic);
  return w;
}

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + (x - mean) * (x - mean) / var);
}

// N = 200 data with a variance driver x1 (sigma_i^2 = exp(-1 + 0.8 x1_i)).
Simulation fan_data(std::uint64_t seed, double slope) {
  SimConfig c;
  c.n = 200;
  c.exposure_names = {"z1", "z2", "z3"};
  c.continuous = {{"x1", 0.0, 1.0}, {"x2", 0.0, 1.0}};
  c.beta = Eigen::Vector2d(0.5, -0.3);
  c.variance_recipe = {{"x1", Encoding::Identity}};
  c.gamma = Eigen::Vector2d(-1.0, slope);
  c.tau = 1.0;
  c.r = Eigen::Vector3d(0.3, 0.1, 0.05);
  c.seed = seed;
  return generate(c);
}

}  // namespace

TEST_CASE("spearman") {
  Eigen::VectorXd a(5), b(5);
  a << 1, 2, 3, 4, 5;
  b << 10, 20, 30, 40, 1000;
  CHECK(spearman(a, b) == doctest::Approx(1.0));
  CHECK(spearman(a, -b) == doctest::Approx(-1.0));
  b << 3, 1, 3, 5, 2;  // ties get average ranks
  CHECK(spearman(a, b) == doctest::Approx(spearman_oracle(a, b)).epsilon(1e-12));
  CHECK(std::isnan(spearman(a, Eigen::VectorXd::Ones(5))));
  CHECK_THROWS_AS(spearman(a, Eigen::VectorXd::Ones(4)), InputError);

  std::mt19937_64 rng(51);
  const Eigen::VectorXd x = oracle::random_matrix(60, 1, rng), y = oracle::random_matrix(60, 1, rng);
  CHECK(spearman(x, y) == doctest::Approx(spearman_oracle(x, y)).epsilon(1e-12));
}

TEST_CASE("association table: continuous flags by |rho|, categorical by variance ratio") {
  std::mt19937_64 rng(52);
  Dataset d = testutil::random_dataset(90, 2, 1, rng);
  // Categorical "site" with three levels: a (reference), b, c.
  d.X.conservativeResize(90, 3);
  d.x_names = {"x1", "site=b", "site=c"};
  d.categoricals = {{"site", {"a", "b", "c"}, 1}};
  Eigen::VectorXd e(90);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 90; ++i) {
    const int level = i % 3;
    d.X(i, 1) = level == 1;
    d.X(i, 2) = level == 2;
    e(i) = normal(rng) * (level == 2 ? 3.0 : 1.0) * std::exp(0.8 * d.Z(i, 0));
  }
  CHECK(default_predictors(d) == std::vector<std::string>{"z1", "z2", "x1", "site"});
  const auto table = associate(e, d, default_predictors(d));
  REQUIRE(table.size() == 4);
  CHECK(table[0].flagged);
  CHECK(table[0].spearman == doctest::Approx(spearman_oracle(e.cwiseAbs(), d.Z.col(0))).epsilon(1e-12));
  CHECK(std::isnan(table[0].variance_ratio));

  const PredictorAssociation& site = table[3];
  CHECK(site.categorical);
  CHECK(std::isnan(site.spearman));
  std::vector<double> var(3);
  for (int level = 0; level < 3; ++level) {
    std::vector<double> g;
    for (int i = level; i < 90; i += 3) g.push_back(e(i));
    const double mean = std::accumulate(g.begin(), g.end(), 0.0) / g.size();
    double ss = 0.0;
    for (double v : g) ss += (v - mean) * (v - mean);
    var[level] = ss / (g.size() - 1.0);
  }
  CHECK(site.variance_ratio ==
        doctest::Approx(*std::max_element(var.begin(), var.end()) / *std::min_element(var.begin(), var.end())));
  CHECK(site.flagged == (site.variance_ratio > 2.0));
  CHECK_THROWS_WITH_AS(associate(e, d, {"nope"}), doctest::Contains("unknown predictor"), InputError);
  CHECK_THROWS_AS(associate(e.head(10), d, {"z1"}), InputError);
}

TEST_CASE("linear approximation: regressor count, exact fit and collinear drops") {
  std::mt19937_64 rng(53);
  Dataset d = testutil::random_dataset(40, 2, 3, rng);
  d.y = 1.0 + 2.0 * d.Z.col(0).array() - d.Z.col(1).array() + 0.5 * d.Z.col(0).array() * d.Z.col(1).array() +
        0.3 * d.X.col(2).array();
  const ResidualReport rep = linear_approx_residuals(d);
  CHECK(rep.n_regressors == 2 + 1 + 3);
  CHECK(rep.method == ResidualMethod::LinearApproximation);
  CHECK(rep.residuals.cwiseAbs().maxCoeff() < 1e-9);
  CHECK((rep.residuals + rep.fitted - d.y).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rep.dropped_columns.empty());

  Dataset four = testutil::random_dataset(40, 4, 0, rng);
  CHECK(linear_approx_residuals(four).n_regressors == 4 + 6);

  d.X.col(1) = 2.0 * d.X.col(0);
  const ResidualReport dropped = linear_approx_residuals(d);
  CHECK(dropped.dropped_columns.size() == 1);
  CHECK(dropped.residuals.cwiseAbs().maxCoeff() < 1e-9);

  CHECK_THROWS_AS(linear_approx_residuals(testutil::random_dataset(7, 2, 3, rng)), InputError);
}

TEST_CASE("bayesian residuals use the conditional mean of h at posterior means") {
  std::mt19937_64 rng(54);
  const Dataset d = testutil::random_dataset(12, 2, 1, rng);
  VarianceDesign W;
  W.W.resize(12, 2);
  W.W.col(0).setOnes();
  W.W.col(1) = d.X.col(0);
  W.column_names = {"(intercept)", "x1"};
  std::vector<ParamState> states;
  for (int k = 0; k < 6; ++k) states.push_back(random_state(1, 2, 2, rng));
  const PosteriorSamples samples = samples_from(states, d, W);

  const ResidualReport rep = bayesian_residuals(samples, d, W);
  CHECK((rep.residuals + rep.fitted - d.y).cwiseAbs().maxCoeff() < 1e-8);

  // E(beta), E(gamma), E(r) and E(tau) = mean of sqrt_tau^2.
  ParamState m = samples.posterior_mean_state();
  double tau = 0.0;
  for (const auto& s : states) tau += s.tau() / states.size();
  const Eigen::MatrixXd tauK = tau * oracle::kernel_loop(d.Z, d.Z, m.r);
  Eigen::MatrixXd V = tauK;
  V.diagonal() += (W.W * m.gamma).array().exp().matrix();
  const Eigen::VectorXd h = tauK * V.inverse() * (d.y - d.X * m.beta);
  CHECK((rep.fitted - (h + d.X * m.beta)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(rep.associations.size() == 3);
}

TEST_CASE("near-noiseless smooth data leaves small Bayesian residuals") {
  std::mt19937_64 rng(55);
  Dataset d = testutil::random_dataset(120, 2, 0, rng);
  d.y = 1.5 * d.Z.col(0) - d.Z.col(1);
  std::normal_distribution<double> tiny(0.0, 1e-3);
  for (auto& v : d.y) v += tiny(rng);
  McmcConfig c;
  c.n_burn = 1000;
  c.n_keep = 500;
  c.seed = 3;
  const PosteriorSamples s = fit(d, intercept_only(120), PriorSpec{}, c);
  const ResidualReport rep = bayesian_residuals(s, d, intercept_only(120));
  const double sd = std::sqrt((d.y.array() - d.y.mean()).square().sum() / 119.0);
  CHECK(rep.residuals.cwiseAbs().maxCoeff() < 0.1 * sd);
}

TEST_CASE("fan-shaped variance is detected by both residual methods") {
  const Simulation sim = fan_data(7, 0.8);
  McmcConfig c;
  c.n_burn = 600;
  c.n_keep = 400;
  c.seed = 5;
  const VarianceDesign W0 = intercept_only(sim.data.n());
  const PosteriorSamples s = fit(sim.data, W0, PriorSpec{}, c);
  const ResidualReport bayes = bayesian_residuals(s, sim.data, W0);
  const ResidualReport linear = linear_approx_residuals(sim.data);
  CHECK(bayes.flags("x1"));
  CHECK(linear.flags("x1"));
  const auto rho = [](const ResidualReport& r) {
    for (const auto& a : r.associations)
      if (a.name == "x1") return a.spearman;
    return 0.0;
  };
  CHECK(rho(bayes) > 0.2);
  CHECK(rho(linear) > 0.2);
  CHECK_FALSE(bayes.flags("not-a-predictor"));
}

TEST_CASE("WAIC: single draw, duplicated draws and the two-pass reference") {
  std::mt19937_64 rng(56);
  const Dataset d = testutil::random_dataset(15, 2, 1, rng);
  const VarianceDesign W = intercept_only(15);
  const ParamState s = random_state(1, 1, 2, rng);

  const WaicResult one = waic(samples_from({s}, d, W), d, W);
  double ll = 0.0;
  for (int i = 0; i < 15; ++i) ll += normal_logpdf(d.y(i), d.X.row(i).dot(s.beta), s.tau() + std::exp(s.gamma(0)));
  CHECK(one.p_waic == 0.0);
  CHECK(one.waic == doctest::Approx(-2.0 * ll).epsilon(1e-12));
  const WaicResult dup = waic(samples_from({s, s, s, s}, d, W), d, W);
  CHECK(dup.waic == doctest::Approx(one.waic).epsilon(1e-12));
  CHECK(dup.p_waic == doctest::Approx(0.0));

  // Q = 0 against a dense homoscedastic computation.
  std::vector<ParamState> states;
  for (int k = 0; k < 150; ++k) states.push_back(random_state(1, 1, 2, rng));
  Eigen::MatrixXd ld(150, 15);
  for (int k = 0; k < 150; ++k) {
    const double var = states[k].tau() + std::exp(states[k].gamma(0));
    for (int i = 0; i < 15; ++i) ld(k, i) = normal_logpdf(d.y(i), d.X.row(i).dot(states[k].beta), var);
  }
  const WaicResult ref = waic_two_pass(ld);
  const WaicResult got = waic(samples_from(states, d, W), d, W);
  CHECK(std::abs(got.waic - ref.waic) < 1e-8);
  CHECK(std::abs(got.p_waic - ref.p_waic) < 1e-8);
  CHECK(got.p_waic >= 0.0);
  CHECK(got.waic == doctest::Approx(-2.0 * (got.lppd - got.p_waic)).epsilon(1e-14));
  CHECK(got.n() == 15);

  std::vector<ParamState> shuffled = states;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(std::abs(waic(samples_from(shuffled, d, W), d, W).waic - got.waic) < 1e-9);

  WaicOptions strided;
  strided.stride = 3;
  std::vector<ParamState> every3;
  for (int k = 0; k < 150; k += 3) every3.push_back(states[k]);
  CHECK(waic(samples_from(states, d, W), d, W, strided).waic ==
        doctest::Approx(waic(samples_from(every3, d, W), d, W).waic).epsilon(1e-12));
}

TEST_CASE("WAIC accumulator survives extreme log densities") {
  WaicAccumulator acc(2);
  acc.add(Eigen::Vector2d(-1000.0, 5.0));
  acc.add(Eigen::Vector2d(-1001.0, 5.0));
  const WaicResult w = acc.result();
  CHECK(w.pointwise_lppd(0) == doctest::Approx(-1000.0 + std::log((1.0 + std::exp(-1.0)) / 2.0)));
  CHECK(w.pointwise_lppd(1) == doctest::Approx(5.0));
  CHECK(w.pointwise_p_waic(0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(acc.add(Eigen::Vector3d::Zero()), InputError);
  CHECK_THROWS_AS(WaicAccumulator(2).result(), InputError);
}

TEST_CASE("conditional-h WAIC is finite, seeded and differs from the marginal form") {
  std::mt19937_64 rng(57);
  const Dataset d = testutil::random_dataset(20, 2, 0, rng);
  const VarianceDesign W = intercept_only(20);
  std::vector<ParamState> states;
  for (int k = 0; k < 20; ++k) states.push_back(random_state(0, 1, 2, rng));
  const PosteriorSamples s = samples_from(states, d, W);
  WaicOptions o;
  o.pointwise = WaicOptions::Pointwise::ConditionalH;
  o.seed = 4;
  const WaicResult a = waic(s, d, W, o), b = waic(s, d, W, o);
  CHECK(std::isfinite(a.waic));
  CHECK(a.waic == b.waic);
  CHECK(a.waic != waic(s, d, W).waic);
}

TEST_CASE("compare ranks ascending with stable ties") {
  WaicResult a, b, c;
  a.waic = 100.0;
  b.waic = 90.0;
  c.waic = 100.0;
  for (WaicResult* w : {&a, &b, &c}) w->pointwise_lppd = Eigen::VectorXd::Zero(5);
  const auto r = compare({a, b, c}, {"A", "B", "C"});
  REQUIRE(r.size() == 3);
  CHECK(r[0].label == "B");
  CHECK(r[1].label == "A");
  CHECK(r[2].label == "C");
  CHECK(r[0].delta == 0.0);
  CHECK(r[1].delta == 10.0);
  for (const auto& row : r) CHECK(row.delta >= 0.0);

  const auto tie = compare({a, a}, {"first", "second"});
  CHECK(tie[0].label == "first");
  CHECK(tie[1].delta == 0.0);

  WaicResult other = a;
  other.pointwise_lppd = Eigen::VectorXd::Zero(6);
  CHECK_THROWS_AS(compare({a, other}, {"A", "O"}), InputError);
  CHECK_THROWS_AS(compare({a}, {"A"}), InputError);
  CHECK_THROWS_AS(compare({a, b}, {"A"}), InputError);
}
