#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "hbkmr/error.hpp"
#include "hbkmr/model.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hbkmr;

namespace {

VarianceDesign intercept_only(int n) { return {Eigen::MatrixXd::Ones(n, 1), {}, {"(intercept)"}, true}; }

VarianceDesign with_driver(const Eigen::VectorXd& w) {
  VarianceDesign vd;
  vd.W.resize(w.size(), 2);
  vd.W.col(0).setOnes();
  vd.W.col(1) = w;
  vd.column_names = {"(intercept)", "w"};
  return vd;
}

ParamState random_state(int p, int q1, int m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.1, 1.5);
  std::normal_distribution<double> normal(0.0, 0.5);
  ParamState s;
  s.beta.resize(p);
  for (int j = 0; j < p; ++j) s.beta(j) = normal(rng);
  s.gamma.resize(q1);
  for (int k = 0; k < q1; ++k) s.gamma(k) = normal(rng);
  s.sqrt_tau = u(rng);
  s.r.resize(m);
  for (int k = 0; k < m; ++k) s.r(k) = u(rng);
  return s;
}

Eigen::MatrixXd dense_v(const ParamState& s, const Dataset& d, const VarianceDesign& W) {
  Eigen::MatrixXd V = s.tau() * oracle::kernel_loop(d.Z, d.Z, s.r);
  V.diagonal() += (W.W * s.gamma).array().exp().matrix();
  return V;
}

}  // namespace

TEST_CASE("s_diag values") {
  const VarianceDesign W1 = intercept_only(4);
  CHECK((s_diag(W1, Eigen::VectorXd::Zero(1)).array() == 1.0).all());
  CHECK((s_diag(W1, Eigen::VectorXd::Constant(1, std::log(4.0))).array() - 4.0).abs().maxCoeff() < 1e-14);
  Eigen::MatrixXd w(1, 2);
  w << 1.0, 2.0;
  CHECK(s_diag(w, Eigen::Vector2d(0.0, 0.5))(0) == doctest::Approx(2.718282).epsilon(1e-6));
  CHECK_THROWS_AS(s_diag(W1, Eigen::Vector2d(0, 0)), InputError);
}

TEST_CASE("N = 1 marginal likelihood at y = 0 with variance 2") {
  Dataset d;
  d.y = Eigen::VectorXd::Zero(1);
  d.X.resize(1, 0);
  d.Z = Eigen::MatrixXd::Zero(1, 1);
  ParamState s{Eigen::VectorXd(0), Eigen::VectorXd::Zero(1), 1.0, Eigen::VectorXd::Constant(1, 0.5)};
  CHECK(log_marginal_likelihood(s, d, intercept_only(1)) ==
        doctest::Approx(-0.5 * std::log(4.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(log_marginal_likelihood(s, d, intercept_only(1)) == doctest::Approx(-1.265512).epsilon(1e-6));
}

TEST_CASE("Q = 0 likelihood equals a homoscedastic eigenbasis implementation") {
  std::mt19937_64 rng(21);
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 3 + rep % 20;
    const Dataset d = testutil::random_dataset(n, 2, 2, rng);
    ParamState s = random_state(2, 1, 2, rng);
    const double sigma2 = std::exp(s.gamma(0));
    const double ref =
        oracle::bkmr_loglik_eigen(d.y, d.X * s.beta, s.tau(), oracle::kernel_loop(d.Z, d.Z, s.r), sigma2);
    CHECK(std::abs(log_marginal_likelihood(s, d, intercept_only(n)) - ref) < 1e-10);
  }
}

TEST_CASE("N = 6 heteroscedastic likelihood equals the dense-inverse MVN density") {
  std::mt19937_64 rng(22);
  for (int rep = 0; rep < 10; ++rep) {
    const Dataset d = testutil::random_dataset(6, 3, 1, rng);
    const VarianceDesign W = with_driver(d.Z.col(0));
    const ParamState s = random_state(1, 2, 3, rng);
    const double ref = oracle::dense_mvn_logpdf(d.y, d.X * s.beta, dense_v(s, d, W));
    CHECK(std::abs(log_marginal_likelihood(s, d, W) - ref) < 1e-10);
  }
}

TEST_CASE("likelihood rejects inconsistent dimensions") {
  std::mt19937_64 rng(23);
  const Dataset d = testutil::random_dataset(5, 2, 1, rng);
  ParamState s = random_state(1, 1, 2, rng);
  CHECK_NOTHROW(log_marginal_likelihood(s, d, intercept_only(5)));
  s.beta = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(log_marginal_likelihood(s, d, intercept_only(5)), InputError);
  s = random_state(1, 2, 2, rng);
  CHECK_THROWS_AS(log_marginal_likelihood(s, d, intercept_only(5)), InputError);
  s = random_state(1, 1, 3, rng);
  CHECK_THROWS_AS(log_marginal_likelihood(s, d, intercept_only(5)), InputError);
}

TEST_CASE("Woodbury step: S - S(tauK+S)^-1 S equals (S^-1 + (tauK)^-1)^-1") {
  std::mt19937_64 rng(24);
  std::uniform_real_distribution<double> u(0.3, 2.0);
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + rep % 12;
    // Points spread out enough for tau K to be comfortably invertible.
    const Eigen::MatrixXd Z = oracle::random_matrix(n, 2, rng, 2.0);
    const Eigen::MatrixXd tauK = u(rng) * oracle::kernel_loop(Z, Z, Eigen::Vector2d(1.0, 1.0));
    Eigen::VectorXd s(n);
    for (int i = 0; i < n; ++i) s(i) = u(rng);
    CHECK(oracle::woodbury_gap(s, tauK) < 1e-8);
  }
}

TEST_CASE("Monte-Carlo integration over h reproduces the marginal likelihood") {
  std::mt19937_64 rng(25);
  for (int rep = 0; rep < 3; ++rep) {
    const int n = 3 + 2 * rep;
    const Dataset d = testutil::random_dataset(n, 2, 1, rng);
    const VarianceDesign W = with_driver(d.Z.col(1));
    const ParamState s = random_state(1, 2, 2, rng);
    const double exact = log_marginal_likelihood(s, d, W);
    const Eigen::MatrixXd tauK = s.tau() * oracle::kernel_loop(d.Z, d.Z, s.r);
    const auto mc = oracle::mc_marginal_ratio(d.y, d.X * s.beta, tauK, s_diag(W, s.gamma), exact, 1000000,
                                              100 + rep);
    CHECK(std::abs(mc.ratio - 1.0) < 3.0 * mc.se);
  }
}

TEST_CASE("log prior terms") {
  PriorSpec p;
  ParamState s{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(1), 1.0, Eigen::VectorXd::Ones(1)};
  const double normal_at_mode = -0.5 * std::log(2000.0 * std::numbers::pi);
  CHECK(log_prior(s, p) ==
        doctest::Approx(3.0 * normal_at_mode - std::log(100.0) + std::log(0.01)).epsilon(1e-12));
  CHECK(p.r_prior.log_density(1.0) == doctest::Approx(-4.605170).epsilon(1e-6));

  s.sqrt_tau = 150.0;
  CHECK(log_prior(s, p) == -std::numeric_limits<double>::infinity());
  s.sqrt_tau = 1.0;
  s.r(0) = 0.009;  // below 1/u
  CHECK(log_prior(s, p) == -std::numeric_limits<double>::infinity());

  PriorSpec pu;
  pu.r_prior = {RPrior::Kind::Uniform, 5.0};
  s.r(0) = 0.009;
  CHECK(log_prior(s, pu) == doctest::Approx(3.0 * normal_at_mode - std::log(100.0) - std::log(5.0)).epsilon(1e-12));
  s.r(0) = 6.0;
  CHECK(log_prior(s, pu) == -std::numeric_limits<double>::infinity());
  CHECK(pu.r_prior.describe() == "uniform(0,5)");
  CHECK(p.r_prior.describe() == "inverse-uniform(0,100)");
}

TEST_CASE("inverse-uniform density integrates to one over its support") {
  const RPrior p{RPrior::Kind::InverseUniform, 100.0};
  // Substitute r = 1/t, t in (0, u): integral of density(r) dr = integral of density(1/t) / t^2 dt.
  const double total = oracle::simpson([&](double t) { return std::exp(p.log_density(1.0 / t)) / (t * t); }, 1e-9,
                                       100.0 - 1e-9, 20000);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("prior settings validation") {
  PriorSpec p;
  CHECK_NOTHROW(p.validate());
  p.sqrt_tau_upper = 0.0;
  CHECK_THROWS_AS(p.validate(), InputError);
}

TEST_CASE("log posterior is the sum of its parts and -inf out of support") {
  std::mt19937_64 rng(26);
  const Dataset d = testutil::random_dataset(8, 2, 1, rng);
  const VarianceDesign W = with_driver(d.Z.col(0));
  const PriorSpec p;
  for (int rep = 0; rep < 20; ++rep) {
    const ParamState s = random_state(1, 2, 2, rng);
    const double lp = log_posterior(s, d, W, p);
    CHECK(std::isfinite(lp));
    CHECK(lp == doctest::Approx(log_marginal_likelihood(s, d, W) + log_prior(s, p)).epsilon(1e-14));
  }
  ParamState out = random_state(1, 2, 2, rng);
  out.sqrt_tau = -1.0;
  CHECK(log_posterior(out, d, W, p) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("log posterior is invariant to permuting exposures together with r") {
  std::mt19937_64 rng(27);
  const Dataset d = testutil::random_dataset(10, 3, 1, rng);
  const VarianceDesign W = with_driver(d.X.col(0));
  const ParamState s = random_state(1, 2, 3, rng);
  Dataset dp = d;
  ParamState sp = s;
  const int perm[] = {2, 0, 1};
  for (int k = 0; k < 3; ++k) {
    dp.Z.col(k) = d.Z.col(perm[k]);
    sp.r(k) = s.r(perm[k]);
  }
  const PriorSpec p;
  CHECK(log_posterior(sp, dp, W, p) == doctest::Approx(log_posterior(s, d, W, p)).epsilon(1e-12));
}
