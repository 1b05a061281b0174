#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hbkmr/error.hpp"
#include "hbkmr/kernel.hpp"
#include "oracles.hpp"

using namespace hbkmr;

TEST_CASE("kernel entry values") {
  const Eigen::Vector2d a(0.3, -1.0), b(1.3, 2.0);
  CHECK(kernel_entry(a, a, Eigen::Vector2d(0.7, 2.0)) == 1.0);
  CHECK(kernel_entry(a, b, Eigen::Vector2d::Zero()) == 1.0);
  const Eigen::VectorXd zi = Eigen::VectorXd::Constant(1, 0.0), zj = Eigen::VectorXd::Constant(1, 2.0);
  CHECK(kernel_entry(zi, zj, Eigen::VectorXd::Constant(1, 0.5)) == doctest::Approx(0.135335).epsilon(1e-6));
  CHECK(kernel_entry(a, b, Eigen::Vector2d(0.2, 0.1)) == kernel_entry(b, a, Eigen::Vector2d(0.2, 0.1)));
  CHECK_THROWS_AS(kernel_entry(a, Eigen::Vector3d(1, 2, 3), Eigen::Vector2d(1, 1)), InputError);
  CHECK_THROWS_AS(kernel_entry(a, b, Eigen::Vector3d(1, 1, 1)), InputError);
}

TEST_CASE("kernel matrix matches a double-loop computation") {
  Eigen::MatrixXd Z(3, 2);
  Z << 0.1, 0.5, -0.4, 1.2, 2.0, -0.3;
  const Eigen::Vector2d r(1.0, 1.0);
  const Eigen::MatrixXd K = kernel_matrix(Z, Z, r);
  CHECK((K - oracle::kernel_loop(Z, Z, r)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK((K.diagonal().array() == 1.0).all());

  std::mt19937_64 rng(4);
  const Eigen::MatrixXd Za = oracle::random_matrix(7, 3, rng), Zb = oracle::random_matrix(4, 3, rng);
  const Eigen::Vector3d r3(0.2, 0.9, 0.05);
  CHECK((kernel_matrix(Za, Zb, r3) - oracle::kernel_loop(Za, Zb, r3)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(kernel_matrix(Za.row(0), Zb.row(1), r3)(0, 0) ==
        doctest::Approx(kernel_entry(Za.row(0).transpose(), Zb.row(1).transpose(), r3)).epsilon(1e-15));
  CHECK_THROWS_AS(kernel_matrix(Za, Eigen::MatrixXd::Zero(2, 2), r3), InputError);
}

TEST_CASE("kernel matrix entries lie in (0, 1] and it is PSD up to N = 50") {
  std::mt19937_64 rng(8);
  for (int n : {5, 20, 50}) {
    const Eigen::MatrixXd Z = oracle::random_matrix(n, 3, rng);
    const Eigen::MatrixXd K = KernelMatrix(Z, Eigen::Vector3d(0.5, 0.1, 2.0)).K;
    CHECK(K.minCoeff() > 0.0);
    CHECK(K.maxCoeff() <= 1.0);
    CHECK((K - K.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }
}

TEST_CASE("raising r_m lowers off-diagonal entries that differ in coordinate m") {
  std::mt19937_64 rng(9);
  const Eigen::MatrixXd Z = oracle::random_matrix(12, 2, rng);
  const Eigen::MatrixXd K1 = kernel_matrix(Z, Z, Eigen::Vector2d(0.3, 0.4));
  const Eigen::MatrixXd K2 = kernel_matrix(Z, Z, Eigen::Vector2d(0.9, 0.4));
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j)
      if (i != j && Z(i, 0) != Z(j, 0)) CHECK(K2(i, j) < K1(i, j));
}

TEST_CASE("pairwise distances rebuild the lower triangle of K") {
  std::mt19937_64 rng(10);
  const Eigen::MatrixXd Z = oracle::random_matrix(15, 4, rng);
  const Eigen::Vector4d r(0.1, 0.7, 0.02, 1.5);
  PairwiseDistances pd(Z);
  CHECK(pd.n() == 15);
  Eigen::MatrixXd K = Eigen::MatrixXd::Constant(15, 15, -7.0);
  pd.fill_lower(r, K);
  const Eigen::MatrixXd ref = oracle::kernel_loop(Z, Z, r);
  for (int i = 0; i < 15; ++i) {
    for (int j = 0; j <= i; ++j) CHECK(K(i, j) == doctest::Approx(ref(i, j)).epsilon(1e-14));
    for (int j = i + 1; j < 15; ++j) CHECK(K(i, j) == -7.0);
  }
}

TEST_CASE("CovFactor log-det, N = 1 and diagonal cases") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const CovFactor f1(one, 0.7, Eigen::VectorXd::Constant(1, 0.4));
  CHECK(f1.log_det() == doctest::Approx(std::log(1.1)).epsilon(1e-14));

  const int n = 6;
  const CovFactor fd(Eigen::MatrixXd::Identity(n, n), 2.0, Eigen::VectorXd::Ones(n));
  CHECK(fd.log_det() == doctest::Approx(n * std::log(3.0)).epsilon(1e-14));
  CHECK(fd.jitter() == 0.0);
}

TEST_CASE("CovFactor log-det matches the eigenvalue sum on a random N = 12 instance") {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXd Z = oracle::random_matrix(12, 3, rng);
  const KernelMatrix K(Z, Eigen::Vector3d(0.4, 0.2, 0.9));
  Eigen::VectorXd s(12);
  for (int i = 0; i < 12; ++i) s(i) = 0.2 + 0.1 * i;
  const CovFactor f = factor_cov(K, 1.7, s);
  Eigen::MatrixXd V = 1.7 * K.K;
  V.diagonal() += s;
  CHECK(std::abs(f.log_det() - oracle::eigen_logdet(V)) < 1e-8);
  CHECK((f.reconstruct() - V).cwiseAbs().maxCoeff() < 1e-8 * V.cwiseAbs().maxCoeff());

  const Eigen::VectorXd b = oracle::random_matrix(12, 1, rng);
  CHECK((V * f.solve(b) - b).cwiseAbs().maxCoeff() < 1e-8);
  const Eigen::VectorXd hb = f.half_solve(b);
  CHECK(hb.squaredNorm() == doctest::Approx(b.dot(V.inverse() * b)).epsilon(1e-10));
}

TEST_CASE("CovFactor reads only the lower triangle of K") {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXd Z = oracle::random_matrix(8, 2, rng);
  Eigen::MatrixXd K = kernel_matrix(Z, Z, Eigen::Vector2d(0.5, 0.5));
  const CovFactor ref(K, 1.0, Eigen::VectorXd::Ones(8));
  K.triangularView<Eigen::StrictlyUpper>().setConstant(123.0);
  const CovFactor f(K, 1.0, Eigen::VectorXd::Ones(8));
  CHECK(f.log_det() == ref.log_det());
}

TEST_CASE("CovFactor retries with jitter, then fails with the jitter in the message") {
  // Slightly indefinite K with a negligible noise term: plain Cholesky fails, jitter rescues it.
  Eigen::Matrix2d K;
  K << 1.0, 1.0 + 1e-15, 1.0 + 1e-15, 1.0;
  const CovFactor f(K, 1.0, Eigen::Vector2d::Constant(1e-20));
  CHECK(f.jitter() > 0.0);
  CHECK(f.jitter() == doctest::Approx(1e-10).epsilon(1e-6));

  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_WITH_AS(CovFactor(bad, 1.0, Eigen::Vector2d::Constant(1e-3)), doctest::Contains("jitter"),
                       NumericalError);
}

TEST_CASE("CovFactor rejects nonpositive noise and mismatched sizes") {
  const Eigen::MatrixXd K = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(CovFactor(K, 1.0, Eigen::Vector3d(1.0, 0.0, 1.0)), InputError);
  CHECK_THROWS_AS(CovFactor(K, 1.0, Eigen::Vector2d(1.0, 1.0)), InputError);
}
