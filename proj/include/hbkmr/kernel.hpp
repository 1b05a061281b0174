#pragma once

#include <Eigen/Dense>

namespace hbkmr {

// exp(-sum_m r_m (zi_m - zj_m)^2)
double kernel_entry(const Eigen::Ref<const Eigen::VectorXd>& zi, const Eigen::Ref<const Eigen::VectorXd>& zj,
                    const Eigen::Ref<const Eigen::VectorXd>& r);

// Cross kernel K_r(Za, Zb); rows of Za and Zb are exposure profiles.
Eigen::MatrixXd kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& Za,
                              const Eigen::Ref<const Eigen::MatrixXd>& Zb,
                              const Eigen::Ref<const Eigen::VectorXd>& r);

// Symmetric Gram matrix K_r(Z, Z) with its weights.
struct KernelMatrix {
  Eigen::MatrixXd K;
  Eigen::VectorXd r;

  KernelMatrix() = default;
  KernelMatrix(const Eigen::Ref<const Eigen::MatrixXd>& Z, const Eigen::Ref<const Eigen::VectorXd>& r);
};

// Squared per-coordinate differences for all pairs i > j, packed N(N-1)/2 x M.
// Lets the sampler rebuild K_r for a new r with one matrix-vector product and an exp.
class PairwiseDistances {
 public:
  explicit PairwiseDistances(const Eigen::Ref<const Eigen::MatrixXd>& Z);

  // Writes K_r into the lower triangle (and unit diagonal) of K. The strict upper triangle is untouched.
  void fill_lower(const Eigen::Ref<const Eigen::VectorXd>& r, Eigen::MatrixXd& K) const;

  int n() const { return n_; }

 private:
  int n_;
  Eigen::MatrixXd packed_;
};

// Cholesky factor of V = tau K + diag(s). Only the lower triangle of K is read.
class CovFactor {
 public:
  CovFactor() = default;
  CovFactor(const Eigen::Ref<const Eigen::MatrixXd>& K, double tau, const Eigen::Ref<const Eigen::VectorXd>& s);

  double log_det() const { return log_det_; }
  double jitter() const { return jitter_; }
  int n() const { return static_cast<int>(llt_.rows()); }

  // V^{-1} b
  Eigen::MatrixXd solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const;
  // L^{-1} b, so that b' V^{-1} b = |L^{-1} b|^2
  Eigen::MatrixXd half_solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const;
  Eigen::MatrixXd matrix_l() const { return llt_.matrixL(); }
  // L L'
  Eigen::MatrixXd reconstruct() const;

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double log_det_ = 0.0;
  double jitter_ = 0.0;
};

CovFactor factor_cov(const KernelMatrix& K, double tau, const Eigen::Ref<const Eigen::VectorXd>& s_diag);

}  // namespace hbkmr
