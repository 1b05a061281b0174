#include "hbkmr/kernel.hpp"

#include <cmath>
#include <sstream>

#include "hbkmr/error.hpp"

namespace hbkmr {

double kernel_entry(const Eigen::Ref<const Eigen::VectorXd>& zi, const Eigen::Ref<const Eigen::VectorXd>& zj,
                    const Eigen::Ref<const Eigen::VectorXd>& r) {
  if (zi.size() != zj.size() || zi.size() != r.size())
    throw InputError("kernel_entry: exposure vectors and weights must have equal length");
  return std::exp(-(r.array() * (zi - zj).array().square()).sum());
}

Eigen::MatrixXd kernel_matrix(const Eigen::Ref<const Eigen::MatrixXd>& Za,
                              const Eigen::Ref<const Eigen::MatrixXd>& Zb,
                              const Eigen::Ref<const Eigen::VectorXd>& r) {
  if (Za.cols() != Zb.cols() || Za.cols() != r.size())
    throw InputError("kernel_matrix: exposure dimension mismatch");
  // Scale coordinates by sqrt(r) so the weighted distance is a plain squared distance.
  const Eigen::ArrayXd sr = r.array().sqrt();
  const Eigen::MatrixXd A = Za * sr.matrix().asDiagonal();
  const Eigen::MatrixXd B = Zb * sr.matrix().asDiagonal();
  Eigen::MatrixXd K(Za.rows(), Zb.rows());
  for (Eigen::Index j = 0; j < B.rows(); ++j)
    for (Eigen::Index i = 0; i < A.rows(); ++i) K(i, j) = std::exp(-(A.row(i) - B.row(j)).squaredNorm());
  return K;
}

KernelMatrix::KernelMatrix(const Eigen::Ref<const Eigen::MatrixXd>& Z, const Eigen::Ref<const Eigen::VectorXd>& w)
    : r(w) {
  if (Z.cols() != w.size()) throw InputError("kernel matrix: exposure dimension mismatch");
  PairwiseDistances dist(Z);
  K.resize(Z.rows(), Z.rows());
  dist.fill_lower(w, K);
  K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
}

PairwiseDistances::PairwiseDistances(const Eigen::Ref<const Eigen::MatrixXd>& Z)
    : n_(static_cast<int>(Z.rows())), packed_(Z.rows() * (Z.rows() - 1) / 2, Z.cols()) {
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < Z.rows(); ++j)
    for (Eigen::Index i = j + 1; i < Z.rows(); ++i, ++k) packed_.row(k) = (Z.row(i) - Z.row(j)).array().square();
}

void PairwiseDistances::fill_lower(const Eigen::Ref<const Eigen::VectorXd>& r, Eigen::MatrixXd& K) const {
  if (r.size() != packed_.cols()) throw InputError("kernel weights have the wrong length");
  if (K.rows() != n_ || K.cols() != n_) K.resize(n_, n_);
  const Eigen::VectorXd e = (-(packed_ * r)).array().exp().matrix();
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < n_; ++j) {
    K(j, j) = 1.0;
    const Eigen::Index len = n_ - j - 1;
    K.col(j).segment(j + 1, len) = e.segment(k, len);
    k += len;
  }
}

CovFactor::CovFactor(const Eigen::Ref<const Eigen::MatrixXd>& K, double tau,
                     const Eigen::Ref<const Eigen::VectorXd>& s) {
  if (K.rows() != K.cols() || K.rows() != s.size()) throw InputError("factor_cov: dimension mismatch");
  if (!(s.array() > 0.0).all()) throw InputError("factor_cov: noise variances must be strictly positive");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw InputError("factor_cov: tau must be finite and nonnegative");

  Eigen::MatrixXd V = tau * K;
  V.diagonal() += s;
  llt_.compute(V);
  if (llt_.info() != Eigen::Success) {
    jitter_ = 1e-10 * V.diagonal().sum() / static_cast<double>(V.rows());
    V.diagonal().array() += jitter_;
    llt_.compute(V);
    if (llt_.info() != Eigen::Success) {
      std::ostringstream msg;
      msg << "covariance is not positive definite after adding jitter " << jitter_;
      throw NumericalError(msg.str());
    }
  }
  log_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
  if (!std::isfinite(log_det_)) throw NumericalError("covariance log-determinant is not finite");
}

Eigen::MatrixXd CovFactor::solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const { return llt_.solve(b); }

Eigen::MatrixXd CovFactor::half_solve(const Eigen::Ref<const Eigen::MatrixXd>& b) const {
  return llt_.matrixL().solve(b);
}

Eigen::MatrixXd CovFactor::reconstruct() const { return llt_.reconstructedMatrix(); }

CovFactor factor_cov(const KernelMatrix& K, double tau, const Eigen::Ref<const Eigen::VectorXd>& s_diag) {
  return CovFactor(K.K, tau, s_diag);
}

}  // namespace hbkmr
