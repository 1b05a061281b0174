#include "hbkmr/inference.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "hbkmr/error.hpp"
#include "hbkmr/kernel.hpp"

namespace hbkmr {
namespace {

// Two decimals unless the quantile needs more ("0.10", "0.25", "0.125").
std::string fmt_quantile(double q) {
  for (int digits = 2; digits < 6; ++digits) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << q;
    if (std::abs(std::stod(os.str()) - q) < 1e-12) return os.str();
  }
  std::ostringstream os;
  os << q;
  return os.str();
}

// Moments for one draw. With diagonal_only, cov holds the variances as an n x 1 column.
DrawConditional draw_moments(const ParamState& s, const Dataset& d, const VarianceDesign& W,
                             const Eigen::Ref<const Eigen::MatrixXd>& Znew, const Eigen::MatrixXd* Xnew,
                             const Eigen::VectorXd* s_new, bool diagonal_only) {
  if (Znew.cols() != d.m())
    throw InputError("new exposure matrix has " + std::to_string(Znew.cols()) + " columns, expected " +
                     std::to_string(d.m()));
  const KernelMatrix K(d.Z, s.r);
  const CovFactor V = factor_cov(K, s.tau(), s_diag(W, s.gamma));
  Eigen::VectorXd resid = d.y;
  if (d.p() > 0) resid -= d.X * s.beta;

  const Eigen::MatrixXd B = V.half_solve(kernel_matrix(d.Z, Znew, s.r));  // L^{-1} K(Z, Znew)
  const double tau = s.tau();

  DrawConditional out;
  out.mean = tau * (B.transpose() * V.half_solve(resid));
  if (Xnew && Xnew->cols() > 0) out.mean += *Xnew * s.beta;

  if (diagonal_only) {
    // K(z, z) = 1 on the diagonal.
    out.cov = (Eigen::VectorXd::Constant(Znew.rows(), tau) - tau * tau * B.colwise().squaredNorm().transpose());
    if (s_new) out.cov += *s_new;
  } else {
    out.cov = tau * kernel_matrix(Znew, Znew, s.r);
    out.cov.noalias() -= tau * tau * (B.transpose() * B);
    if (s_new) out.cov.diagonal() += *s_new;
  }
  return out;
}

void check_new_rows(const Dataset& d, const VarianceDesign& W, const Eigen::Ref<const Eigen::MatrixXd>& Xnew,
                    const Eigen::Ref<const Eigen::MatrixXd>& Znew, const Eigen::Ref<const Eigen::MatrixXd>& Wnew) {
  if (Xnew.rows() != Znew.rows() || Wnew.rows() != Znew.rows())
    throw InputError("new X, Z and W must have the same number of rows");
  if (Xnew.cols() != d.p()) throw InputError("new covariate matrix has the wrong number of columns");
  if (Znew.cols() != d.m()) throw InputError("new exposure matrix has the wrong number of columns");
  if (Wnew.cols() != W.W.cols())
    throw InputError("new variance design has " + std::to_string(Wnew.cols()) + " columns; the fitted recipe has " +
                     std::to_string(W.W.cols()));
}

void check_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) throw InputError("quantiles must lie strictly between 0 and 1");
}

}  // namespace

DrawConditional h_conditional_draw(const ParamState& s, const Dataset& d, const VarianceDesign& W,
                                   const Eigen::Ref<const Eigen::MatrixXd>& Znew) {
  return draw_moments(s, d, W, Znew, nullptr, nullptr, false);
}

DrawConditional predict_draw(const ParamState& s, const Dataset& d, const VarianceDesign& W,
                             const Eigen::Ref<const Eigen::MatrixXd>& Xnew,
                             const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                             const Eigen::Ref<const Eigen::MatrixXd>& Wnew) {
  check_new_rows(d, W, Xnew, Znew, Wnew);
  const Eigen::MatrixXd X = Xnew;
  const Eigen::VectorXd s_new = s_diag(Wnew, s.gamma);
  return draw_moments(s, d, W, Znew, &X, &s_new, false);
}

ConditionalAccumulator::ConditionalAccumulator(Eigen::Index dim, bool diagonal_only)
    : diagonal_only_(diagonal_only),
      mean_(Eigen::VectorXd::Zero(dim)),
      m2_(Eigen::MatrixXd::Zero(dim, diagonal_only ? 1 : dim)),
      sigma_sum_(Eigen::MatrixXd::Zero(dim, diagonal_only ? 1 : dim)) {}

void ConditionalAccumulator::add(const DrawConditional& draw) {
  ++n_;
  const Eigen::VectorXd delta = draw.mean - mean_;
  mean_ += delta / static_cast<double>(n_);
  const Eigen::VectorXd delta2 = draw.mean - mean_;
  if (diagonal_only_) {
    m2_.col(0) += delta.cwiseProduct(delta2);
    sigma_sum_.col(0) += draw.cov.col(0);
  } else {
    m2_.noalias() += delta * delta2.transpose();
    sigma_sum_ += draw.cov;
  }
}

Conditional ConditionalAccumulator::result() const {
  Conditional c;
  c.n_draws = n_;
  c.mean = mean_;
  c.diagonal_only = diagonal_only_;
  if (n_ == 0) throw InputError("no draws to aggregate");
  const double var_denominator = n_ > 1 ? static_cast<double>(n_ - 1) : 1.0;
  const Eigen::MatrixXd var_mu = n_ > 1 ? Eigen::MatrixXd(m2_ / var_denominator) : Eigen::MatrixXd::Zero(m2_.rows(), m2_.cols());
  const Eigen::MatrixXd e_sigma = sigma_sum_ / static_cast<double>(n_);
  if (diagonal_only_) {
    c.cov = Eigen::MatrixXd::Zero(mean_.size(), mean_.size());
    c.cov.diagonal() = e_sigma.col(0) + var_mu.col(0);
  } else {
    c.cov = e_sigma + var_mu;
    c.cov = 0.5 * (c.cov + c.cov.transpose()).eval();
  }
  return c;
}

std::vector<int> strided_rows(const PosteriorSamples& samples, const InferenceOptions& opts) {
  if (opts.stride < 1) throw InputError("draw stride must be at least 1");
  std::vector<int> rows;
  for (int i = 0; i < samples.n_draws(); i += opts.stride) rows.push_back(i);
  if (rows.empty()) throw InputError("no posterior draws available");
  return rows;
}

Conditional h_conditional(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                          const Eigen::Ref<const Eigen::MatrixXd>& Znew, const InferenceOptions& opts) {
  if (Znew.cols() != d.m()) throw InputError("new exposure matrix has the wrong number of columns");
  ConditionalAccumulator acc(Znew.rows());
  for (int i : strided_rows(samples, opts)) acc.add(draw_moments(samples.state(i), d, W, Znew, nullptr, nullptr, false));
  return acc.result();
}

Conditional predictive(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                       const Eigen::Ref<const Eigen::MatrixXd>& Xnew, const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                       const Eigen::Ref<const Eigen::MatrixXd>& Wnew, const InferenceOptions& opts,
                       bool diagonal_only) {
  check_new_rows(d, W, Xnew, Znew, Wnew);
  const Eigen::MatrixXd X = Xnew;
  ConditionalAccumulator acc(Znew.rows(), diagonal_only);
  for (int i : strided_rows(samples, opts)) {
    const ParamState s = samples.state(i);
    const Eigen::VectorXd s_new = s_diag(Wnew, s.gamma);
    acc.add(draw_moments(s, d, W, Znew, &X, &s_new, diagonal_only));
  }
  return acc.result();
}

EffectEstimate make_estimate(std::string label, double estimate, double variance) {
  EffectEstimate e;
  e.label = std::move(label);
  e.estimate = estimate;
  e.sd = std::sqrt(std::max(variance, 0.0));
  e.lower95 = estimate - kZ95 * e.sd;
  e.upper95 = estimate + kZ95 * e.sd;
  return e;
}

EffectEstimate contrast(const Conditional& c, const Eigen::Ref<const Eigen::VectorXd>& weights, std::string label) {
  if (weights.size() != c.mean.size()) throw InputError("contrast length does not match the conditional");
  return make_estimate(std::move(label), weights.dot(c.mean), weights.dot(c.cov * weights));
}

Eigen::RowVectorXd quantile_profile_row(const Dataset& d, double q) {
  Eigen::RowVectorXd row(d.m());
  for (int m = 0; m < d.m(); ++m) row(m) = quantile(d.Z.col(m), q);
  return row;
}

void CrossSectionRequest::validate(const Dataset& d) const {
  switch (kind) {
    case CrossSectionKind::UnivariateCurve:
      if (exposure < 0 || exposure >= d.m()) throw InputError("exposure index out of range");
      if (grid_size < 2) throw InputError("grid size must be at least 2");
      break;
    case CrossSectionKind::JointEffect:
      check_quantile(base_quantile);
      for (double q : quantiles) check_quantile(q);
      break;
    case CrossSectionKind::SingleVariable:
      for (double q : quantiles) check_quantile(q);
      break;
  }
}

std::vector<CurvePoint> univariate_curve(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                         int m, int grid_size, const InferenceOptions& opts) {
  CrossSectionRequest req;
  req.kind = CrossSectionKind::UnivariateCurve;
  req.exposure = m;
  req.grid_size = grid_size;
  req.validate(d);

  const double lo = quantile(d.Z.col(m), 0.01);
  const double hi = quantile(d.Z.col(m), 0.99);
  const Eigen::RowVectorXd medians = quantile_profile_row(d, 0.5);
  Eigen::MatrixXd Znew = medians.replicate(grid_size, 1);
  for (int g = 0; g < grid_size; ++g) Znew(g, m) = lo + (hi - lo) * g / (grid_size - 1);

  const Conditional c = h_conditional(samples, d, W, Znew, opts);
  std::vector<CurvePoint> out;
  for (int g = 0; g < grid_size; ++g) {
    CurvePoint pt;
    pt.z = Znew(g, m);
    pt.original = d.standardized() ? d.transform_log[m].inverse(pt.z) : pt.z;
    pt.h = make_estimate(d.z_names[m], c.mean(g), c.cov(g, g));
    out.push_back(std::move(pt));
  }
  return out;
}

EffectEstimate joint_effect(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W, double p0,
                            double q, const InferenceOptions& opts) {
  check_quantile(p0);
  check_quantile(q);
  const std::string label = "h(z_" + fmt_quantile(q) + ") - h(z_" + fmt_quantile(p0) + ")";
  if (q == p0) return make_estimate(label, 0.0, 0.0);
  // Condition on the two profiles in a fixed order so that swapping p0 and q only flips the sign.
  const double first = std::min(p0, q);
  const double second = std::max(p0, q);
  Eigen::MatrixXd Znew(2, d.m());
  Znew.row(0) = quantile_profile_row(d, first);
  Znew.row(1) = quantile_profile_row(d, second);
  const Conditional c = h_conditional(samples, d, W, Znew, opts);
  Eigen::Vector2d weights(-1.0, 1.0);
  if (q < p0) weights = -weights;
  return contrast(c, weights, label);
}

std::vector<EffectEstimate> joint_effects(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                          double p0, const std::vector<double>& targets,
                                          const InferenceOptions& opts) {
  CrossSectionRequest req;
  req.base_quantile = p0;
  req.quantiles = targets;
  req.validate(d);
  Eigen::MatrixXd Znew(static_cast<Eigen::Index>(targets.size()) + 1, d.m());
  Znew.row(0) = quantile_profile_row(d, p0);
  for (std::size_t k = 0; k < targets.size(); ++k) Znew.row(k + 1) = quantile_profile_row(d, targets[k]);
  const Conditional c = h_conditional(samples, d, W, Znew, opts);
  std::vector<EffectEstimate> out;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(Znew.rows());
    w(0) = -1.0;
    w(k + 1) += 1.0;
    out.push_back(contrast(c, w, "h(z_" + fmt_quantile(targets[k]) + ") - h(z_" + fmt_quantile(p0) + ")"));
  }
  return out;
}

std::vector<SingleVariableEffect> single_variable_effects(const PosteriorSamples& samples, const Dataset& d,
                                                          const VarianceDesign& W,
                                                          const std::vector<double>& fixed_quantiles,
                                                          const InferenceOptions& opts) {
  CrossSectionRequest req;
  req.kind = CrossSectionKind::SingleVariable;
  req.quantiles = fixed_quantiles;
  req.validate(d);

  const Eigen::RowVectorXd q25 = quantile_profile_row(d, 0.25);
  const Eigen::RowVectorXd q75 = quantile_profile_row(d, 0.75);
  const auto pairs = static_cast<Eigen::Index>(d.m() * fixed_quantiles.size());
  Eigen::MatrixXd Znew(2 * pairs, d.m());
  Eigen::Index row = 0;
  for (int m = 0; m < d.m(); ++m) {
    for (double f : fixed_quantiles) {
      const Eigen::RowVectorXd base = quantile_profile_row(d, f);
      Znew.row(row) = base;
      Znew(row, m) = q75(m);
      Znew.row(row + 1) = base;
      Znew(row + 1, m) = q25(m);
      row += 2;
    }
  }
  const Conditional c = h_conditional(samples, d, W, Znew, opts);

  std::vector<SingleVariableEffect> out;
  row = 0;
  for (int m = 0; m < d.m(); ++m) {
    for (double f : fixed_quantiles) {
      Eigen::VectorXd w = Eigen::VectorXd::Zero(Znew.rows());
      w(row) = 1.0;
      w(row + 1) = -1.0;
      SingleVariableEffect e;
      e.exposure = m;
      e.fixed_quantile = f;
      e.effect = contrast(c, w, d.z_names[m] + " (others at q" + fmt_quantile(f) + ")");
      out.push_back(std::move(e));
      row += 2;
    }
  }
  return out;
}

std::vector<EffectEstimate> predict(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Xnew,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Znew,
                                    const Eigen::Ref<const Eigen::MatrixXd>& Wnew, const InferenceOptions& opts) {
  const Conditional c = predictive(samples, d, W, Xnew, Znew, Wnew, opts, true);
  std::vector<EffectEstimate> out;
  for (Eigen::Index i = 0; i < c.mean.size(); ++i)
    out.push_back(make_estimate("row " + std::to_string(i + 1), c.mean(i), c.cov(i, i)));
  return out;
}

}  // namespace hbkmr
