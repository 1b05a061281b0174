#include "hbkmr/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

#include "hbkmr/error.hpp"
#include "hbkmr/kernel.hpp"
#include "hbkmr/model.hpp"

namespace hbkmr {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::VectorXd average_ranks(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const auto n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v(a) < v(b); });
  Eigen::VectorXd ranks(n);
  for (Eigen::Index i = 0; i < n;) {
    Eigen::Index j = i;
    while (j + 1 < n && v(order[j + 1]) == v(order[i])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks(order[k]) = avg;
    i = j + 1;
  }
  return ranks;
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return ss / static_cast<double>(v.size() - 1);
}

std::vector<std::string> resolve_predictors(const Dataset& d, const std::vector<std::string>& predictors) {
  return predictors.empty() ? default_predictors(d) : predictors;
}

}  // namespace

std::string to_string(ResidualMethod m) {
  return m == ResidualMethod::PosteriorMeanH ? "posterior-mean-h" : "linear-approximation";
}

bool ResidualReport::flags(const std::string& predictor) const {
  for (const auto& a : associations)
    if (a.name == predictor) return a.flagged;
  return false;
}

double spearman(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size()) throw InputError("spearman: length mismatch");
  if (a.size() < 2) return kNaN;
  const Eigen::VectorXd ra = average_ranks(a);
  const Eigen::VectorXd rb = average_ranks(b);
  const Eigen::ArrayXd ca = ra.array() - ra.mean();
  const Eigen::ArrayXd cb = rb.array() - rb.mean();
  const double denom = std::sqrt(ca.square().sum() * cb.square().sum());
  if (!(denom > 0.0)) return kNaN;
  return (ca * cb).sum() / denom;
}

std::vector<std::string> default_predictors(const Dataset& d) {
  std::vector<std::string> out = d.z_names;
  std::vector<bool> dummy(static_cast<std::size_t>(d.p()), false);
  for (const auto& g : d.categoricals)
    for (int k = 0; k < g.width(); ++k) dummy[g.first_column + k] = true;
  for (int j = 0; j < d.p(); ++j)
    if (!dummy[j]) out.push_back(d.x_names[j]);
  for (const auto& g : d.categoricals) out.push_back(g.name);
  return out;
}

Eigen::VectorXd predictor_values(const Dataset& d, const std::string& name) {
  if (int j = d.x_index(name); j >= 0) return d.X.col(j);
  if (int m = d.z_index(name); m >= 0) return d.Z.col(m);
  throw InputError("unknown predictor '" + name + "'");
}

std::vector<PredictorAssociation> associate(const Eigen::Ref<const Eigen::VectorXd>& residuals, const Dataset& d,
                                            const std::vector<std::string>& predictors,
                                            const AssociationOptions& opts) {
  if (residuals.size() != d.n()) throw InputError("residual length does not match the dataset");
  const Eigen::VectorXd abs_e = residuals.cwiseAbs();
  std::vector<PredictorAssociation> out;
  for (const auto& name : predictors) {
    PredictorAssociation a;
    a.name = name;
    if (const CategoricalGroup* g = d.categorical(name)) {
      a.categorical = true;
      a.spearman = kNaN;
      std::vector<std::vector<double>> groups(g->levels.size());
      for (int i = 0; i < d.n(); ++i) {
        std::size_t level = 0;
        for (int k = 0; k < g->width(); ++k)
          if (d.X(i, g->first_column + k) == 1.0) level = static_cast<std::size_t>(k) + 1;
        groups[level].push_back(residuals(i));
      }
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      for (const auto& grp : groups) {
        const double v = sample_variance(grp);
        if (std::isnan(v)) continue;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      a.variance_ratio = lo > 0.0 && std::isfinite(lo) ? hi / lo : kNaN;
      a.flagged = a.variance_ratio > opts.ratio_threshold;
    } else {
      a.variance_ratio = kNaN;
      a.spearman = spearman(abs_e, predictor_values(d, name));
      a.flagged = std::abs(a.spearman) > opts.rho_threshold;
    }
    out.push_back(std::move(a));
  }
  return out;
}

ResidualReport bayesian_residuals(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W,
                                  const std::vector<std::string>& predictors, const AssociationOptions& opts) {
  if (samples.n_draws() == 0) throw InputError("no posterior draws");
  ParamState s = samples.posterior_mean_state();
  // Posterior mean of tau, not the square of the mean of sqrt(tau).
  const Eigen::VectorXd st = samples.draws.col(samples.sqrt_tau_col());
  s.sqrt_tau = std::sqrt(st.squaredNorm() / static_cast<double>(st.size()));

  const KernelMatrix K(d.Z, s.r);
  const Eigen::VectorXd noise = s_diag(W, s.gamma);
  const CovFactor V = factor_cov(K, s.tau(), noise);
  Eigen::VectorXd xb = Eigen::VectorXd::Zero(d.n());
  if (d.p() > 0) xb = d.X * s.beta;
  const Eigen::VectorXd resid = d.y - xb;
  // E(h | y) = tau K V^{-1} (y - X beta) = (y - X beta) - S V^{-1} (y - X beta)
  const Eigen::VectorXd h = resid - noise.cwiseProduct(V.solve(resid));

  ResidualReport rep;
  rep.method = ResidualMethod::PosteriorMeanH;
  rep.fitted = h + xb;
  rep.residuals = d.y - rep.fitted;
  rep.associations = associate(rep.residuals, d, resolve_predictors(d, predictors), opts);
  return rep;
}

ResidualReport linear_approx_residuals(const Dataset& d, const std::vector<std::string>& predictors,
                                       const AssociationOptions& opts) {
  const int m = d.m();
  const int n_pairs = m * (m - 1) / 2;
  ResidualReport rep;
  rep.method = ResidualMethod::LinearApproximation;
  rep.n_regressors = m + n_pairs + d.p();
  if (d.n() <= rep.n_regressors + 1)
    throw InputError("linear approximation needs more rows than its " + std::to_string(rep.n_regressors + 1) +
                     " regressors");

  Eigen::MatrixXd D(d.n(), rep.n_regressors + 1);
  std::vector<std::string> names{"(intercept)"};
  D.col(0).setOnes();
  int c = 1;
  for (int a = 0; a < m; ++a, ++c) {
    D.col(c) = d.Z.col(a);
    names.push_back(d.z_names[a]);
  }
  for (int a = 0; a < m; ++a)
    for (int b = a + 1; b < m; ++b, ++c) {
      D.col(c) = d.Z.col(a).cwiseProduct(d.Z.col(b));
      names.push_back(d.z_names[a] + ":" + d.z_names[b]);
    }
  for (int j = 0; j < d.p(); ++j, ++c) {
    D.col(c) = d.X.col(j);
    names.push_back(d.x_names[j]);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  Eigen::MatrixXd design = D;
  if (qr.rank() < D.cols()) {
    std::vector<Eigen::Index> kept(qr.colsPermutation().indices().data(),
                                   qr.colsPermutation().indices().data() + qr.rank());
    std::sort(kept.begin(), kept.end());
    std::vector<bool> keep(static_cast<std::size_t>(D.cols()), false);
    for (auto k : kept) keep[k] = true;
    design.resize(D.rows(), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t k = 0; k < kept.size(); ++k) design.col(k) = D.col(kept[k]);
    for (Eigen::Index k = 0; k < D.cols(); ++k)
      if (!keep[k]) rep.dropped_columns.push_back(names[k]);
    std::string list;
    for (const auto& s : rep.dropped_columns) list += (list.empty() ? "" : ", ") + s;
    warn("linear approximation design is rank deficient; dropped " + list);
  }
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(d.y);
  rep.fitted = design * coef;
  rep.residuals = d.y - rep.fitted;
  rep.associations = associate(rep.residuals, d, resolve_predictors(d, predictors), opts);
  return rep;
}

WaicAccumulator::WaicAccumulator(Eigen::Index n)
    : max_(Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity())),
      sum_exp_(Eigen::VectorXd::Zero(n)),
      mean_(Eigen::VectorXd::Zero(n)),
      m2_(Eigen::VectorXd::Zero(n)) {}

void WaicAccumulator::add(const Eigen::Ref<const Eigen::VectorXd>& log_density) {
  if (log_density.size() != max_.size()) throw InputError("pointwise log density has the wrong length");
  ++draws_;
  for (Eigen::Index i = 0; i < max_.size(); ++i) {
    const double v = log_density(i);
    if (v > max_(i)) {
      sum_exp_(i) = sum_exp_(i) * std::exp(max_(i) - v) + 1.0;
      max_(i) = v;
    } else {
      sum_exp_(i) += std::exp(v - max_(i));
    }
    const double delta = v - mean_(i);
    mean_(i) += delta / draws_;
    m2_(i) += delta * (v - mean_(i));
  }
}

WaicResult WaicAccumulator::result() const {
  if (draws_ == 0) throw InputError("WAIC needs at least one draw");
  WaicResult w;
  w.pointwise_lppd = max_.array() + sum_exp_.array().log() - std::log(static_cast<double>(draws_));
  w.pointwise_p_waic = draws_ > 1 ? Eigen::VectorXd(m2_ / static_cast<double>(draws_ - 1))
                                  : Eigen::VectorXd::Zero(m2_.size());
  w.lppd = w.pointwise_lppd.sum();
  w.p_waic = w.pointwise_p_waic.sum();
  w.waic = -2.0 * (w.lppd - w.p_waic);
  return w;
}

WaicResult waic(const PosteriorSamples& samples, const Dataset& d, const VarianceDesign& W, const WaicOptions& opts) {
  if (opts.stride < 1) throw InputError("WAIC stride must be at least 1");
  if (samples.n_draws() == 0) throw InputError("no posterior draws");
  if (const int used = (samples.n_draws() + opts.stride - 1) / opts.stride; used < 100)
    warn("WAIC from only " + std::to_string(used) + " draws; p_waic is unreliable below 100");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  WaicAccumulator acc(d.n());
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> normal;

  for (int k = 0; k < samples.n_draws(); k += opts.stride) {
    const ParamState s = samples.state(k);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d.n());
    if (d.p() > 0) mean = d.X * s.beta;
    const Eigen::VectorXd noise = s_diag(W, s.gamma);
    Eigen::VectorXd var;
    if (opts.pointwise == WaicOptions::Pointwise::Marginal) {
      var = noise.array() + s.tau();
    } else {
      // h | y has mean r - S V^{-1} r and covariance S - S V^{-1} S (Woodbury form).
      const KernelMatrix K(d.Z, s.r);
      const CovFactor V = factor_cov(K, s.tau(), noise);
      const Eigen::VectorXd resid = d.y - mean;
      const Eigen::VectorXd h_mean = resid - noise.cwiseProduct(V.solve(resid));
      const Eigen::MatrixXd LS = V.half_solve(Eigen::MatrixXd(noise.asDiagonal()));
      Eigen::MatrixXd h_cov = -(LS.transpose() * LS);
      h_cov.diagonal() += noise;
      const CovFactor C(h_cov, 1.0, Eigen::VectorXd::Constant(d.n(), 1e-12 * noise.mean()));
      Eigen::VectorXd z(d.n());
      for (auto& zi : z) zi = normal(rng);
      mean += h_mean + C.matrix_l() * z;
      var = noise;
    }
    const Eigen::VectorXd resid = d.y - mean;
    const Eigen::VectorXd ld = -0.5 * (log2pi + var.array().log() + resid.array().square() / var.array());
    acc.add(ld);
  }
  return acc.result();
}

std::vector<WaicRanking> compare(const std::vector<WaicResult>& models, const std::vector<std::string>& labels) {
  if (models.size() < 2) throw InputError("compare needs at least two models");
  if (labels.size() != models.size()) throw InputError("compare needs one label per model");
  for (const auto& m : models)
    if (m.n() != models.front().n()) throw InputError("models were fit to datasets of different sizes");
  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return models[a].waic < models[b].waic; });
  std::vector<WaicRanking> out;
  for (auto i : order)
    out.push_back({labels[i], models[i].waic, models[i].waic - models[order.front()].waic, models[i].p_waic});
  return out;
}

}  // namespace hbkmr
