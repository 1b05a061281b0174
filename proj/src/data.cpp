#include "hbkmr/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <set>

#include "hbkmr/csv.hpp"
#include "hbkmr/error.hpp"

namespace hbkmr {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view cell) {
  cell = trim(cell);
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan";
}

std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

int require_column(const csv::Table& t, const std::string& name) {
  int idx = t.column(name);
  if (idx < 0) throw InputError("missing column '" + name + "'");
  return idx;
}

}  // namespace

double ExposureTransform::forward(double raw) const { return (std::log(raw + shift) - mean) / sd; }

double ExposureTransform::inverse(double standardized) const {
  return std::exp(standardized * sd + mean) - shift;
}

int Dataset::x_index(const std::string& name) const {
  auto it = std::find(x_names.begin(), x_names.end(), name);
  return it == x_names.end() ? -1 : static_cast<int>(it - x_names.begin());
}

int Dataset::z_index(const std::string& name) const {
  auto it = std::find(z_names.begin(), z_names.end(), name);
  return it == z_names.end() ? -1 : static_cast<int>(it - z_names.begin());
}

const CategoricalGroup* Dataset::categorical(const std::string& name) const {
  for (const auto& g : categoricals)
    if (g.name == name) return &g;
  return nullptr;
}

void Dataset::validate() const {
  if (n() < 2) throw InputError("dataset needs at least 2 rows, has " + std::to_string(n()));
  if (m() < 1) throw InputError("dataset needs at least one exposure");
  if (X.rows() != n() || Z.rows() != n()) throw InputError("dataset row counts disagree");
  if (static_cast<int>(x_names.size()) != p() || static_cast<int>(z_names.size()) != m())
    throw InputError("dataset column names do not match matrix widths");
  if (!y.allFinite() || !X.allFinite() || !Z.allFinite())
    throw InputError("dataset contains non-finite values");
}

Dataset load_csv(const std::string& path, const ColumnRoles& roles) {
  const csv::Table t = csv::read_file(path);
  if (roles.exposures.empty()) throw InputError("at least one exposure column is required");

  const int y_col = roles.outcome_optional ? t.column(roles.outcome) : require_column(t, roles.outcome);
  std::vector<int> z_cols, c_cols;
  for (const auto& name : roles.exposures) z_cols.push_back(require_column(t, name));
  for (const auto& name : roles.covariates) c_cols.push_back(require_column(t, name));

  // Complete cases across the selected columns.
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    bool complete = y_col < 0 || !is_missing(row[y_col]);
    for (int c : z_cols) complete = complete && !is_missing(row[c]);
    for (int c : c_cols) complete = complete && !is_missing(row[c]);
    if (complete) keep.push_back(i);
  }

  Dataset d;
  d.outcome_name = roles.outcome;
  d.z_names = roles.exposures;
  d.dropped_rows = t.rows.size() - keep.size();
  if (d.dropped_rows > 0)
    std::cerr << "load_csv: dropped " << d.dropped_rows << " of " << t.rows.size()
              << " rows with missing values\n";
  if (keep.empty()) throw InputError("no usable rows in '" + path + "'");

  const auto n = static_cast<Eigen::Index>(keep.size());
  auto numeric_cell = [&](std::size_t row, int col) {
    auto v = parse_number(t.rows[row][col]);
    if (!v) {
      throw InputError("non-numeric value '" + t.rows[row][col] + "' in column '" + t.header[col] +
                       "' at data row " + std::to_string(row + 1));
    }
    if (!std::isfinite(*v))
      throw InputError("non-finite value in column '" + t.header[col] + "' at data row " +
                       std::to_string(row + 1));
    return *v;
  };

  d.y = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  if (y_col >= 0)
    for (Eigen::Index i = 0; i < n; ++i) d.y(i) = numeric_cell(keep[i], y_col);

  d.Z.resize(n, static_cast<Eigen::Index>(z_cols.size()));
  for (std::size_t j = 0; j < z_cols.size(); ++j)
    for (Eigen::Index i = 0; i < n; ++i) d.Z(i, j) = numeric_cell(keep[i], z_cols[j]);

  // Covariates: numeric columns pass through, categorical ones expand into dummies.
  std::vector<Eigen::VectorXd> x_cols;
  for (std::size_t j = 0; j < c_cols.size(); ++j) {
    const std::string& name = roles.covariates[j];
    const int col = c_cols[j];
    bool categorical = std::find(roles.force_categorical.begin(), roles.force_categorical.end(), name) !=
                       roles.force_categorical.end();
    const CategoricalGroup* known = nullptr;
    for (const auto& g : roles.known_levels)
      if (g.name == name) known = &g;
    categorical = categorical || known != nullptr;
    if (!categorical)
      for (auto i : keep) categorical = categorical || !parse_number(t.rows[i][col]).has_value();

    if (!categorical) {
      Eigen::VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) v(i) = numeric_cell(keep[i], col);
      x_cols.push_back(std::move(v));
      d.x_names.push_back(name);
      continue;
    }

    CategoricalGroup g;
    g.name = name;
    if (known) {
      g.levels = known->levels;
    } else {
      std::set<std::string> levels;
      for (auto i : keep) levels.emplace(trim(t.rows[i][col]));
      g.levels.assign(levels.begin(), levels.end());
    }
    g.first_column = static_cast<int>(x_cols.size());
    std::map<std::string, int> index;
    for (std::size_t k = 0; k < g.levels.size(); ++k) index[g.levels[k]] = static_cast<int>(k);
    for (int k = 1; k < static_cast<int>(g.levels.size()); ++k) {
      x_cols.emplace_back(Eigen::VectorXd::Zero(n));
      d.x_names.push_back(name + "=" + g.levels[k]);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      std::string level(trim(t.rows[keep[i]][col]));
      auto it = index.find(level);
      if (it == index.end())
        throw InputError("unknown level '" + level + "' of '" + name + "' at data row " +
                         std::to_string(keep[i] + 1));
      if (it->second > 0) x_cols[g.first_column + it->second - 1](i) = 1.0;
    }
    d.categoricals.push_back(std::move(g));
  }

  d.X.resize(n, static_cast<Eigen::Index>(x_cols.size()));
  for (std::size_t j = 0; j < x_cols.size(); ++j) d.X.col(j) = x_cols[j];
  return d;
}

ColumnRoles write_csv(std::ostream& out, const Dataset& d) {
  ColumnRoles roles;
  roles.outcome = d.outcome_name;
  roles.exposures = d.z_names;

  // Walk X in column order; a categorical group is emitted once at its first dummy column.
  struct Source {
    int x_column = -1;
    const CategoricalGroup* group = nullptr;
  };
  std::vector<Source> sources;
  std::vector<const CategoricalGroup*> owner(static_cast<std::size_t>(d.p()), nullptr);
  for (const auto& g : d.categoricals)
    for (int k = 0; k < g.width(); ++k) owner[g.first_column + k] = &g;
  std::vector<const CategoricalGroup*> emitted;
  for (int j = 0; j < d.p(); ++j) {
    if (!owner[j]) {
      sources.push_back({j, nullptr});
      roles.covariates.push_back(d.x_names[j]);
    } else if (std::find(emitted.begin(), emitted.end(), owner[j]) == emitted.end()) {
      emitted.push_back(owner[j]);
      sources.push_back({-1, owner[j]});
      roles.covariates.push_back(owner[j]->name);
      roles.force_categorical.push_back(owner[j]->name);
    }
  }
  // Single-level groups have no dummy columns; keep them so the schema survives.
  for (const auto& g : d.categoricals) {
    if (g.width() == 0) {
      sources.push_back({-1, &g});
      roles.covariates.push_back(g.name);
      roles.force_categorical.push_back(g.name);
    }
  }

  std::vector<std::string> header{d.outcome_name};
  header.insert(header.end(), d.z_names.begin(), d.z_names.end());
  header.insert(header.end(), roles.covariates.begin(), roles.covariates.end());
  csv::write_row(out, header);

  const Eigen::MatrixXd raw = inverse_transform(d);
  for (int i = 0; i < d.n(); ++i) {
    std::vector<std::string> row{std::isfinite(d.y(i)) ? csv::format_double(d.y(i)) : "NA"};
    for (int m = 0; m < d.m(); ++m) row.push_back(csv::format_double(raw(i, m)));
    for (const auto& s : sources) {
      if (s.group == nullptr) {
        row.push_back(csv::format_double(d.X(i, s.x_column)));
        continue;
      }
      std::size_t level = 0;
      for (int k = 0; k < s.group->width(); ++k)
        if (d.X(i, s.group->first_column + k) == 1.0) level = static_cast<std::size_t>(k) + 1;
      row.push_back(s.group->levels[level]);
    }
    csv::write_row(out, row);
  }
  return roles;
}

Dataset standardize_exposures(const Dataset& d) {
  if (d.n() < 2) throw InputError("standardize_exposures needs at least 2 rows");
  Dataset out = d;
  out.transform_log.clear();
  for (int m = 0; m < d.m(); ++m) {
    for (int i = 0; i < d.n(); ++i) {
      if (!(d.Z(i, m) > 0.0))
        throw InputError("exposure '" + d.z_names[m] + "' has nonpositive value " +
                         std::to_string(d.Z(i, m)) + " at row " + std::to_string(i + 1) +
                         "; log transform needs positive values");
    }
    Eigen::ArrayXd logs = d.Z.col(m).array().log();
    ExposureTransform tr;
    tr.mean = logs.mean();
    tr.sd = std::sqrt((logs - tr.mean).square().sum() / (d.n() - 1));
    if (!(tr.sd > 0.0)) throw InputError("exposure '" + d.z_names[m] + "' is constant");
    out.Z.col(m) = ((logs - tr.mean) / tr.sd).matrix();
    out.transform_log.push_back(tr);
  }
  return out;
}

Dataset apply_exposure_transforms(const Dataset& d, const std::vector<ExposureTransform>& transforms) {
  if (static_cast<int>(transforms.size()) != d.m())
    throw InputError("transform count does not match exposure count");
  Dataset out = d;
  for (int m = 0; m < d.m(); ++m) {
    for (int i = 0; i < d.n(); ++i) {
      if (!(d.Z(i, m) + transforms[m].shift > 0.0))
        throw InputError("exposure '" + d.z_names[m] + "' has nonpositive value at row " +
                         std::to_string(i + 1));
      out.Z(i, m) = transforms[m].forward(d.Z(i, m));
    }
  }
  out.transform_log = transforms;
  return out;
}

Eigen::MatrixXd inverse_transform(const Dataset& d) {
  if (!d.standardized()) return d.Z;
  Eigen::MatrixXd raw(d.Z.rows(), d.Z.cols());
  for (int m = 0; m < d.m(); ++m)
    for (int i = 0; i < d.n(); ++i) raw(i, m) = d.transform_log[m].inverse(d.Z(i, m));
  return raw;
}

double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw InputError("quantile of an empty vector");
  if (!(p >= 0.0 && p <= 1.0)) throw InputError("quantile probability must lie in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double quantile(const Eigen::Ref<const Eigen::VectorXd>& v, double p) {
  return quantile(std::vector<double>(v.data(), v.data() + v.size()), p);
}

QuantileProfile quantile_profile(const Dataset& d) {
  QuantileProfile qp;
  for (int k = 1; k <= 19; ++k) qp.probs.push_back(0.05 * k);
  qp.table.resize(d.m(), static_cast<Eigen::Index>(qp.probs.size()));
  for (int m = 0; m < d.m(); ++m) {
    std::vector<double> col(d.Z.col(m).data(), d.Z.col(m).data() + d.n());
    std::sort(col.begin(), col.end());
    for (std::size_t k = 0; k < qp.probs.size(); ++k) qp.table(m, k) = quantile(col, qp.probs[k]);
  }
  return qp;
}

Encoding parse_encoding(const std::string& text) {
  if (text == "identity") return Encoding::Identity;
  if (text == "abs" || text == "absolute-value") return Encoding::AbsoluteValue;
  if (text == "dummy" || text == "dummy-set") return Encoding::DummySet;
  throw InputError("unknown variance encoding '" + text + "' (identity, absolute-value, dummy-set)");
}

std::string to_string(Encoding e) {
  switch (e) {
    case Encoding::Identity: return "identity";
    case Encoding::AbsoluteValue: return "absolute-value";
    case Encoding::DummySet: return "dummy-set";
  }
  return "identity";
}

VarianceDesign build_variance_design(const Dataset& d, const std::vector<VarianceSpec>& recipe, bool check_rank) {
  std::vector<Eigen::VectorXd> cols{Eigen::VectorXd::Ones(d.n())};
  VarianceDesign vd;
  vd.recipe = recipe;
  vd.column_names.push_back("(intercept)");

  for (const auto& spec : recipe) {
    const CategoricalGroup* group = d.categorical(spec.column);
    if (group) {
      if (spec.encoding == Encoding::AbsoluteValue)
        throw InputError("absolute-value encoding needs a numeric column, '" + spec.column +
                         "' is categorical");
      for (int k = 0; k < group->width(); ++k) {
        cols.push_back(d.X.col(group->first_column + k));
        vd.column_names.push_back(d.x_names[group->first_column + k]);
      }
      continue;
    }
    if (spec.encoding == Encoding::DummySet)
      throw InputError("dummy-set encoding needs a categorical covariate, '" + spec.column + "' is not one");

    Eigen::VectorXd source;
    if (int j = d.x_index(spec.column); j >= 0) {
      source = d.X.col(j);
    } else if (int m = d.z_index(spec.column); m >= 0) {
      source = d.Z.col(m);
    } else {
      throw InputError("unknown variance predictor column '" + spec.column + "'");
    }
    if (spec.encoding == Encoding::AbsoluteValue) {
      cols.push_back(source.cwiseAbs());
      vd.column_names.push_back("|" + spec.column + "|");
    } else {
      cols.push_back(std::move(source));
      vd.column_names.push_back(spec.column);
    }
  }

  vd.W.resize(d.n(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) vd.W.col(j) = cols[j];

  if (d.n() >= vd.W.cols()) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(vd.W);
    vd.full_rank = qr.rank() == vd.W.cols();
  } else {
    vd.full_rank = false;
  }
  if (check_rank && !vd.full_rank) warn("variance design is rank deficient; check for constant or collinear predictors");
  return vd;
}

}  // namespace hbkmr
