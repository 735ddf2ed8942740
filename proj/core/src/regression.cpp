#include "slrgrowth/regression.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::regression {

namespace {

constexpr double kRankTolerance = 1e-10;

void check_rows(const Eigen::VectorXd& y, const Eigen::MatrixXd& X) {
  if (y.size() != X.rows()) throw DimensionError("response length differs from design rows");
}

}  // namespace

DesignMatrix DesignMatrix::intercept_only(Eigen::Index n) {
  return {Eigen::MatrixXd::Ones(n, 1), {kIntercept}};
}

DesignMatrix DesignMatrix::from_columns(const std::vector<std::pair<std::string, Eigen::VectorXd>>& columns) {
  DesignMatrix d;
  if (columns.empty()) return d;
  const Eigen::Index n = columns.front().second.size();
  d.X.resize(n, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j].second.size() != n) throw DimensionError("column '" + columns[j].first + "' has a different length");
    d.X.col(static_cast<Eigen::Index>(j)) = columns[j].second;
    d.names.push_back(columns[j].first);
  }
  return d;
}

DesignMatrix DesignMatrix::with_intercept(const std::vector<std::pair<std::string, Eigen::VectorXd>>& columns) {
  if (columns.empty()) throw DimensionError("with_intercept needs at least one column to size the design");
  std::vector<std::pair<std::string, Eigen::VectorXd>> all;
  all.emplace_back(kIntercept, Eigen::VectorXd::Ones(columns.front().second.size()));
  all.insert(all.end(), columns.begin(), columns.end());
  return from_columns(all);
}

bool DesignMatrix::has_intercept() const { return !names.empty() && names.front() == kIntercept; }

Eigen::Index DesignMatrix::find(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return static_cast<Eigen::Index>(j);
  return -1;
}

DesignMatrix DesignMatrix::select_rows(const std::vector<std::size_t>& rows) const {
  DesignMatrix d;
  d.names = names;
  d.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) d.X.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(rows[i]));
  return d;
}

DesignMatrix DesignMatrix::drop(const std::vector<std::string>& columns) const {
  std::vector<std::pair<std::string, Eigen::VectorXd>> keep;
  for (std::size_t j = 0; j < names.size(); ++j) {
    bool dropped = false;
    for (const auto& c : columns) dropped = dropped || c == names[j];
    if (!dropped) keep.emplace_back(names[j], X.col(static_cast<Eigen::Index>(j)));
  }
  return from_columns(keep);
}

double OlsFit::coef(const std::string& name) const { return beta[index_of(name)]; }

Eigen::Index OlsFit::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return static_cast<Eigen::Index>(j);
  throw PreconditionError("no coefficient named '" + name + "'");
}

QrLeastSquares::QrLeastSquares(const Eigen::MatrixXd& X, const std::vector<std::string>& names) {
  const Eigen::Index k = X.cols();
  if (X.rows() < k) throw SingularityError("fewer rows than columns");
  auto label = [&](Eigen::Index j) {
    return j < static_cast<Eigen::Index>(names.size()) ? names[static_cast<std::size_t>(j)] : std::to_string(j);
  };
  scale_ = X.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < k; ++j)
    if (!(scale_[j] > 0.0)) throw SingularityError("column '" + label(j) + "' is identically zero");
  qr_.setThreshold(kRankTolerance);
  qr_.compute(X * scale_.cwiseInverse().asDiagonal());
  if (qr_.rank() < k) {
    std::string msg = "rank-deficient design; collinear columns:";
    const auto& perm = qr_.colsPermutation().indices();
    for (Eigen::Index j = qr_.rank(); j < k; ++j) msg += " " + label(perm[j]);
    throw SingularityError(msg);
  }
}

Eigen::MatrixXd QrLeastSquares::solve(const Eigen::MatrixXd& rhs) const {
  return scale_.cwiseInverse().asDiagonal() * qr_.solve(rhs);
}

Eigen::VectorXd QrLeastSquares::solve(const Eigen::VectorXd& rhs) const {
  return qr_.solve(rhs).cwiseQuotient(scale_);
}

Eigen::MatrixXd QrLeastSquares::xtx_inv() const {
  const Eigen::Index k = cols();
  const Eigen::MatrixXd R = qr_.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv = R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const auto P = qr_.colsPermutation();
  const Eigen::MatrixXd inv_s = P * (Rinv * Rinv.transpose()) * P.transpose();
  return scale_.cwiseInverse().asDiagonal() * inv_s * scale_.cwiseInverse().asDiagonal();
}

LeastSquares least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const std::vector<std::string>& names) {
  check_rows(y, X);
  QrLeastSquares qr(X, names);
  return {qr.solve(y), qr.xtx_inv()};
}

OlsFit ols(const Eigen::VectorXd& y, const DesignMatrix& X) {
  check_rows(y, X.X);
  const Eigen::Index n = X.rows(), k = X.cols();
  if (n <= k) throw SingularityError("OLS needs more observations than regressors");
  auto ls = least_squares(X.X, y, X.names);

  OlsFit f;
  f.names = X.names;
  f.n = n;
  f.k = k;
  f.beta = ls.beta;
  f.fitted = X.X * f.beta;
  f.residuals = y - f.fitted;
  const double rss = f.residuals.squaredNorm();
  f.sigma2 = rss / static_cast<double>(n - k);
  f.cov = f.sigma2 * ls.xtx_inv;
  f.se = f.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  f.t = f.beta.cwiseQuotient(f.se);
  f.p.resize(k);
  for (Eigen::Index j = 0; j < k; ++j) f.p[j] = stats::student_t_two_sided_p(f.t[j], static_cast<double>(n - k));

  const bool centered = X.has_intercept();
  const double tss = centered ? (y.array() - y.mean()).square().sum() : y.squaredNorm();
  f.r2 = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  const double df_model = static_cast<double>(centered ? k - 1 : k);
  const double dn = static_cast<double>(n);
  f.r2_adj = 1.0 - (1.0 - f.r2) * (centered ? dn - 1.0 : dn) / static_cast<double>(n - k);
  if (df_model > 0) {
    f.f_stat = (f.r2 / df_model) / ((1.0 - f.r2) / static_cast<double>(n - k));
    f.f_p = stats::fisher_f_upper_p(f.f_stat, df_model, static_cast<double>(n - k));
  } else {
    f.f_stat = std::numeric_limits<double>::quiet_NaN();
    f.f_p = std::numeric_limits<double>::quiet_NaN();
  }
  const double s2ml = rss / dn;
  f.log_likelihood = -0.5 * dn * (std::log(2.0 * std::numbers::pi) + 1.0 + std::log(s2ml));
  return f;
}

IvFit iv_2sls(const Eigen::VectorXd& y, const DesignMatrix& regressors, const DesignMatrix& instruments) {
  check_rows(y, regressors.X);
  if (instruments.rows() != regressors.rows()) throw DimensionError("instrument rows differ from regressor rows");
  if (instruments.cols() < regressors.cols())
    throw SingularityError("under-identified: fewer instruments than regressors");
  // Rank check on the instrument set, then the projection P_Z X via thin Q.
  (void)QrLeastSquares(instruments.X, instruments.names);
  Eigen::HouseholderQR<Eigen::MatrixXd> qz(instruments.X);
  const Eigen::MatrixXd Q = qz.householderQ() * Eigen::MatrixXd::Identity(instruments.rows(), instruments.cols());
  const Eigen::MatrixXd Xhat = Q * (Q.transpose() * regressors.X);
  auto second = least_squares(Xhat, y, regressors.names);

  IvFit f;
  f.names = regressors.names;
  f.n = regressors.rows();
  f.k = regressors.cols();
  f.beta = second.beta;
  f.residuals = y - regressors.X * f.beta;
  f.sigma2 = f.residuals.squaredNorm() / static_cast<double>(f.n - f.k);
  f.cov = f.sigma2 * second.xtx_inv;
  f.se = f.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  f.z = f.beta.cwiseQuotient(f.se);
  f.p.resize(f.k);
  for (Eigen::Index j = 0; j < f.k; ++j) f.p[j] = stats::normal_two_sided_p(f.z[j]);
  return f;
}

TestResult sargan_test(const Eigen::VectorXd& iv_residuals, const DesignMatrix& instruments, Eigen::Index regressors) {
  const Eigen::Index dof = instruments.cols() - regressors;
  if (dof <= 0) throw PreconditionError("Sargan test needs an over-identified system (zero degrees of freedom)");
  const auto aux = ols(iv_residuals, instruments);
  TestResult r;
  r.statistic = static_cast<double>(iv_residuals.size()) * std::max(0.0, aux.r2);
  r.dof = static_cast<double>(dof);
  r.p = stats::chi_squared_upper_p(r.statistic, r.dof);
  return r;
}

TestResult wu_hausman(const Eigen::VectorXd& y, const DesignMatrix& exogenous, const Eigen::VectorXd& endogenous,
                      const DesignMatrix& excluded) {
  if (y.size() != exogenous.rows() || endogenous.size() != y.size() || excluded.rows() != y.size())
    throw DimensionError("Wu-Hausman inputs are not on a common sample");
  DesignMatrix full = exogenous;
  full.X.conservativeResize(Eigen::NoChange, exogenous.cols() + excluded.cols());
  full.X.rightCols(excluded.cols()) = excluded.X;
  full.names.insert(full.names.end(), excluded.names.begin(), excluded.names.end());
  const auto reduced = ols(endogenous, full);
  const Eigen::VectorXd v = reduced.residuals;

  TestResult r;
  r.dof = 1.0;
  // Instruments that reproduce the regressor leave no control function.
  if (v.norm() <= 1e-10 * std::max(1.0, endogenous.norm())) {
    r.statistic = 0.0;
    r.p = 1.0;
    return r;
  }
  DesignMatrix aug = exogenous;
  aug.X.conservativeResize(Eigen::NoChange, exogenous.cols() + 2);
  aug.X.col(exogenous.cols()) = endogenous;
  aug.X.col(exogenous.cols() + 1) = v;
  aug.names.push_back("endogenous");
  aug.names.push_back("first_stage_residual");
  const auto fit = ols(y, aug);
  const double t = fit.t[fit.k - 1];
  r.statistic = t * t;
  r.p = stats::chi_squared_upper_p(r.statistic, 1.0);
  return r;
}

double convergence_rate(double beta, double years) {
  if (!(years > 0.0)) throw DomainError("convergence period must be positive");
  const double base = 1.0 + years * beta;
  if (!(base > 0.0)) throw DomainError("convergence rate undefined for 1 + T*beta <= 0");
  return 1.0 - std::pow(base, 1.0 / years);
}

ThreeSlsFit three_sls(const ThreeSlsInput& in) {
  const Eigen::Index n = in.g.size();
  if (in.y0.size() != n || in.g_prev.size() != n || in.y0_prev.size() != n || in.instruments.rows() != n ||
      in.controls.rows() != n) {
    throw DimensionError("three_sls inputs are not on a common sample");
  }
  if (in.instruments.cols() < 1) throw SingularityError("under-identified: no excluded instruments");

  const Eigen::VectorXd dy0 = in.y0 - in.y0_prev;
  const Eigen::VectorXd dg = in.g - in.g_prev;

  std::vector<std::pair<std::string, Eigen::VectorXd>> zcols;
  for (Eigen::Index j = 0; j < in.instruments.cols(); ++j)
    zcols.emplace_back(in.instruments.names[static_cast<std::size_t>(j)], in.instruments.X.col(j));
  const DesignMatrix Z = DesignMatrix::with_intercept(zcols);

  ThreeSlsFit f;
  f.stage1 = ols(dy0, Z);
  f.stage2 = ols(dg, DesignMatrix::with_intercept({{"predicted_delta_y0", f.stage1.fitted}}));
  f.beta = f.stage2.beta[1];
  f.beta_se = f.stage2.se[1];
  f.beta_p = f.stage2.p[1];

  const Eigen::VectorXd eta = dg.array() - f.stage2.beta[0] - f.beta * dy0.array();
  if (in.instruments.cols() > 1) f.sargan = sargan_test(eta, Z, 2);
  f.wu_hausman = wu_hausman(dg, DesignMatrix::intercept_only(n), dy0, in.instruments);

  f.pi = in.g - f.beta * in.y0;
  f.stage3 = ols(f.pi, in.controls);
  try {
    f.convergence_rate = convergence_rate(f.beta, in.years);
  } catch (const DomainError&) {
    f.convergence_rate = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

}  // namespace slrgrowth::regression
