#include "slrgrowth/spatial.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <sstream>

#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::spatial {

namespace {

using regression::DesignMatrix;
using regression::QrLeastSquares;

constexpr double kBoundEps = 1e-6;
constexpr std::uintmax_t kMaxBrentIter = 200;

struct Maximum {
  double x = 0.0;
  double f = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
  bool converged = true;
  double lo = 0.0, hi = 0.0;
};

int bits_for(double tol) {
  const int bits = static_cast<int>(std::ceil(-std::log2(tol))) + 1;
  return std::clamp(bits, 8, std::numeric_limits<double>::digits / 2 + 4);
}

// Grid scan followed by Brent in the bracket around the best grid point.
template <class F>
Maximum maximize_1d(F&& f, double lo, double hi, int grid, double tol) {
  grid = std::max(grid, 3);
  Maximum best;
  int best_i = 0;
  std::vector<double> xs(static_cast<std::size_t>(grid));
  for (int i = 0; i < grid; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / (grid - 1);
    xs[static_cast<std::size_t>(i)] = x;
    const double v = f(x);
    ++best.evaluations;
    if (std::isfinite(v) && v > best.f) {
      best.f = v;
      best.x = x;
      best_i = i;
    }
  }
  if (!std::isfinite(best.f)) throw ConvergenceError("likelihood is not finite anywhere on the search interval");
  const double a = xs[static_cast<std::size_t>(std::max(best_i - 1, 0))];
  const double b = xs[static_cast<std::size_t>(std::min(best_i + 1, grid - 1))];
  best.lo = a;
  best.hi = b;
  std::uintmax_t iters = kMaxBrentIter;
  auto r = boost::math::tools::brent_find_minima(
      [&](double x) {
        const double v = f(x);
        return std::isfinite(v) ? -v : std::numeric_limits<double>::max();
      },
      a, b, bits_for(tol), iters);
  best.evaluations += static_cast<int>(iters);
  if (iters >= kMaxBrentIter) best.converged = false;
  if (-r.second > best.f) {
    best.x = r.first;
    best.f = -r.second;
  }
  return best;
}

[[noreturn]] void throw_nonconvergence(const std::string& what, const Maximum& m) {
  std::ostringstream msg;
  msg << what << " search did not converge; last bracket [" << m.lo << ", " << m.hi << "] after " << m.evaluations
      << " evaluations";
  throw ConvergenceError(msg.str());
}

void check_inputs(const Eigen::VectorXd& y, const DesignMatrix& X, Eigen::Index n) {
  if (y.size() != X.X.rows()) throw DimensionError("response and design have different row counts");
  if (y.size() != n) throw DimensionError("response length does not match the weight matrix");
  if (X.X.cols() == 0) throw DimensionError("design has no columns");
}

SpatialParameter param(double est, double se) {
  SpatialParameter p;
  p.estimate = est;
  p.se = se;
  p.z = se > 0.0 ? est / se : 0.0;
  p.p = se > 0.0 ? stats::normal_two_sided_p(p.z) : 1.0;
  return p;
}

void fill_coefficients(SpatialFit& fit, const Eigen::VectorXd& beta, const Eigen::VectorXd& var) {
  fit.beta = beta;
  fit.se = var.cwiseMax(0.0).cwiseSqrt();
  fit.z.resize(beta.size());
  fit.p.resize(beta.size());
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    fit.z[j] = fit.se[j] > 0.0 ? beta[j] / fit.se[j] : 0.0;
    fit.p[j] = fit.se[j] > 0.0 ? stats::normal_two_sided_p(fit.z[j]) : 1.0;
  }
}

Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info, const char* model) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || (ldlt.vectorD().array() <= 0.0).any())
    throw SingularityError(std::string(model) + " information matrix is not positive definite");
  return ldlt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
}

double full_loglik(Eigen::Index n, double sigma2, double logdet) {
  const double nn = static_cast<double>(n);
  return -0.5 * nn * (std::log(2.0 * std::numbers::pi) + 1.0) - 0.5 * nn * std::log(sigma2) + logdet;
}

// OLS residuals of y and Wy on X, reused across every rho evaluation.
struct LagProblem {
  Eigen::VectorXd b0, bL, e0, eL;
  double e0e0 = 0.0, e0eL = 0.0, eLeL = 0.0;

  LagProblem(const Eigen::VectorXd& y, const Eigen::VectorXd& wy, const Eigen::MatrixXd& X,
             const std::vector<std::string>& names) {
    QrLeastSquares qr(X, names);
    Eigen::MatrixXd rhs(y.size(), 2);
    rhs.col(0) = y;
    rhs.col(1) = wy;
    const Eigen::MatrixXd b = qr.solve(rhs);
    b0 = b.col(0);
    bL = b.col(1);
    e0 = y - X * b0;
    eL = wy - X * bL;
    e0e0 = e0.squaredNorm();
    e0eL = e0.dot(eL);
    eLeL = eL.squaredNorm();
  }

  double rss(double rho) const { return std::max(e0e0 - 2.0 * rho * e0eL + rho * rho * eLeL, 0.0); }

  double concentrated(double rho, const SpatialOperator& op) const {
    const double n = static_cast<double>(e0.size());
    const double s = rss(rho) / n;
    if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
    return -0.5 * n * std::log(s) + op.log_det(rho);
  }
};

}  // namespace

SpatialOperator::SpatialOperator(weights::ContiguityWeights w) : w_(std::move(w)) {
  if (w_.size() < 2) throw PreconditionError("spatial operator needs at least two units");
  eig_ = w_.eigenvalues();
  if (!(eig_.minCoeff() < 0.0) || !(eig_.maxCoeff() > 0.0))
    throw PreconditionError("weight matrix spectrum does not straddle zero");
}

double SpatialOperator::log_det(double a) const {
  if (a == 0.0) return 0.0;
  double s = 0.0;
  for (Eigen::Index i = 0; i < eig_.size(); ++i) {
    const double t = 1.0 - a * eig_[i];
    if (!(t > 0.0)) return -std::numeric_limits<double>::infinity();
    s += std::log1p(-a * eig_[i]);
  }
  return s;
}

Eigen::MatrixXd SpatialOperator::resolvent(double a) const {
  if (!(a > 1.0 / eig_.minCoeff() && a < 1.0 / eig_.maxCoeff()))
    throw SingularityError("I - aW is singular or outside the invertible interval at a = " + std::to_string(a));
  const Eigen::Index n = size();
  // Sparse LU with the identity as right-hand side: exact, and several
  // times faster than a dense factorisation on contiguity structures.
  Eigen::SparseMatrix<double> m(n, n);
  m.setIdentity();
  m -= a * w_.sparse();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(m);
  if (lu.info() != Eigen::Success) throw SingularityError("sparse LU of I - aW failed at a = " + std::to_string(a));
  return lu.solve(Eigen::MatrixXd::Identity(n, n));
}

std::string_view kind_name(SpatialKind k) {
  switch (k) {
    case SpatialKind::SAR: return "SAR";
    case SpatialKind::SEM: return "SEM";
    case SpatialKind::SAC: return "SAC";
    case SpatialKind::GS2SLS_WHITE: return "GS2SLS_WHITE";
  }
  return "?";
}

Eigen::Index SpatialFit::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < names.size(); ++j)
    if (names[j] == name) return static_cast<Eigen::Index>(j);
  throw SchemaError("no coefficient named '" + name + "'");
}

// ---- lag model ----

double sar_concentrated_loglik(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op,
                               double rho) {
  check_inputs(y, X, op.size());
  LagProblem lp(y, op.weights().lag(y), X.X, X.names);
  return lp.concentrated(rho, op);
}

SpatialFit fit_sar(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op,
                   const SarOptions& opt) {
  check_inputs(y, X, op.size());
  const Eigen::Index n = y.size();
  const Eigen::Index k = X.X.cols();
  const auto& w = op.weights();
  const Eigen::VectorXd wy = w.lag(y);
  LagProblem lp(y, wy, X.X, X.names);

  SpatialFit fit;
  fit.kind = SpatialKind::SAR;
  fit.names = X.names;
  fit.n = n;
  const double lo = op.lower_bound(kBoundEps), hi = op.upper_bound(kBoundEps);
  fit.convergence.bracket_lo = lo;
  fit.convergence.bracket_hi = hi;

  double rho;
  if (opt.fixed_rho) {
    rho = *opt.fixed_rho;
    if (!(rho > lo - kBoundEps && rho < hi + kBoundEps)) throw DomainError("fixed rho outside the feasible interval");
    fit.convergence.note = "rho fixed";
  } else {
    auto m = maximize_1d([&](double r) { return lp.concentrated(r, op); }, lo, hi, opt.grid_points, opt.tolerance);
    if (!m.converged) throw_nonconvergence("rho", m);
    rho = m.x;
    fit.convergence.evaluations = m.evaluations;
    fit.convergence.bracket_lo = m.lo;
    fit.convergence.bracket_hi = m.hi;
  }

  const Eigen::VectorXd beta = lp.b0 - rho * lp.bL;
  fit.residuals = lp.e0 - rho * lp.eL;
  fit.sigma2 = fit.residuals.squaredNorm() / static_cast<double>(n);
  if (!(fit.sigma2 > 0.0)) throw SingularityError("lag model fits the data exactly");
  fit.log_likelihood = full_loglik(n, fit.sigma2, op.log_det(rho));

  // Analytic information matrix over (beta, rho, sigma2).
  auto B = std::make_shared<Eigen::MatrixXd>(op.resolvent(rho));
  const Eigen::MatrixXd WA = w.lag(*B);
  const Eigen::VectorXd& om = op.eigenvalues();
  const Eigen::ArrayXd g = om.array() / (1.0 - rho * om.array());
  const double tr_wa = g.sum();
  const double tr_wa2 = g.square().sum();
  const double tr_wawa = WA.squaredNorm();
  const Eigen::VectorXd xb = X.X * beta;
  const Eigen::VectorXd a = WA * xb;
  const double s2 = fit.sigma2;

  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k + 2, k + 2);
  info.topLeftCorner(k, k) = X.X.transpose() * X.X / s2;
  const Eigen::VectorXd xa = X.X.transpose() * a / s2;
  info.block(0, k, k, 1) = xa;
  info.block(k, 0, 1, k) = xa.transpose();
  info(k, k) = tr_wa2 + tr_wawa + a.squaredNorm() / s2;
  info(k, k + 1) = info(k + 1, k) = tr_wa / s2;
  info(k + 1, k + 1) = static_cast<double>(n) / (2.0 * s2 * s2);

  Eigen::MatrixXd cov;
  if (opt.fixed_rho) {
    Eigen::MatrixXd sub(k + 1, k + 1);
    sub.topLeftCorner(k, k) = info.topLeftCorner(k, k);
    sub.block(0, k, k, 1).setZero();
    sub.block(k, 0, 1, k).setZero();
    sub(k, k) = info(k + 1, k + 1);
    const Eigen::MatrixXd c = invert_information(sub, "lag model");
    cov = Eigen::MatrixXd::Zero(k + 2, k + 2);
    cov.topLeftCorner(k, k) = c.topLeftCorner(k, k);
  } else {
    cov = invert_information(info, "lag model");
  }
  fill_coefficients(fit, beta, cov.diagonal().head(k));
  fit.rho = param(rho, std::sqrt(std::max(cov(k, k), 0.0)));
  if (opt.keep_resolvent) fit.resolvent = std::move(B);
  return fit;
}

// ---- error model ----

namespace {

struct ErrorProblem {
  const Eigen::VectorXd& y;
  const DesignMatrix& X;
  const SpatialOperator& op;
  Eigen::VectorXd wy;
  Eigen::MatrixXd wx;

  ErrorProblem(const Eigen::VectorXd& y_, const DesignMatrix& X_, const SpatialOperator& op_)
      : y(y_), X(X_), op(op_), wy(op_.weights().lag(y_)), wx(op_.weights().lag(X_.X)) {}

  struct At {
    Eigen::VectorXd beta, e;
    Eigen::MatrixXd xs;
    QrLeastSquares qr;
  };

  At solve(double lambda) const {
    Eigen::MatrixXd xs = X.X - lambda * wx;
    QrLeastSquares qr(xs, X.names);
    const Eigen::VectorXd ys = y - lambda * wy;
    Eigen::VectorXd beta = qr.solve(ys);
    Eigen::VectorXd e = ys - xs * beta;
    return {std::move(beta), std::move(e), std::move(xs), std::move(qr)};
  }

  double concentrated(double lambda) const {
    const double n = static_cast<double>(y.size());
    const double s = solve(lambda).e.squaredNorm() / n;
    if (!(s > 0.0)) return std::numeric_limits<double>::infinity();
    return -0.5 * n * std::log(s) + op.log_det(lambda);
  }
};

}  // namespace

double sem_concentrated_loglik(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op,
                               double lambda) {
  check_inputs(y, X, op.size());
  return ErrorProblem(y, X, op).concentrated(lambda);
}

SpatialFit fit_sem(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op,
                   const SemOptions& opt) {
  check_inputs(y, X, op.size());
  const Eigen::Index n = y.size();
  ErrorProblem ep(y, X, op);

  SpatialFit fit;
  fit.kind = SpatialKind::SEM;
  fit.names = X.names;
  fit.n = n;
  const double lo = op.lower_bound(kBoundEps), hi = op.upper_bound(kBoundEps);
  fit.convergence.bracket_lo = lo;
  fit.convergence.bracket_hi = hi;

  double lambda;
  if (opt.fixed_lambda) {
    lambda = *opt.fixed_lambda;
    if (!(lambda > lo - kBoundEps && lambda < hi + kBoundEps))
      throw DomainError("fixed lambda outside the feasible interval");
    fit.convergence.note = "lambda fixed";
  } else {
    auto m = maximize_1d([&](double l) { return ep.concentrated(l); }, lo, hi, opt.grid_points, opt.tolerance);
    if (!m.converged) throw_nonconvergence("lambda", m);
    lambda = m.x;
    fit.convergence.evaluations = m.evaluations;
    fit.convergence.bracket_lo = m.lo;
    fit.convergence.bracket_hi = m.hi;
  }

  auto at = ep.solve(lambda);
  // Residuals on the original scale, u = y - X beta.
  fit.residuals = y - X.X * at.beta;
  fit.sigma2 = at.e.squaredNorm() / static_cast<double>(n);
  if (!(fit.sigma2 > 0.0)) throw SingularityError("error model fits the data exactly");
  fit.log_likelihood = full_loglik(n, fit.sigma2, op.log_det(lambda));

  const double s2 = fit.sigma2;
  const Eigen::MatrixXd cov_beta = at.qr.xtx_inv() * s2;
  fill_coefficients(fit, at.beta, cov_beta.diagonal());

  if (opt.fixed_lambda) {
    fit.lambda = param(lambda, 0.0);
  } else {
    const Eigen::MatrixXd B = op.resolvent(lambda);
    const Eigen::MatrixXd WB = op.weights().lag(B);
    const Eigen::VectorXd& om = op.eigenvalues();
    const Eigen::ArrayXd g = om.array() / (1.0 - lambda * om.array());
    Eigen::Matrix2d info;
    info(0, 0) = g.square().sum() + WB.squaredNorm();
    info(0, 1) = info(1, 0) = g.sum() / s2;
    info(1, 1) = static_cast<double>(n) / (2.0 * s2 * s2);
    const Eigen::MatrixXd c = invert_information(info, "error model");
    fit.lambda = param(lambda, std::sqrt(std::max(c(0, 0), 0.0)));
  }
  return fit;
}

// ---- general model ----

namespace {

struct SacProblem {
  const Eigen::VectorXd& y;
  const DesignMatrix& X;
  const SpatialOperator& op;
  Eigen::VectorXd wy, wwy;
  Eigen::MatrixXd wx;
  int inner_grid;
  double tolerance;

  SacProblem(const Eigen::VectorXd& y_, const DesignMatrix& X_, const SpatialOperator& op_, int grid, double tol)
      : y(y_), X(X_), op(op_), inner_grid(grid), tolerance(tol) {
    const auto& w = op.weights();
    wy = w.lag(y);
    wwy = w.lag(wy);
    wx = w.lag(X.X);
  }

  struct Inner {
    double rho = 0.0;
    double value = 0.0;
    bool converged = true;
  };

  Inner profile(double lambda) const {
    LagProblem lp(y - lambda * wy, wy - lambda * wwy, X.X - lambda * wx, X.names);
    const double lo = op.lower_bound(kBoundEps), hi = op.upper_bound(kBoundEps);
    auto m = maximize_1d([&](double r) { return lp.concentrated(r, op); }, lo, hi, inner_grid, tolerance);
    return {m.x, m.f + op.log_det(lambda), m.converged};
  }

  // Full log-likelihood at theta = (beta, rho, lambda, sigma2).
  double loglik(const Eigen::VectorXd& theta) const {
    const Eigen::Index k = X.X.cols();
    const double rho = theta[k], lambda = theta[k + 1], s2 = theta[k + 2];
    if (!(s2 > 0.0)) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd u = y - rho * wy - X.X * theta.head(k);
    const Eigen::VectorXd e = u - lambda * op.weights().lag(u);
    const double n = static_cast<double>(y.size());
    return -0.5 * n * std::log(2.0 * std::numbers::pi * s2) + op.log_det(rho) + op.log_det(lambda) -
           e.squaredNorm() / (2.0 * s2);
  }
};

}  // namespace

double sac_profile_loglik(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op, double lambda,
                          double* rho_out) {
  check_inputs(y, X, op.size());
  SacProblem sp(y, X, op, SacOptions{}.inner_grid, SacOptions{}.tolerance);
  auto r = sp.profile(lambda);
  if (rho_out) *rho_out = r.rho;
  return r.value;
}

SpatialFit fit_sac(const Eigen::VectorXd& y, const DesignMatrix& X, const SpatialOperator& op,
                   const SacOptions& opt) {
  check_inputs(y, X, op.size());
  const Eigen::Index n = y.size();
  const Eigen::Index k = X.X.cols();
  SacProblem sp(y, X, op, opt.inner_grid, opt.tolerance);
  const double lo = op.lower_bound(kBoundEps), hi = op.upper_bound(kBoundEps);

  bool inner_ok = true;
  auto outer = maximize_1d(
      [&](double l) {
        auto r = sp.profile(l);
        inner_ok = inner_ok && r.converged;
        return r.value;
      },
      lo, hi, opt.outer_grid, opt.tolerance);
  if (!outer.converged || !inner_ok) throw_nonconvergence("lambda/rho", outer);

  // Starts from the nested one-parameter optima, so the joint maximum
  // never falls below either restricted model.
  double lambda = outer.x;
  double best = outer.f;
  SemOptions so;
  so.tolerance = opt.tolerance;
  const double lambda_sem = fit_sem(y, X, op, so).lambda->estimate;
  for (double cand : {0.0, lambda_sem}) {
    const double v = sp.profile(cand).value;
    if (v > best) {
      best = v;
      lambda = cand;
    }
  }
  const auto inner = sp.profile(lambda);
  const double rho = inner.rho;

  const Eigen::VectorXd wy_l = sp.wy - lambda * sp.wwy;
  const Eigen::MatrixXd xl = X.X - lambda * sp.wx;
  LagProblem lp(y - lambda * sp.wy, wy_l, xl, X.names);
  const Eigen::VectorXd beta = lp.b0 - rho * lp.bL;
  const Eigen::VectorXd e = lp.e0 - rho * lp.eL;

  SpatialFit fit;
  fit.kind = SpatialKind::SAC;
  fit.names = X.names;
  fit.n = n;
  fit.sigma2 = e.squaredNorm() / static_cast<double>(n);
  if (!(fit.sigma2 > 0.0)) throw SingularityError("general model fits the data exactly");
  fit.residuals = y - rho * sp.wy - X.X * beta;
  fit.log_likelihood = full_loglik(n, fit.sigma2, op.log_det(rho) + op.log_det(lambda));
  fit.convergence.evaluations = outer.evaluations;
  fit.convergence.bracket_lo = outer.lo;
  fit.convergence.bracket_hi = outer.hi;

  // Central-difference Hessian of the full log-likelihood.
  const Eigen::Index p = k + 3;
  Eigen::VectorXd theta(p);
  theta << beta, rho, lambda, fit.sigma2;
  Eigen::VectorXd h(p);
  const double sd = std::sqrt(fit.sigma2);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double scale = X.X.col(j).norm() / std::sqrt(static_cast<double>(n));
    h[j] = 1e-4 * std::max(std::abs(beta[j]), sd / std::max(scale, 1e-300));
  }
  h[k] = h[k + 1] = 1e-4;
  h[k + 2] = 1e-4 * fit.sigma2;
  Eigen::MatrixXd H(p, p);
  const double f0 = sp.loglik(theta);
  for (Eigen::Index i = 0; i < p; ++i) {
    Eigen::VectorXd t = theta;
    t[i] = theta[i] + h[i];
    const double fp = sp.loglik(t);
    t[i] = theta[i] - h[i];
    const double fm = sp.loglik(t);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      auto f = [&](double si, double sj) {
        Eigen::VectorXd u = theta;
        u[i] += si * h[i];
        u[j] += sj * h[j];
        return sp.loglik(u);
      };
      H(i, j) = H(j, i) = (f(1, 1) - f(1, -1) - f(-1, 1) + f(-1, -1)) / (4.0 * h[i] * h[j]);
    }
  }
  if (!H.allFinite()) throw ConvergenceError("general model Hessian is not finite at the optimum");
  Eigen::LDLT<Eigen::MatrixXd> ldlt(-H);
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
    std::ostringstream msg;
    msg << "general model likelihood is flat or ridge-like at rho=" << rho << ", lambda=" << lambda
        << "; the two spatial parameters are not separately identified";
    throw ConvergenceError(msg.str());
  }
  const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
  fill_coefficients(fit, beta, cov.diagonal().head(k));
  fit.rho = param(rho, std::sqrt(std::max(cov(k, k), 0.0)));
  fit.lambda = param(lambda, std::sqrt(std::max(cov(k + 1, k + 1), 0.0)));
  fit.convergence.note = "standard errors from numerical Hessian";
  return fit;
}

// ---- GS2SLS ----

SpatialFit fit_gs2sls_white(const Eigen::VectorXd& y, const DesignMatrix& X, const weights::ContiguityWeights& w,
                            const Gs2slsOptions& opt) {
  const Eigen::Index n = y.size();
  check_inputs(y, X, static_cast<Eigen::Index>(w.size()));
  const Eigen::Index k = X.X.cols();

  std::vector<Eigen::Index> lagged;
  for (Eigen::Index j = 0; j < k; ++j) {
    const auto c = X.X.col(j);
    if ((c.array() - c[0]).abs().maxCoeff() > 0.0) lagged.push_back(j);
  }
  const Eigen::Index m = static_cast<Eigen::Index>(lagged.size());
  const Eigen::Index l = k + m * (opt.second_order_lags ? 2 : 1);
  Eigen::MatrixXd H(n, l);
  H.leftCols(k) = X.X;
  Eigen::MatrixXd xl(n, m);
  for (Eigen::Index j = 0; j < m; ++j) xl.col(j) = X.X.col(lagged[static_cast<std::size_t>(j)]);
  const Eigen::MatrixXd wx = w.lag(xl);
  H.middleCols(k, m) = wx;
  if (opt.second_order_lags) H.rightCols(m) = w.lag(wx);

  // Drop instruments that are exact linear combinations of earlier ones
  // (e.g. lags of dummies that span the same space).
  Eigen::VectorXd hs = H.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < l; ++j)
    if (!(hs[j] > 0.0)) hs[j] = 1.0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> hqr(H * hs.cwiseInverse().asDiagonal());
  hqr.setThreshold(1e-10);
  const Eigen::Index rank = hqr.rank();
  if (rank < k + 1) throw SingularityError("instrument set [X, WX] has too few independent columns");
  Eigen::MatrixXd Q = hqr.householderQ() * Eigen::MatrixXd::Identity(n, rank);

  Eigen::MatrixXd Z(n, k + 1);
  Z.leftCols(k) = X.X;
  Z.col(k) = w.lag(y);
  const Eigen::MatrixXd Zhat = Q * (Q.transpose() * Z);

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Zhat);
  const auto& sv = svd.singularValues();
  const double cond = sv[0] / sv[sv.size() - 1];
  if (!(sv[sv.size() - 1] > 0.0) || cond > 1e10)
    throw SingularityError("projected regressors are nearly singular (weak instruments); condition number " +
                           std::to_string(cond));

  std::vector<std::string> names = X.names;
  names.push_back("rho");
  QrLeastSquares qr(Zhat, names);
  const Eigen::VectorXd delta = qr.solve(y);
  const Eigen::VectorXd e = y - Z * delta;
  const Eigen::MatrixXd bread = qr.xtx_inv();
  const Eigen::MatrixXd meat = Zhat.transpose() * e.array().square().matrix().asDiagonal() * Zhat;
  const double dof = static_cast<double>(n) / static_cast<double>(n - (k + 1));
  const Eigen::MatrixXd cov = bread * meat * bread * dof;

  SpatialFit fit;
  fit.kind = SpatialKind::GS2SLS_WHITE;
  fit.names = X.names;
  fit.n = n;
  fill_coefficients(fit, delta.head(k), cov.diagonal().head(k));
  fit.rho = param(delta[k], std::sqrt(std::max(cov(k, k), 0.0)));
  fit.residuals = e;
  fit.sigma2 = e.squaredNorm() / static_cast<double>(n);
  fit.convergence.note = "HC1 sandwich covariance";
  return fit;
}

// ---- LM diagnostics ----

namespace {

LmStatistic chi1(double stat) {
  stat = std::max(stat, 0.0);
  return {stat, stats::chi_squared_upper_p(stat, 1.0)};
}

}  // namespace

LmReport lm_tests(const Eigen::VectorXd& y, const DesignMatrix& X, const weights::ContiguityWeights& w) {
  check_inputs(y, X, static_cast<Eigen::Index>(w.size()));
  const Eigen::VectorXd fitted = X.X * QrLeastSquares(X.X, X.names).solve(y);
  return lm_tests(Eigen::VectorXd(y - fitted), fitted, X, w);
}

LmReport lm_tests(const Eigen::VectorXd& e, const Eigen::VectorXd& fitted, const DesignMatrix& X,
                  const weights::ContiguityWeights& w) {
  check_inputs(e, X, static_cast<Eigen::Index>(w.size()));
  if (fitted.size() != e.size()) throw DimensionError("residuals and fitted values differ in length");
  const double n = static_cast<double>(e.size());
  QrLeastSquares qr(X.X, X.names);
  const double s2 = e.squaredNorm() / n;
  if (!(s2 > 0.0)) throw SingularityError("OLS residuals are identically zero");
  const double T = w.trace_wtw_plus_ww();

  const Eigen::VectorXd we = w.lag(e);
  const Eigen::VectorXd wxb = w.lag(fitted);
  const double d_err = e.dot(we) / s2;
  const double d_lag = (e.dot(wxb) + e.dot(we)) / s2;
  const Eigen::VectorXd mwxb = wxb - X.X * qr.solve(wxb);
  const double D = mwxb.squaredNorm() / s2 + T;

  LmReport r;
  r.lm_error = chi1(d_err * d_err / T);
  r.lm_lag = chi1(d_lag * d_lag / D);
  const double re = d_err - (T / D) * d_lag;
  r.robust_lm_error = chi1(re * re / (T - T * T / D));
  const double rl = d_lag - d_err;
  r.robust_lm_lag = chi1(rl * rl / (D - T));
  return r;
}

LmStatistic lm_residual_autocorr(const SpatialFit& sar, const SpatialOperator& op) {
  if (!sar.rho || sar.kind != SpatialKind::SAR) throw PreconditionError("residual autocorrelation test needs a lag-model fit");
  if (sar.residuals.size() != op.size()) throw DimensionError("fit and weight matrix have different sizes");
  const auto& w = op.weights();
  const double n = static_cast<double>(sar.residuals.size());
  const Eigen::VectorXd& e = sar.residuals;
  const double s2 = e.squaredNorm() / n;
  const double score = e.dot(w.lag(e)) / s2;

  const double rho = sar.rho->estimate;
  const Eigen::MatrixXd B = sar.resolvent ? *sar.resolvent : op.resolvent(rho);
  const Eigen::MatrixXd WA = w.lag(B);
  // tr(W WA) + tr(W' WA) = sum_ij w_ij (WA_ji + WA_ij)
  double t21 = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto nb = w.neighbors(i);
    auto wt = w.row_weights(i);
    for (std::size_t c = 0; c < nb.size(); ++c) {
      const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(nb[c]);
      t21 += wt[c] * (WA(b, a) + WA(a, b));
    }
  }
  const double t22 = w.trace_wtw_plus_ww();
  const double var_rho = sar.rho->se * sar.rho->se;
  const double denom = t22 - t21 * t21 * var_rho;
  if (!(denom > 0.0)) throw SingularityError("residual autocorrelation test variance is not positive");
  return chi1(score * score / denom);
}

// ---- impacts ----

const Impact& ImpactMeasures::at(const std::string& variable) const {
  for (const auto& r : rows)
    if (r.variable == variable) return r;
  throw SchemaError("no impact row for '" + variable + "'");
}

ImpactMeasures impacts(const std::vector<std::string>& names, const Eigen::VectorXd& beta, double rho,
                       const Eigen::MatrixXd& resolvent) {
  if (!(std::abs(rho) < 1.0)) throw SingularityError("impacts need |rho| < 1");
  if (resolvent.rows() != resolvent.cols() || resolvent.rows() == 0)
    throw DimensionError("resolvent must be square and non-empty");
  if (static_cast<Eigen::Index>(names.size()) != beta.size()) throw DimensionError("names and beta differ in length");
  const double n = static_cast<double>(resolvent.rows());
  const double avg_diag = resolvent.trace() / n;
  const double avg_total = resolvent.sum() / n;
  ImpactMeasures out;
  out.rho = rho;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == regression::kIntercept) continue;
    const double b = beta[static_cast<Eigen::Index>(j)];
    Impact im;
    im.variable = names[j];
    im.direct = b * avg_diag;
    im.total = b * avg_total;
    im.indirect = im.total - im.direct;
    out.rows.push_back(im);
  }
  return out;
}

ImpactMeasures impacts(const SpatialFit& fit, const SpatialOperator& op) {
  if (!fit.rho) throw PreconditionError("impacts need a fit with a spatial lag");
  const double rho = fit.rho->estimate;
  if (!(std::abs(rho) < 1.0)) throw SingularityError("impacts need |rho| < 1");
  if (fit.resolvent && fit.resolvent->rows() == op.size()) return impacts(fit.names, fit.beta, rho, *fit.resolvent);
  return impacts(fit.names, fit.beta, rho, op.resolvent(rho));
}

}  // namespace slrgrowth::spatial
