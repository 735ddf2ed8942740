#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slrgrowth/regression.hpp"
#include "slrgrowth/weights.hpp"

namespace slrgrowth::spatial {

/// W together with its spectrum. The eigenvalues are computed once and
/// shared read-only by every likelihood evaluation; the dense copy of W is
/// built lazily on first use.
class SpatialOperator {
 public:
  explicit SpatialOperator(weights::ContiguityWeights w);

  const weights::ContiguityWeights& weights() const { return w_; }
  const Eigen::VectorXd& eigenvalues() const { return eig_; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(w_.size()); }

  /// log|I - a W| = sum log(1 - a w_i).
  double log_det(double a) const;
  /// Feasible interval (1/w_min, 1/w_max) shrunk by `eps` at both ends.
  double lower_bound(double eps = 1e-6) const { return 1.0 / eig_.minCoeff() + eps; }
  double upper_bound(double eps = 1e-6) const { return 1.0 / eig_.maxCoeff() - eps; }

  /// (I - a W)^{-1}, dense.
  Eigen::MatrixXd resolvent(double a) const;

 private:
  weights::ContiguityWeights w_;
  Eigen::VectorXd eig_;
};

enum class SpatialKind { SAR, SEM, SAC, GS2SLS_WHITE };
std::string_view kind_name(SpatialKind k);

struct ConvergenceInfo {
  bool converged = true;
  int evaluations = 0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  std::string note;
};

struct SpatialParameter {
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
};

struct SpatialFit {
  SpatialKind kind = SpatialKind::SAR;
  std::vector<std::string> names;
  Eigen::VectorXd beta, se, z, p;
  std::optional<SpatialParameter> rho;
  std::optional<SpatialParameter> lambda;
  double sigma2 = 0.0;
  std::optional<double> log_likelihood;
  Eigen::VectorXd residuals;
  Eigen::Index n = 0;
  ConvergenceInfo convergence;
  /// (I - rho W)^{-1} at the estimate, when it was formed for the standard
  /// errors. Callers may drop it to release memory.
  std::shared_ptr<const Eigen::MatrixXd> resolvent;

  Eigen::Index index_of(const std::string& name) const;
};

struct SarOptions {
  std::optional<double> fixed_rho;
  double tolerance = 1e-8;
  int grid_points = 101;
  bool keep_resolvent = true;
};

/// Concentrated log-likelihood of the lag model at rho, up to the
/// constant -n/2 (log 2 pi + 1).
double sar_concentrated_loglik(const Eigen::VectorXd& y, const regression::DesignMatrix& X,
                               const SpatialOperator& op, double rho);

SpatialFit fit_sar(const Eigen::VectorXd& y, const regression::DesignMatrix& X, const SpatialOperator& op,
                   const SarOptions& opt = {});

struct SemOptions {
  std::optional<double> fixed_lambda;
  double tolerance = 1e-8;
  int grid_points = 101;
};

double sem_concentrated_loglik(const Eigen::VectorXd& y, const regression::DesignMatrix& X,
                               const SpatialOperator& op, double lambda);

SpatialFit fit_sem(const Eigen::VectorXd& y, const regression::DesignMatrix& X, const SpatialOperator& op,
                   const SemOptions& opt = {});

struct SacOptions {
  double tolerance = 1e-7;
  int outer_grid = 41;
  int inner_grid = 41;
};

/// Profile log-likelihood of the general model with rho maximised out.
double sac_profile_loglik(const Eigen::VectorXd& y, const regression::DesignMatrix& X, const SpatialOperator& op,
                          double lambda, double* rho_out = nullptr);

SpatialFit fit_sac(const Eigen::VectorXd& y, const regression::DesignMatrix& X, const SpatialOperator& op,
                   const SacOptions& opt = {});

struct Gs2slsOptions {
  bool second_order_lags = false;  // add W^2 X to the instruments
};

/// Spatial two-stage least squares with instruments [X, WX] and a
/// heteroscedasticity-consistent (HC1) sandwich covariance.
SpatialFit fit_gs2sls_white(const Eigen::VectorXd& y, const regression::DesignMatrix& X,
                            const weights::ContiguityWeights& w, const Gs2slsOptions& opt = {});

struct LmStatistic {
  double statistic = 0.0;
  double p = 1.0;
};

struct LmReport {
  LmStatistic lm_error, lm_lag, robust_lm_error, robust_lm_lag;
};

/// Score tests on the OLS residuals of y on X.
LmReport lm_tests(const Eigen::VectorXd& y, const regression::DesignMatrix& X, const weights::ContiguityWeights& w);

/// Same tests from an existing OLS fit: residuals e and fitted values Xb, so y = Xb + e.
LmReport lm_tests(const Eigen::VectorXd& residuals, const Eigen::VectorXd& fitted, const regression::DesignMatrix& X,
                  const weights::ContiguityWeights& w);

/// Score test for remaining error autocorrelation in a fitted lag model.
LmStatistic lm_residual_autocorr(const SpatialFit& sar, const SpatialOperator& op);

struct Impact {
  std::string variable;
  double direct = 0.0;
  double indirect = 0.0;
  double total = 0.0;
};

struct ImpactMeasures {
  double rho = 0.0;
  std::vector<Impact> rows;
  const Impact& at(const std::string& variable) const;
};

/// Average direct, indirect and total impacts from the dense inverse
/// (I - rho W)^{-1}; the intercept is skipped.
ImpactMeasures impacts(const SpatialFit& fit, const SpatialOperator& op);
ImpactMeasures impacts(const std::vector<std::string>& names, const Eigen::VectorXd& beta, double rho,
                       const Eigen::MatrixXd& resolvent);

}  // namespace slrgrowth::spatial
