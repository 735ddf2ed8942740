#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace slrgrowth::regression {

/// Named regressors, one column per covariate. The intercept, when
/// present, is the first column and is named "(Intercept)".
struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<std::string> names;

  static DesignMatrix intercept_only(Eigen::Index n);
  /// Builds [1, columns...] from named vectors of equal length.
  static DesignMatrix with_intercept(const std::vector<std::pair<std::string, Eigen::VectorXd>>& columns);
  static DesignMatrix from_columns(const std::vector<std::pair<std::string, Eigen::VectorXd>>& columns);

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index cols() const { return X.cols(); }
  bool has_intercept() const;
  /// Index of a named column, or -1.
  Eigen::Index find(const std::string& name) const;
  DesignMatrix select_rows(const std::vector<std::size_t>& rows) const;
  DesignMatrix drop(const std::vector<std::string>& columns) const;
};

inline constexpr const char* kIntercept = "(Intercept)";

struct OlsFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta, se, t, p;
  Eigen::MatrixXd cov;
  Eigen::VectorXd residuals, fitted;
  double sigma2 = 0.0;  // e'e / (n - k)
  double r2 = 0.0, r2_adj = 0.0;
  double f_stat = 0.0, f_p = 0.0;
  Eigen::Index n = 0, k = 0;
  double log_likelihood = 0.0;

  Eigen::Index dof() const { return n - k; }
  double coef(const std::string& name) const;
  Eigen::Index index_of(const std::string& name) const;
};

/// Column-equilibrated, column-pivoted QR of a design, reusable across
/// right-hand sides. Throws SingularityError naming the collinear columns
/// when X is rank deficient.
class QrLeastSquares {
 public:
  explicit QrLeastSquares(const Eigen::MatrixXd& X, const std::vector<std::string>& names = {});
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  /// (X'X)^{-1}
  Eigen::MatrixXd xtx_inv() const;
  Eigen::Index cols() const { return scale_.size(); }

 private:
  Eigen::VectorXd scale_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

/// Least-squares solution of a column-equilibrated, column-pivoted QR.
/// Throws SingularityError naming the collinear columns when X is rank
/// deficient.
struct LeastSquares {
  Eigen::VectorXd beta;
  Eigen::MatrixXd xtx_inv;  // (X'X)^{-1}
};
LeastSquares least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const std::vector<std::string>& names = {});

OlsFit ols(const Eigen::VectorXd& y, const DesignMatrix& X);

struct IvFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta, se, z, p;
  Eigen::MatrixXd cov;
  Eigen::VectorXd residuals;  // y - X beta, with the original regressors
  double sigma2 = 0.0;
  Eigen::Index n = 0, k = 0;
};

/// Two-stage least squares. `instruments` must contain every exogenous
/// regressor plus the excluded instruments.
IvFit iv_2sls(const Eigen::VectorXd& y, const DesignMatrix& regressors, const DesignMatrix& instruments);

struct TestResult {
  double statistic = 0.0;
  double p = 1.0;
  double dof = 0.0;
};

/// n R^2 of the IV residuals regressed on the full instrument set;
/// chi-squared with (instruments - regressors) degrees of freedom.
TestResult sargan_test(const Eigen::VectorXd& iv_residuals, const DesignMatrix& instruments, Eigen::Index regressors);

/// Control-function (augmented regression) Wu-Hausman test for a single
/// endogenous regressor. `exogenous` includes the intercept; `excluded`
/// holds the excluded instruments.
TestResult wu_hausman(const Eigen::VectorXd& y, const DesignMatrix& exogenous, const Eigen::VectorXd& endogenous,
                      const DesignMatrix& excluded);

/// 1 - (1 + T beta)^(1/T).
double convergence_rate(double beta, double years);

struct ThreeSlsInput {
  Eigen::VectorXd g;        // growth over the study period
  Eigen::VectorXd y0;       // log income at the start year
  Eigen::VectorXd g_prev;   // growth over the preceding period
  Eigen::VectorXd y0_prev;  // log income at the preceding start year
  DesignMatrix instruments; // excluded instruments, no intercept
  DesignMatrix controls;    // third-stage regressors, intercept first
  double years = 22.0;
};

struct ThreeSlsFit {
  OlsFit stage1;  // delta y0 on [1, instruments]
  OlsFit stage2;  // delta g on [1, predicted delta y0]
  double beta = 0.0;
  double beta_se = 0.0;
  double beta_p = 1.0;
  Eigen::VectorXd pi;  // g - beta * y0
  OlsFit stage3;
  std::optional<TestResult> sargan;  // absent when exactly identified
  TestResult wu_hausman;
  double convergence_rate = 0.0;  // NaN when 1 + T beta <= 0
};

ThreeSlsFit three_sls(const ThreeSlsInput& in);

}  // namespace slrgrowth::regression
