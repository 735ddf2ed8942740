#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "slrgrowth/regression.hpp"

namespace slrgrowth::matching {

enum class PropensityKind { logit, probit, lpm };
PropensityKind parse_propensity_kind(std::string_view s);
std::string_view kind_name(PropensityKind k);

struct PropensityModel {
  PropensityKind kind = PropensityKind::logit;
  std::vector<std::string> names;
  Eigen::VectorXd coefficients;
  Eigen::VectorXd scores;
  double deviance = 0.0;
  int iterations = 0;
  bool converged = true;
  bool separation = false;  // fitted probabilities collapsed to 0 or 1
  bool clipped = false;     // lpm scores outside [0, 1] were clipped
  std::string note;
};

/// Propensity scores by IRLS (logit, probit) or least squares (lpm).
/// `d` holds 0/1 treatment indicators.
PropensityModel fit_propensity(const Eigen::VectorXd& d, const regression::DesignMatrix& X, PropensityKind kind);

enum class CaliperMode {
  score_sd,      // |p_t - p_c| <= caliper * pooled SD of the scores
  covariate_sd,  // |x_tj - x_cj| <= caliper * SD(x_j) for every covariate
};
CaliperMode parse_caliper_mode(std::string_view s);

struct MatchConfig {
  double caliper = 0.25;
  CaliperMode mode = CaliperMode::score_sd;
  int controls_per_treated = 1;
  bool replace = false;
  std::uint64_t seed = 20190101;
};

struct MatchedSet {
  std::size_t treated = 0;
  std::vector<std::size_t> controls;
};

struct Matching {
  std::vector<MatchedSet> sets;  // in matching order
  std::size_t n_treated = 0;     // treated units offered for matching
  double score_caliper = 0.0;    // absolute score distance bound (score_sd mode)
  std::size_t matched() const { return sets.size(); }
};

/// Greedy nearest-score matching in a seeded random order of the treated.
/// Equal distances are broken by per-control priorities drawn from the
/// same seed. `covariates` (one row per unit) is needed only in
/// covariate_sd mode.
Matching match_units(const Eigen::VectorXd& scores, const std::vector<bool>& treated, const MatchConfig& config,
                     const Eigen::MatrixXd& covariates = {});

struct Effect {
  double estimate = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p = 1.0;
  std::size_t n_matched = 0;
};

/// Average effect over matched treated with the matched-pairs variance
/// sum (tau_i - T)^2 / N_u^2. Throws PreconditionError when nothing matched.
Effect att(const Matching& m, const Eigen::VectorXd& y);

struct BalanceRow {
  std::string variable;
  double mean_treated = 0.0;
  double mean_control = 0.0;
  double t_p = 1.0;
  bool zero_variance = false;
  double ks_d = 0.0;
  double ks_p = 1.0;
  double ks_boot_p = 1.0;
};

struct BalanceReport {
  std::vector<BalanceRow> rows;
  /// True when no test rejects at `alpha`.
  bool balanced(double alpha = 0.05) const;
};

/// Welch t, asymptotic KS and bootstrap KS (pooled resampling under the
/// null) for every column of X over the matched sample.
BalanceReport balance(const Matching& m, const regression::DesignMatrix& X, std::uint64_t seed,
                      int bootstrap = 1000);

}  // namespace slrgrowth::matching
