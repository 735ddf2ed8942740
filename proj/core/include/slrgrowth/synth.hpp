#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slrgrowth/regression.hpp"
#include "slrgrowth/weights.hpp"

namespace slrgrowth::synth {

enum class ErrorLaw {
  normal,           // eps ~ N(0, sigma2)
  heteroscedastic,  // eps_i ~ N(0, sigma2 * x_i1), x_i1 the first non-constant covariate
};

enum class CovariateLaw {
  normal,       // N(0, 1)
  exponential,  // Exp(1)
};

/// Lattice data-generating process
///   y = (I - rho W)^{-1} (X beta + u),  u = (I - lambda W)^{-1} eps
/// on a rook-contiguity grid. beta[0] is the intercept.
struct DgpSpec {
  std::size_t rows = 20, cols = 20;
  double rho = 0.0;
  double lambda = 0.0;
  std::vector<double> beta = {1.0, 1.0, -0.5};
  double sigma2 = 1.0;
  ErrorLaw error_law = ErrorLaw::normal;
  CovariateLaw covariate_law = CovariateLaw::normal;
  std::optional<std::uint64_t> seed;

  std::size_t n() const { return rows * cols; }
};

/// Reads a DGP spec from an INI file with a single [dgp] section.
DgpSpec load_dgp_spec(const std::string& path);

struct SyntheticData {
  Eigen::VectorXd y;
  regression::DesignMatrix X;
  Eigen::VectorXd u;    // structural error (I - lambda W)^{-1} eps
  Eigen::VectorXd eps;  // innovations
  std::uint64_t seed = 0;
};

/// Draws replicate datasets for one spec, reusing the factorisations of
/// I - rho W and I - lambda W. Thread-safe: draws depend only on the seed.
class Generator {
 public:
  explicit Generator(DgpSpec spec);
  Generator(DgpSpec spec, weights::ContiguityWeights w);

  const DgpSpec& spec() const { return spec_; }
  const weights::ContiguityWeights& weights() const { return w_; }
  SyntheticData draw(std::uint64_t seed) const;
  /// Key/value record of the true parameters and laws.
  void write_truth(std::ostream& out) const;

 private:
  DgpSpec spec_;
  weights::ContiguityWeights w_;
  Eigen::MatrixXd lag_solver_;    // (I - rho W)^{-1}
  Eigen::MatrixXd error_solver_;  // (I - lambda W)^{-1}
  void prepare();
};

/// One draw with the spec's own seed (which must be set).
SyntheticData generate(const DgpSpec& spec);

struct NamedEstimate {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
};

struct NamedTest {
  std::string name;
  double p = 1.0;
};

struct ReplicationResult {
  std::vector<NamedEstimate> estimates;
  std::vector<NamedTest> tests;
};

using Estimator = std::function<ReplicationResult(const SyntheticData&, const weights::ContiguityWeights&)>;

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double rmse = 0.0;
  double empirical_sd = 0.0;
  double mean_se = 0.0;
  double coverage = 0.0;  // share of 95% normal intervals covering the truth
  std::size_t n = 0;
};

struct TestSummary {
  std::string name;
  double rejection_rate = 0.0;  // at alpha = 0.05
  std::size_t n = 0;
};

struct EvaluationReport {
  std::size_t replications = 0;
  std::size_t failures = 0;
  std::vector<ParameterSummary> parameters;
  std::vector<TestSummary> tests;
  std::vector<std::string> failure_messages;

  const ParameterSummary& parameter(const std::string& name) const;
  const TestSummary& test(const std::string& name) const;
};

/// Runs `estimator` on `replications` draws (seeds derived from the spec
/// seed). Estimator exceptions are counted as failures. `truth` maps
/// estimate names to their true values; estimates without a truth entry
/// are summarised with truth 0.
EvaluationReport evaluate(const Estimator& estimator, const Generator& gen, std::size_t replications,
                          const std::map<std::string, double>& truth, unsigned threads = 1);

/// Truth map for the built-in estimators: rho, lambda, and b0..bk.
std::map<std::string, double> truth_of(const DgpSpec& spec);

/// Built-in estimators: "sar", "sem", "sac", "gs2sls", "ols", "lm".
Estimator estimator_by_name(const std::string& name);

void write_evaluation_tsv(std::ostream& out, const EvaluationReport& report);

// ---- matching scenarios ----

struct MatchingSpec {
  std::size_t n = 600;
  double effect = 0.0;
  double treated_share = 0.3;
  std::uint64_t seed = 1;
};

struct MatchingData {
  Eigen::VectorXd y;
  Eigen::VectorXd d;
  regression::DesignMatrix X;  // intercept plus two covariates
};

/// Logit treatment assignment on two normal covariates; the outcome
/// depends weakly on the covariates plus `effect` for the treated.
MatchingData generate_matching(const MatchingSpec& spec);

// ---- endogeneity scenarios for the sequential 3SLS ----

struct GrowthSpec {
  std::size_t n = 500;
  double beta = -0.0333;
  double endogeneity = 0.5;  // correlation of first-stage and growth shocks
  std::size_t instruments = 2;
  std::uint64_t seed = 1;
};

struct GrowthData {
  Eigen::VectorXd g, y0, g_prev, y0_prev;
  regression::DesignMatrix instruments;  // no intercept
  regression::DesignMatrix controls;     // intercept plus one control
};

GrowthData generate_growth(const GrowthSpec& spec);

// ---- county-system fixture ----

/// A gridded stand-in for the county map: rectangular counties grouped
/// into rectangular states, a coast along the west, south and east edges,
/// tide-gauge stations in coastal counties and incomes generated from a
/// lag model of the growth equation.
struct CountySystemSpec {
  std::size_t rows = 48, cols = 64;
  double cell_km = 50.0;
  std::size_t state_block = 8;
  std::size_t incomplete = 9;
  std::size_t islands = 3;
  std::size_t stations = 94;
  std::size_t station_counties = 86;
  double station_trend_mean = 2.764;  // mm/year
  double station_trend_sd = 1.768;
  double rho = 0.458;
  double beta = -0.0333;
  double mean_growth = 0.0413;
  std::uint64_t seed = 20190101;
};

struct CountySystemFiles {
  std::string counties, stations, stations_window, adjacency, island_links, coast_order, depletion_groups;
};

/// Writes the fixture files into `dir` (created if needed).
CountySystemFiles write_county_system(const CountySystemSpec& spec, const std::string& dir);

}  // namespace slrgrowth::synth
