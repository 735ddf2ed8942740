#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "slrgrowth/dataset.hpp"
#include "slrgrowth/regression.hpp"
#include "slrgrowth/weights.hpp"

namespace fixtures {

using slrgrowth::regression::DesignMatrix;
using slrgrowth::weights::ContiguityWeights;

inline ContiguityWeights path(std::size_t n) {
  std::vector<slrgrowth::weights::IndexPair> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return ContiguityWeights::build(n, e);
}

inline ContiguityWeights lattice(std::size_t rows, std::size_t cols) {
  return ContiguityWeights::build(rows * cols, slrgrowth::weights::rook_lattice(rows, cols));
}

inline Eigen::VectorXd normals(std::mt19937_64& rng, Eigen::Index n, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

/// Intercept plus k standard-normal covariates named x1..xk.
inline DesignMatrix random_design(std::mt19937_64& rng, Eigen::Index n, int k) {
  std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
  for (int j = 1; j <= k; ++j) cols.emplace_back("x" + std::to_string(j), normals(rng, n));
  return DesignMatrix::with_intercept(cols);
}

/// (I - rho W)^{-1} v by dense solve, independent of the library's solvers.
inline Eigen::VectorXd lag_solve(const ContiguityWeights& w, double rho, const Eigen::VectorXd& v) {
  const Eigen::Index n = v.size();
  const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - rho * w.dense();
  return A.fullPivLu().solve(v);
}

/// A complete county record with every modelling field set.
inline slrgrowth::dataset::CountyRecord county(const std::string& fips, double x_km = 0.0, double y_km = 0.0,
                                              bool coastal = false) {
  using slrgrowth::dataset::Cell;
  slrgrowth::dataset::CountyRecord r;
  r.fips = fips;
  r.state = "S" + fips.substr(0, 2);
  r.x_km = Cell::of(x_km);
  r.y_km = Cell::of(y_km);
  r.coastal = Cell::of(coastal ? 1.0 : 0.0);
  r.coast_distance_km = Cell::of(coastal ? 5.0 : 300.0);
  for (int y : slrgrowth::dataset::income_years()) r.income[y] = Cell::of(20000.0 + 100.0 * (y - 1980));
  r.gov_expenditure_pc = Cell::of(500.0);
  r.tax_income_pc = Cell::of(600.0);
  r.population_density = Cell::of(50.0);
  r.urban = Cell::of(0.0);
  r.rural = Cell::of(1.0);
  r.adherents_pct = Cell::of(50.0);
  r.catholics_pct = Cell::of(15.0);
  r.evangelical_pct = Cell::of(20.0);
  r.mainline_pct = Cell::of(10.0);
  r.religious_diversity = Cell::of(0.6);
  r.education_pct = Cell::of(17.0);
  r.nonwhites_pct = Cell::of(10.0);
  r.highway = Cell::of(0.0);
  r.right_to_work = Cell::of(1.0);
  r.amenities = Cell::of(0.0);
  r.region = slrgrowth::dataset::Region::Southeast;
  r.adherents_1980_pct = Cell::of(49.0);
  r.population_density_1980 = Cell::of(45.0);
  return r;
}

/// Fresh, empty directory under the system temp dir.
inline std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("slrgrowth_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace fixtures
