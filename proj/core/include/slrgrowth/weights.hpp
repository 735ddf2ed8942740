#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace slrgrowth::weights {

using IndexPair = std::pair<std::size_t, std::size_t>;

/// Row-standardized binary contiguity operator, stored as CSR rows.
///
/// The binary structure is symmetric (every adjacency or island link is
/// entered in both directions) and has a zero diagonal; after
/// standardization every row sums to one, so the total weight equals n.
/// Standardized values need not be symmetric. Instances are immutable.
class ContiguityWeights {
 public:
  ContiguityWeights() = default;

  /// Builds W over n units from undirected adjacency pairs plus island
  /// links. Throws PreconditionError if any unit ends up with no neighbour.
  static ContiguityWeights build(std::size_t n, std::span<const IndexPair> adjacency,
                                 std::span<const IndexPair> island_links = {});

  std::size_t size() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::span<const std::size_t> neighbors(std::size_t i) const;
  std::span<const double> row_weights(std::size_t i) const;
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }
  const std::vector<IndexPair>& island_links() const { return island_links_; }
  std::size_t nonzeros() const { return indices_.size(); }

  /// Wx.
  Eigen::VectorXd lag(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd lag(const Eigen::MatrixXd& x) const;
  /// Transpose product W'x.
  Eigen::VectorXd lag_transpose(const Eigen::VectorXd& x) const;

  Eigen::MatrixXd dense() const;
  Eigen::SparseMatrix<double> sparse() const;

  double total_weight() const { return s0_; }
  /// Cliff-Ord constants: S1 = 1/2 sum (w_ij + w_ji)^2, S2 = sum_i (w_i. + w_.i)^2.
  double s1() const { return s1_; }
  double s2() const { return s2_; }
  /// tr(W'W + WW), the LM-test normaliser.
  double trace_wtw_plus_ww() const { return trace_t_; }

  /// Eigenvalues of W in ascending order. They are real because W is
  /// similar to the symmetric D^{-1/2} A D^{-1/2}.
  Eigen::VectorXd eigenvalues() const;

  /// Restricts W to `keep` (in that order) and re-standardizes.
  /// Throws PreconditionError if a kept unit loses all neighbours.
  ContiguityWeights subset(std::span<const std::size_t> keep) const;

  /// Indices in `keep` that retain at least one neighbour inside the kept
  /// set, applied repeatedly until stable.
  std::vector<std::size_t> drop_isolates(std::vector<std::size_t> keep) const;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> indices_;
  std::vector<double> values_;
  std::vector<IndexPair> island_links_;
  double s0_ = 0.0, s1_ = 0.0, s2_ = 0.0, trace_t_ = 0.0;

  void finalize();
};

/// Adjacency given as id pairs; ids resolved against `ids`.
ContiguityWeights build_weights(const std::vector<std::string>& ids,
                                const std::vector<std::pair<std::string, std::string>>& adjacency,
                                const std::vector<std::pair<std::string, std::string>>& island_links);

/// Reads a two-column pair file (fips_a,fips_b).
std::vector<std::pair<std::string, std::string>> load_pairs(const std::string& path);
void write_pairs(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& pairs);

Eigen::VectorXd spatial_lag(const ContiguityWeights& w, const Eigen::VectorXd& x);

struct MoranResult {
  double statistic = 0.0;
  double expected = 0.0;
  double variance = 0.0;
  double z = 0.0;
  double p = 1.0;  // two-sided, normal approximation
};

/// Moran's I with moments under the randomization assumption. With three
/// units only the statistic and its expectation are defined; variance, z
/// and p are NaN.
MoranResult morans_i(const Eigen::VectorXd& x, const ContiguityWeights& w);

/// Rook-contiguity lattice of rows x cols cells, row-major ids.
std::vector<IndexPair> rook_lattice(std::size_t rows, std::size_t cols);

}  // namespace slrgrowth::weights
