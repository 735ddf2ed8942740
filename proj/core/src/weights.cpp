#include "slrgrowth/weights.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <unordered_map>

#include "slrgrowth/csv.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::weights {

namespace {

double lookup(const std::vector<std::size_t>& offsets, const std::vector<std::size_t>& indices,
              const std::vector<double>& values, std::size_t i, std::size_t j) {
  auto b = indices.begin() + static_cast<std::ptrdiff_t>(offsets[i]);
  auto e = indices.begin() + static_cast<std::ptrdiff_t>(offsets[i + 1]);
  auto it = std::lower_bound(b, e, j);
  if (it == e || *it != j) return 0.0;
  return values[static_cast<std::size_t>(it - indices.begin())];
}

}  // namespace

ContiguityWeights ContiguityWeights::build(std::size_t n, std::span<const IndexPair> adjacency,
                                           std::span<const IndexPair> island_links) {
  std::vector<std::set<std::size_t>> nb(n);
  auto add = [&](const IndexPair& p) {
    if (p.first >= n || p.second >= n) throw PreconditionError("adjacency index out of range");
    if (p.first == p.second) throw PreconditionError("self-adjacency for unit " + std::to_string(p.first));
    nb[p.first].insert(p.second);
    nb[p.second].insert(p.first);
  };
  for (const auto& p : adjacency) add(p);
  for (const auto& p : island_links) add(p);

  ContiguityWeights w;
  w.offsets_.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (nb[i].empty()) throw PreconditionError("unit " + std::to_string(i) + " has no neighbours after island repair");
    w.offsets_[i + 1] = w.offsets_[i] + nb[i].size();
  }
  w.indices_.reserve(w.offsets_[n]);
  w.values_.reserve(w.offsets_[n]);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = 1.0 / static_cast<double>(nb[i].size());
    for (auto j : nb[i]) {
      w.indices_.push_back(j);
      w.values_.push_back(v);
    }
  }
  w.island_links_.assign(island_links.begin(), island_links.end());
  w.finalize();
  return w;
}

void ContiguityWeights::finalize() {
  const std::size_t n = size();
  s0_ = 0.0;
  s1_ = 0.0;
  trace_t_ = 0.0;
  std::vector<double> col_sums(n, 0.0), row_sums(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) {
      const std::size_t j = indices_[k];
      const double wij = values_[k];
      const double wji = lookup(offsets_, indices_, values_, j, i);
      s0_ += wij;
      s1_ += 0.5 * (wij + wji) * (wij + wji);
      trace_t_ += wij * wij + wij * wji;
      row_sums[i] += wij;
      col_sums[j] += wij;
    }
  }
  s2_ = 0.0;
  for (std::size_t i = 0; i < n; ++i) s2_ += (row_sums[i] + col_sums[i]) * (row_sums[i] + col_sums[i]);
}

std::span<const std::size_t> ContiguityWeights::neighbors(std::size_t i) const {
  return {indices_.data() + offsets_[i], degree(i)};
}

std::span<const double> ContiguityWeights::row_weights(std::size_t i) const {
  return {values_.data() + offsets_[i], degree(i)};
}

Eigen::VectorXd ContiguityWeights::lag(const Eigen::VectorXd& x) const {
  const std::size_t n = size();
  if (static_cast<std::size_t>(x.size()) != n) throw DimensionError("spatial lag: vector length differs from W");
  Eigen::VectorXd out(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) s += values_[k] * x[static_cast<Eigen::Index>(indices_[k])];
    out[static_cast<Eigen::Index>(i)] = s;
  }
  return out;
}

Eigen::MatrixXd ContiguityWeights::lag(const Eigen::MatrixXd& x) const {
  const std::size_t n = size();
  if (static_cast<std::size_t>(x.rows()) != n) throw DimensionError("spatial lag: matrix rows differ from W");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
      out.row(static_cast<Eigen::Index>(i)) += values_[k] * x.row(static_cast<Eigen::Index>(indices_[k]));
  }
  return out;
}

Eigen::VectorXd ContiguityWeights::lag_transpose(const Eigen::VectorXd& x) const {
  const std::size_t n = size();
  if (static_cast<std::size_t>(x.size()) != n) throw DimensionError("spatial lag: vector length differs from W");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
      out[static_cast<Eigen::Index>(indices_[k])] += values_[k] * x[static_cast<Eigen::Index>(i)];
  return out;
}

Eigen::MatrixXd ContiguityWeights::dense() const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(indices_[k])) = values_[k];
  return d;
}

Eigen::SparseMatrix<double> ContiguityWeights::sparse() const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(indices_.size());
  for (std::size_t i = 0; i < size(); ++i)
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k)
      t.emplace_back(static_cast<int>(i), static_cast<int>(indices_[k]), values_[k]);
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::SparseMatrix<double> s(n, n);
  s.setFromTriplets(t.begin(), t.end());
  return s;
}

Eigen::VectorXd ContiguityWeights::eigenvalues() const {
  const auto n = static_cast<Eigen::Index>(size());
  Eigen::MatrixXd sym = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < size(); ++i) {
    const double di = static_cast<double>(degree(i));
    for (std::size_t k = offsets_[i]; k < offsets_[i + 1]; ++k) {
      const double dj = static_cast<double>(degree(indices_[k]));
      sym(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(indices_[k])) = 1.0 / std::sqrt(di * dj);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw ConvergenceError("eigenvalue decomposition of W failed");
  return es.eigenvalues();
}

std::vector<std::size_t> ContiguityWeights::drop_isolates(std::vector<std::size_t> keep) const {
  for (;;) {
    std::vector<char> in(size(), 0);
    for (auto k : keep) in[k] = 1;
    std::vector<std::size_t> next;
    for (auto k : keep) {
      const auto nb = neighbors(k);
      if (std::any_of(nb.begin(), nb.end(), [&](std::size_t j) { return in[j] != 0; })) next.push_back(k);
    }
    if (next.size() == keep.size()) return next;
    keep = std::move(next);
  }
}

ContiguityWeights ContiguityWeights::subset(std::span<const std::size_t> keep) const {
  std::unordered_map<std::size_t, std::size_t> pos;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= size()) throw DimensionError("subset index out of range");
    pos.emplace(keep[i], i);
  }
  std::vector<IndexPair> adj;
  for (std::size_t a = 0; a < keep.size(); ++a) {
    for (auto j : neighbors(keep[a])) {
      auto it = pos.find(j);
      if (it != pos.end() && a < it->second) adj.emplace_back(a, it->second);
    }
  }
  std::vector<IndexPair> islands;
  for (const auto& [i, j] : island_links_) {
    auto a = pos.find(i), b = pos.find(j);
    if (a != pos.end() && b != pos.end()) islands.emplace_back(a->second, b->second);
  }
  // Island links are already part of the binary structure; pass them only as metadata.
  ContiguityWeights w = build(keep.size(), adj);
  w.island_links_ = std::move(islands);
  return w;
}

ContiguityWeights build_weights(const std::vector<std::string>& ids,
                                const std::vector<std::pair<std::string, std::string>>& adjacency,
                                const std::vector<std::pair<std::string, std::string>>& island_links) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  auto resolve = [&](const std::vector<std::pair<std::string, std::string>>& in, bool strict) {
    std::vector<IndexPair> out;
    for (const auto& [a, b] : in) {
      auto ia = index.find(a), ib = index.find(b);
      if (ia == index.end() || ib == index.end()) {
        if (strict) throw PreconditionError("pair (" + a + "," + b + ") names an unknown unit");
        continue;
      }
      out.emplace_back(ia->second, ib->second);
    }
    return out;
  };
  // Pairs touching units outside `ids` are skipped so that a national
  // adjacency file can serve a filtered panel.
  return ContiguityWeights::build(ids.size(), resolve(adjacency, false), resolve(island_links, false));
}

std::vector<std::pair<std::string, std::string>> load_pairs(const std::string& path) {
  const auto t = io::CsvTable::read(path);
  if (t.header().size() < 2) throw SchemaError(path + ": expected two columns");
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) out.emplace_back(t.cell(r, 0), t.cell(r, 1));
  return out;
}

void write_pairs(std::ostream& out, const std::vector<std::pair<std::string, std::string>>& pairs) {
  out << "fips_a,fips_b\n";
  for (const auto& [a, b] : pairs) out << a << ',' << b << '\n';
}

Eigen::VectorXd spatial_lag(const ContiguityWeights& w, const Eigen::VectorXd& x) { return w.lag(x); }

MoranResult morans_i(const Eigen::VectorXd& x, const ContiguityWeights& w) {
  const auto n = static_cast<double>(w.size());
  if (static_cast<std::size_t>(x.size()) != w.size()) throw DimensionError("Moran's I: vector length differs from W");
  if (w.size() < 3) throw PreconditionError("Moran's I needs at least three units");
  const Eigen::VectorXd z = x.array() - x.mean();
  const double zz = z.squaredNorm();
  const double scale = 1e-12 * std::max(1.0, x.cwiseAbs().maxCoeff());
  if (!(zz > n * scale * scale)) {
    throw DomainError("Moran's I of a constant vector is undefined");
  }
  const double s0 = w.total_weight();
  MoranResult r;
  r.statistic = (n / s0) * z.dot(w.lag(z)) / zz;
  r.expected = -1.0 / (n - 1.0);
  // The randomization variance needs n > 3.
  if (w.size() == 3) {
    r.variance = r.z = r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  const double b2 = n * z.array().pow(4).sum() / (zz * zz);
  const double s1 = w.s1(), s2 = w.s2();
  const double ei2 = (n * ((n * n - 3.0 * n + 3.0) * s1 - n * s2 + 3.0 * s0 * s0) -
                      b2 * ((n * n - n) * s1 - 2.0 * n * s2 + 6.0 * s0 * s0)) /
                     ((n - 1.0) * (n - 2.0) * (n - 3.0) * s0 * s0);
  r.variance = ei2 - r.expected * r.expected;
  r.z = (r.statistic - r.expected) / std::sqrt(r.variance);
  r.p = stats::normal_two_sided_p(r.z);
  return r;
}

std::vector<IndexPair> rook_lattice(std::size_t rows, std::size_t cols) {
  std::vector<IndexPair> out;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (c + 1 < cols) out.emplace_back(i, i + 1);
      if (r + 1 < rows) out.emplace_back(i, i + cols);
    }
  }
  return out;
}

}  // namespace slrgrowth::weights
