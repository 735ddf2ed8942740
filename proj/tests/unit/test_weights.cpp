#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/weights.hpp"

using namespace slrgrowth;
using namespace slrgrowth::weights;

namespace {

// Moran's I straight from its definition on a dense W.
double moran_dense(const Eigen::VectorXd& x, const Eigen::MatrixXd& W) {
  const Eigen::VectorXd z = x.array() - x.mean();
  return (static_cast<double>(x.size()) / W.sum()) * z.dot(W * z) / z.squaredNorm();
}

ContiguityWeights random_graph(std::mt19937_64& rng, std::size_t n) {
  std::vector<IndexPair> e;
  for (std::size_t i = 1; i < n; ++i) e.emplace_back(rng() % i, i);  // spanning tree
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t a = rng() % n, b = rng() % n;
    if (a != b) e.emplace_back(a, b);
  }
  return ContiguityWeights::build(n, e);
}

}  // namespace

TEST(Build, TwoCounties) {
  const auto w = fixtures::path(2);
  EXPECT_EQ(w.dense(), (Eigen::Matrix2d() << 0, 1, 1, 0).finished());
}

TEST(Build, PathMiddleRow) {
  const auto w = fixtures::path(3);
  const Eigen::MatrixXd d = w.dense();
  EXPECT_EQ(d(1, 0), 0.5);
  EXPECT_EQ(d(1, 2), 0.5);
  EXPECT_EQ(d(0, 1), 1.0);
  EXPECT_EQ(w.total_weight(), 3.0);
}

TEST(Build, IslandLinks) {
  // P - Q contiguous; X is an island linked to both.
  const std::vector<std::string> ids = {"P", "Q", "X"};
  const auto w = build_weights(ids, {{"P", "Q"}}, {{"X", "P"}, {"X", "Q"}});
  const Eigen::MatrixXd d = w.dense();
  EXPECT_EQ(d(2, 0), 0.5);
  EXPECT_EQ(d(2, 1), 0.5);
  EXPECT_GT(d(0, 2), 0.0);
  EXPECT_GT(d(1, 2), 0.0);
  EXPECT_EQ(w.island_links().size(), 2u);
  EXPECT_THROW(build_weights(ids, {{"P", "Q"}}, {}), PreconditionError);
}

TEST(Build, RejectsSelfLoopsAndBadIndices) {
  const std::vector<IndexPair> self = {{0, 0}, {0, 1}};
  EXPECT_THROW(ContiguityWeights::build(2, self), PreconditionError);
  const std::vector<IndexPair> out = {{0, 5}};
  EXPECT_THROW(ContiguityWeights::build(2, out), PreconditionError);
}

TEST(Build, StructuralInvariants) {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 10; ++rep) {
    const auto w = random_graph(rng, 15 + rep);
    const Eigen::MatrixXd d = w.dense();
    EXPECT_NEAR((d.rowwise().sum().array() - 1.0).abs().maxCoeff(), 0.0, 1e-14);
    EXPECT_EQ(d.diagonal().cwiseAbs().maxCoeff(), 0.0);
    // Binary structure symmetric.
    EXPECT_TRUE(((d.array() > 0) == (d.transpose().array() > 0)).all());
    EXPECT_NEAR(w.total_weight(), static_cast<double>(w.size()), 1e-12);
    // Cliff-Ord constants and the LM normaliser against dense definitions.
    const Eigen::MatrixXd s = d + d.transpose();
    EXPECT_NEAR(w.s1(), 0.5 * s.array().square().sum(), 1e-10);
    EXPECT_NEAR(w.s2(), (d.rowwise().sum() + d.colwise().sum().transpose()).array().square().sum(), 1e-10);
    EXPECT_NEAR(w.trace_wtw_plus_ww(), (d.transpose() * d + d * d).trace(), 1e-10);
  }
}

TEST(Lag, Identities) {
  const auto w = fixtures::path(3);
  EXPECT_EQ(w.lag(Eigen::VectorXd(Eigen::Vector3d(1, 0, -1))), Eigen::VectorXd(Eigen::Vector3d(0, 0, 0)));
  EXPECT_EQ(spatial_lag(w, Eigen::VectorXd::Constant(3, 2.5)), Eigen::VectorXd::Constant(3, 2.5));
  EXPECT_THROW(w.lag(Eigen::VectorXd(Eigen::VectorXd::Zero(4))), DimensionError);
}

TEST(Lag, MatchesDenseMultiply) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 10; ++rep) {
    const auto w = random_graph(rng, 12);
    const Eigen::MatrixXd d = w.dense();
    const Eigen::VectorXd x = fixtures::normals(rng, 12);
    const Eigen::MatrixXd X = Eigen::MatrixXd::Random(12, 3);
    EXPECT_LT((w.lag(x) - d * x).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((w.lag_transpose(x) - d.transpose() * x).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((w.lag(X) - d * X).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((Eigen::MatrixXd(w.sparse()) - d).cwiseAbs().maxCoeff(), 0.0 + 1e-300);
  }
}

TEST(Spectrum, MatchesGeneralEigenSolver) {
  std::mt19937_64 rng(5);
  const auto w = random_graph(rng, 30);
  Eigen::EigenSolver<Eigen::MatrixXd> es(w.dense());
  std::vector<double> ref;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    EXPECT_NEAR(es.eigenvalues()[i].imag(), 0.0, 1e-10);
    ref.push_back(es.eigenvalues()[i].real());
  }
  std::sort(ref.begin(), ref.end());
  const Eigen::VectorXd ev = w.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) EXPECT_NEAR(ev[i], ref[static_cast<std::size_t>(i)], 1e-10);
  EXPECT_NEAR(ev.maxCoeff(), 1.0, 1e-12);
}

TEST(Subset, RestandardizesAndKeepsIslandMetadata) {
  const std::vector<std::string> ids = {"a", "b", "c", "d", "x"};
  const auto w = build_weights(ids, {{"a", "b"}, {"b", "c"}, {"c", "d"}}, {{"x", "d"}});
  const std::vector<std::size_t> keep = {1, 2, 3, 4};
  const auto s = w.subset(keep);
  EXPECT_EQ(s.size(), 4u);
  EXPECT_EQ(s.dense()(0, 1), 1.0);  // b lost a
  EXPECT_EQ(s.island_links().size(), 1u);
  const std::vector<std::size_t> lone = {0, 2};
  EXPECT_THROW(w.subset(lone), PreconditionError);
  EXPECT_EQ(w.drop_isolates({0, 2, 3}), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(w.drop_isolates({0, 4}), (std::vector<std::size_t>{}));
}

TEST(Pairs, RoundTrip) {
  const std::vector<std::pair<std::string, std::string>> p = {{"01001", "01003"}, {"01003", "02001"}};
  std::ostringstream out;
  write_pairs(out, p);
  const auto dir = fixtures::temp_dir("pairs");
  const auto path = dir + "/adj.csv";
  {
    std::ofstream f(path);
    f << out.str();
  }
  EXPECT_EQ(load_pairs(path), p);
}

TEST(Moran, AntisymmetricPathIsZero) {
  const auto r = morans_i(Eigen::Vector3d(1, 0, -1), fixtures::path(3));
  EXPECT_EQ(r.statistic, 0.0);
  EXPECT_DOUBLE_EQ(r.expected, -0.5);
}

TEST(Moran, ConstantIsAnError) {
  EXPECT_THROW(morans_i(Eigen::VectorXd::Constant(5, 1.0), fixtures::path(5)), DomainError);
}

TEST(Moran, StatisticMatchesDenseDefinition) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 5; ++rep) {
    const auto w = random_graph(rng, 25);
    const Eigen::VectorXd x = fixtures::normals(rng, 25);
    EXPECT_NEAR(morans_i(x, w).statistic, moran_dense(x, w.dense()), 1e-13);
  }
}

TEST(Moran, PermutationOracle) {
  // 20-node lattice with x built from its own lag plus noise.
  const auto w = fixtures::lattice(4, 5);
  std::mt19937_64 rng(21);
  Eigen::VectorXd e = fixtures::normals(rng, 20);
  const Eigen::VectorXd x = 0.9 * w.lag(e) + 0.6 * fixtures::normals(rng, 20);
  const auto r = morans_i(x, w);
  const Eigen::MatrixXd d = w.dense();
  std::vector<Eigen::Index> idx(20);
  for (Eigen::Index i = 0; i < 20; ++i) idx[static_cast<std::size_t>(i)] = i;
  const int B = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int b = 0; b < B; ++b) {
    std::shuffle(idx.begin(), idx.end(), rng);
    Eigen::VectorXd p(20);
    for (Eigen::Index i = 0; i < 20; ++i) p[i] = x[idx[static_cast<std::size_t>(i)]];
    const double I = moran_dense(p, d);
    sum += I;
    sum2 += I * I;
  }
  const double m = sum / B, v = sum2 / B - m * m;
  EXPECT_NEAR(m, r.expected, 4.0 * std::sqrt(v / B));
  EXPECT_NEAR(v, r.variance, 0.06 * r.variance);
}
