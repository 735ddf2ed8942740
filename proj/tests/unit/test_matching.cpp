#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/matching.hpp"
#include "slrgrowth/synth.hpp"

using namespace slrgrowth;
using namespace slrgrowth::matching;
using regression::DesignMatrix;

namespace {

// Plain Newton-Raphson on the logit log-likelihood.
Eigen::VectorXd newton_logit(const Eigen::VectorXd& d, const Eigen::MatrixXd& X) {
  Eigen::VectorXd b = Eigen::VectorXd::Zero(X.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::ArrayXd p = 1.0 / (1.0 + (-(X * b).array()).exp());
    const Eigen::VectorXd g = X.transpose() * (d.array() - p).matrix();
    const Eigen::MatrixXd H = X.transpose() * (p * (1.0 - p)).matrix().asDiagonal() * X;
    const Eigen::VectorXd step = H.ldlt().solve(g);
    b += step;
    if (step.cwiseAbs().maxCoeff() < 1e-14) break;
  }
  return b;
}

Matching pairs(std::vector<std::pair<std::size_t, std::vector<std::size_t>>> s) {
  Matching m;
  for (auto& [t, c] : s) m.sets.push_back({t, c});
  m.n_treated = m.sets.size();
  return m;
}

std::vector<bool> flags(const Eigen::VectorXd& d) {
  std::vector<bool> f;
  for (Eigen::Index i = 0; i < d.size(); ++i) f.push_back(d[i] > 0.5);
  return f;
}

}  // namespace

TEST(Att, WorkedExamples) {
  // y: treated 5 and 7, controls 3 and 5.
  const Eigen::Vector4d y(5, 7, 3, 5);
  auto e = att(pairs({{0, {2}}, {1, {3}}}), y);
  EXPECT_DOUBLE_EQ(e.estimate, 2.0);
  EXPECT_EQ(e.se, 0.0);
  EXPECT_EQ(e.p, 0.0);
  // Two controls per treated are averaged: 5 - 4 = 1 and 7 - 7 = 0.
  const Eigen::Matrix<double, 5, 1> y2(5, 7, 3, 5, 9);
  e = att(pairs({{0, {2, 3}}, {1, {3, 4}}}), y2);
  EXPECT_DOUBLE_EQ(e.estimate, 0.5);
  EXPECT_DOUBLE_EQ(e.se, std::sqrt(0.25 + 0.25) / 2.0);
  EXPECT_THROW(att(Matching{}, y), PreconditionError);
}

TEST(Propensity, InterceptOnlyGivesTheShare) {
  Eigen::VectorXd d(6);
  d << 1, 0, 1, 0, 1, 0;
  for (auto k : {PropensityKind::logit, PropensityKind::probit, PropensityKind::lpm}) {
    const auto m = fit_propensity(d, DesignMatrix::intercept_only(6), k);
    EXPECT_LT((m.scores.array() - 0.5).abs().maxCoeff(), 1e-10) << kind_name(k);
    EXPECT_FALSE(m.separation);
  }
}

TEST(Propensity, IrlsMatchesNewton) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    synth::MatchingSpec s;
    s.seed = seed;
    s.n = 400;
    const auto data = synth::generate_matching(s);
    const auto m = fit_propensity(data.d, data.X, PropensityKind::logit);
    EXPECT_TRUE(m.converged);
    EXPECT_LT((m.coefficients - newton_logit(data.d, data.X.X)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Propensity, ProbitScoreEquations) {
  synth::MatchingSpec s;
  s.n = 300;
  const auto data = synth::generate_matching(s);
  const auto m = fit_propensity(data.d, data.X, PropensityKind::probit);
  ASSERT_TRUE(m.converged);
  // Probit score: sum x_i phi(eta) (d - Phi) / (Phi (1 - Phi)) = 0.
  const Eigen::VectorXd eta = data.X.X * m.coefficients;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(data.X.cols());
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    const double P = 0.5 * std::erfc(-eta[i] / std::sqrt(2.0));
    const double phi = std::exp(-0.5 * eta[i] * eta[i]) / std::sqrt(2.0 * M_PI);
    g += data.X.X.row(i).transpose() * phi * (data.d[i] - P) / (P * (1.0 - P));
  }
  EXPECT_LT(g.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Propensity, SeparationIsFlagged) {
  Eigen::VectorXd x(10), d(10);
  for (int i = 0; i < 10; ++i) {
    x[i] = i;
    d[i] = i >= 5;
  }
  const auto m = fit_propensity(d, DesignMatrix::with_intercept({{"x", x}}), PropensityKind::logit);
  EXPECT_TRUE(m.separation);
  EXPECT_FALSE(m.converged);
  EXPECT_NE(m.note.find("x"), std::string::npos);
  EXPECT_THROW(fit_propensity(Eigen::VectorXd::Ones(10), DesignMatrix::with_intercept({{"x", x}}),
                              PropensityKind::logit),
               PreconditionError);
  d[0] = 0.5;
  EXPECT_THROW(fit_propensity(d, DesignMatrix::intercept_only(10), PropensityKind::logit), DomainError);
}

TEST(Matching, InvariantsWithoutReplacement) {
  synth::MatchingSpec s;
  s.n = 500;
  const auto data = synth::generate_matching(s);
  const auto ps = fit_propensity(data.d, data.X, PropensityKind::logit);
  const auto f = flags(data.d);
  for (int k : {1, 2}) {
    MatchConfig c;
    c.controls_per_treated = k;
    const auto m = match_units(ps.scores, f, c);
    std::set<std::size_t> seen;
    for (const auto& set : m.sets) {
      EXPECT_TRUE(f[set.treated]);
      EXPECT_LE(set.controls.size(), static_cast<std::size_t>(k));
      for (auto j : set.controls) {
        EXPECT_FALSE(f[j]);
        EXPECT_TRUE(seen.insert(j).second) << "control reused";
        EXPECT_LE(std::abs(ps.scores[static_cast<Eigen::Index>(set.treated)] - ps.scores[static_cast<Eigen::Index>(j)]),
                  m.score_caliper);
      }
    }
    // Deterministic for a fixed seed.
    const auto again = match_units(ps.scores, f, c);
    ASSERT_EQ(again.sets.size(), m.sets.size());
    for (std::size_t i = 0; i < m.sets.size(); ++i) EXPECT_EQ(again.sets[i].controls, m.sets[i].controls);
  }
}

TEST(Matching, CaliperMonotoneWithReplacement) {
  synth::MatchingSpec s;
  s.n = 400;
  const auto data = synth::generate_matching(s);
  const auto ps = fit_propensity(data.d, data.X, PropensityKind::logit);
  std::size_t prev = 0;
  for (double cal : {0.001, 0.01, 0.05, 0.25, 1.0}) {
    MatchConfig c;
    c.caliper = cal;
    c.replace = true;
    const auto m = match_units(ps.scores, flags(data.d), c);
    EXPECT_GE(m.matched(), prev);
    prev = m.matched();
  }
  EXPECT_EQ(prev, static_cast<std::size_t>(data.d.sum()));
}

TEST(Matching, CovariateCaliper) {
  // Treated at x = 0 has controls at 0.1 and 5; with a tight covariate
  // caliper only the near one qualifies even if its score is farther.
  Eigen::VectorXd scores(3);
  scores << 0.5, 0.9, 0.51;
  Eigen::MatrixXd cov(3, 1);
  cov << 0.0, 0.1, 5.0;
  MatchConfig c;
  c.mode = CaliperMode::covariate_sd;
  c.caliper = 0.1;
  const auto m = match_units(scores, {true, false, false}, c, cov);
  ASSERT_EQ(m.sets.size(), 1u);
  EXPECT_EQ(m.sets[0].controls, std::vector<std::size_t>{1});
  EXPECT_THROW(match_units(scores, {true, false, false}, c), DimensionError);
  c.caliper = 0.0;
  EXPECT_THROW(match_units(scores, {true, false, false}, c, cov), DomainError);
}

TEST(Balance, IdenticalSamples) {
  // Each treated matched to a control with the same covariate value.
  Eigen::VectorXd x(8);
  x << 1, 2, 3, 4, 1, 2, 3, 4;
  const auto m = pairs({{0, {4}}, {1, {5}}, {2, {6}}, {3, {7}}});
  const auto r = balance(m, DesignMatrix::with_intercept({{"x", x}}), 5, 200);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].ks_d, 0.0);
  EXPECT_EQ(r.rows[0].ks_p, 1.0);
  EXPECT_NEAR(r.rows[0].t_p, 1.0, 1e-12);
  EXPECT_EQ(r.rows[0].ks_boot_p, 1.0);
  EXPECT_TRUE(r.balanced());
}

TEST(Balance, ShiftedSamplesReject) {
  std::mt19937_64 rng(8);
  const Eigen::VectorXd a = fixtures::normals(rng, 100);
  const Eigen::VectorXd b = (fixtures::normals(rng, 100).array() + 1.5).matrix();
  Eigen::VectorXd x(200);
  x << a, b;
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> s;
  for (std::size_t i = 0; i < 100; ++i) s.push_back({i, {100 + i}});
  const auto r = balance(pairs(s), DesignMatrix::from_columns({{"x", x}}), 5, 300);
  EXPECT_LT(r.rows[0].ks_p, 1e-6);
  EXPECT_LT(r.rows[0].ks_boot_p, 0.01);
  EXPECT_LT(r.rows[0].t_p, 1e-6);
  EXPECT_FALSE(r.balanced());
}

TEST(Parsing, Names) {
  EXPECT_EQ(parse_propensity_kind("probit"), PropensityKind::probit);
  EXPECT_THROW(parse_propensity_kind("tobit"), DomainError);
  EXPECT_EQ(parse_caliper_mode("covariate_sd"), CaliperMode::covariate_sd);
  EXPECT_THROW(parse_caliper_mode("x"), DomainError);
}
