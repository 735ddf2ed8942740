#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/synth.hpp"
#include "slrgrowth/weights.hpp"

using namespace slrgrowth;
using namespace slrgrowth::synth;

TEST(Dgp, ZeroDependenceIsTheLinearModel) {
  DgpSpec s;
  s.rows = s.cols = 6;
  s.seed = 1;
  const auto d = generate(s);
  const Eigen::Vector3d b(1.0, 1.0, -0.5);
  EXPECT_LT((d.y - d.X.X * b - d.eps).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(d.u, d.eps);
  EXPECT_EQ(d.X.names.front(), regression::kIntercept);
}

TEST(Dgp, ReconstructsBothProcesses) {
  DgpSpec s;
  s.rows = 7;
  s.cols = 9;
  s.rho = 0.458;
  s.lambda = -0.3;
  s.seed = 2;
  const Generator g(s);
  const auto d = g.draw(17);
  const Eigen::MatrixXd W = g.weights().dense();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(63, 63);
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(s.beta.data(), 3);
  EXPECT_LT(((I - s.rho * W) * d.y - d.X.X * b - d.u).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT(((I - s.lambda * W) * d.u - d.eps).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Dgp, DeterministicPerSeed) {
  DgpSpec s;
  s.rows = s.cols = 5;
  s.rho = 0.2;
  const Generator g(s);
  EXPECT_EQ(g.draw(3).y, g.draw(3).y);
  EXPECT_NE(g.draw(3).y, g.draw(4).y);
  EXPECT_THROW(generate(s), std::exception);  // no seed on the spec
}

TEST(Dgp, InfeasibleParametersRejected) {
  DgpSpec s;
  s.rows = s.cols = 4;
  s.rho = 1.0;
  EXPECT_THROW(Generator{s}, DomainError);
  s.rho = 0.0;
  s.lambda = -1.5;
  EXPECT_THROW(Generator{s}, DomainError);
  s.lambda = 0.0;
  s.error_law = ErrorLaw::heteroscedastic;
  EXPECT_THROW(Generator{s}, DomainError);  // needs positive covariates
  s.covariate_law = CovariateLaw::exponential;
  EXPECT_NO_THROW(Generator{s});
}

TEST(Dgp, HeteroscedasticVarianceFollowsTheCovariate) {
  DgpSpec s;
  s.rows = s.cols = 30;
  s.error_law = ErrorLaw::heteroscedastic;
  s.covariate_law = CovariateLaw::exponential;
  const Generator g(s);
  const auto d = g.draw(5);
  EXPECT_GT(d.X.X.col(1).minCoeff(), 0.0);
  // eps / sqrt(x1) is standard normal.
  const Eigen::ArrayXd z = d.eps.array() / d.X.X.col(1).array().sqrt();
  EXPECT_NEAR(z.square().mean(), 1.0, 0.15);
}

TEST(Dgp, LagProcessIsSpatiallyCorrelated) {
  DgpSpec s;
  s.rows = s.cols = 30;
  s.rho = 0.458;
  s.beta = {0.0};
  const Generator g(s);
  const auto m = weights::morans_i(g.draw(1).y, g.weights());
  EXPECT_GT(m.statistic, 0.2);
  EXPECT_LT(m.p, 1e-6);
}

TEST(Dgp, SpecFile) {
  const auto dir = fixtures::temp_dir("dgp");
  {
    std::ofstream f(dir + "/a.ini");
    f << "[dgp]\nrows = 3\ncols = 4\nrho = 0.25\nbeta = 1, 2\nseed = 9\n";
  }
  const auto s = load_dgp_spec(dir + "/a.ini");
  EXPECT_EQ(s.n(), 12u);
  EXPECT_EQ(s.rho, 0.25);
  EXPECT_EQ(s.beta, (std::vector<double>{1, 2}));
  EXPECT_EQ(*s.seed, 9u);
  {
    std::ofstream f(dir + "/b.ini");
    f << "[dgp]\nrows = 3\nrhoo = 0.25\nseed = 1\n";
  }
  EXPECT_THROW(load_dgp_spec(dir + "/b.ini"), ConfigError);
}

TEST(Evaluate, OlsIsUnbiasedWithoutDependence) {
  DgpSpec s;
  s.rows = s.cols = 10;
  s.seed = 4;
  const Generator g(s);
  const auto r = evaluate(estimator_by_name("ols"), g, 200, truth_of(s));
  EXPECT_EQ(r.failures, 0u);
  const auto& b1 = r.parameter("x1");
  EXPECT_EQ(b1.truth, 1.0);
  EXPECT_NEAR(b1.mean, 1.0, 4.0 * b1.empirical_sd / std::sqrt(200.0));
  EXPECT_NEAR(b1.coverage, 0.95, 0.05);
  EXPECT_THROW(estimator_by_name("probit"), std::exception);
  // Thread count does not change the report.
  const auto r2 = evaluate(estimator_by_name("ols"), g, 200, truth_of(s), 3);
  EXPECT_EQ(r2.parameter("x1").mean, b1.mean);
}

TEST(Scenarios, MatchingAndGrowthShapes) {
  MatchingSpec m;
  m.n = 300;
  const auto md = generate_matching(m);
  EXPECT_EQ(md.y.size(), 300);
  EXPECT_EQ(md.X.cols(), 3);
  EXPECT_GT(md.d.sum(), 30.0);
  EXPECT_LT(md.d.sum(), 270.0);
  GrowthSpec gs;
  gs.instruments = 3;
  const auto gd = generate_growth(gs);
  EXPECT_EQ(gd.instruments.cols(), 3);
  EXPECT_EQ(gd.g.size(), 500);
  gs.endogeneity = 1.0;
  EXPECT_THROW(generate_growth(gs), DomainError);
}
