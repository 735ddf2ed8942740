#include "slrgrowth/synth.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "slrgrowth/config.hpp"
#include "slrgrowth/dataset.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/slr.hpp"
#include "slrgrowth/spatial.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::synth {

namespace {

using Rng = std::mt19937_64;

Eigen::VectorXd normals(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> nd;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
  return v;
}

// Solves (I - a W) x = b with a cached sparse factorisation.
class ShiftSolver {
 public:
  ShiftSolver(const weights::ContiguityWeights& w, double a) : a_(a) {
    if (a == 0.0) return;
    const auto n = static_cast<Eigen::Index>(w.size());
    Eigen::SparseMatrix<double> I(n, n);
    I.setIdentity();
    Eigen::SparseMatrix<double> m = I - a * w.sparse();
    lu_ = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu_->compute(m);
    if (lu_->info() != Eigen::Success) throw SingularityError("I - aW is singular");
  }
  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return a_ == 0.0 ? b : Eigen::MatrixXd(lu_->solve(b)); }

 private:
  double a_;
  std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

void check_feasible(const weights::ContiguityWeights& w, double a, const char* what) {
  if (a == 0.0) return;
  const Eigen::VectorXd ev = w.eigenvalues();
  // I - aW must stay nonsingular; the margin absorbs eigenvalue round-off at |a| = 1.
  constexpr double kMargin = 1e-8;
  if (!(a * ev.minCoeff() < 1.0 - kMargin && a * ev.maxCoeff() < 1.0 - kMargin))
    throw DomainError(std::string(what) + " = " + std::to_string(a) + " is outside the feasible interval (" +
                      std::to_string(1.0 / ev.minCoeff()) + ", " + std::to_string(1.0 / ev.maxCoeff()) + ")");
}

}  // namespace

DgpSpec load_dgp_spec(const std::string& path) {
  auto ini = config::Ini::load(path);
  ini.require_known({{"dgp",
                      {"rows", "cols", "rho", "lambda", "beta", "sigma2", "error_law", "covariate_law", "seed"}}});
  DgpSpec s;
  s.rows = static_cast<std::size_t>(ini.get_int("dgp", "rows", 20));
  s.cols = static_cast<std::size_t>(ini.get_int("dgp", "cols", 20));
  s.rho = ini.get_double("dgp", "rho", 0.0);
  s.lambda = ini.get_double("dgp", "lambda", 0.0);
  s.sigma2 = ini.get_double("dgp", "sigma2", 1.0);
  if (auto b = ini.find("dgp", "beta")) {
    s.beta.clear();
    for (const auto& item : config::split_list(*b)) s.beta.push_back(std::stod(item));
  }
  const auto law = ini.get("dgp", "error_law", "normal");
  if (law == "normal") s.error_law = ErrorLaw::normal;
  else if (law == "heteroscedastic") s.error_law = ErrorLaw::heteroscedastic;
  else throw ConfigError(path + ": error_law must be normal or heteroscedastic");
  const auto cl = ini.get("dgp", "covariate_law", "normal");
  if (cl == "normal") s.covariate_law = CovariateLaw::normal;
  else if (cl == "exponential") s.covariate_law = CovariateLaw::exponential;
  else throw ConfigError(path + ": covariate_law must be normal or exponential");
  s.seed = static_cast<std::uint64_t>(ini.get_int("dgp", "seed"));
  return s;
}

Generator::Generator(DgpSpec spec) : spec_(std::move(spec)) {
  const auto pairs = weights::rook_lattice(spec_.rows, spec_.cols);
  w_ = weights::ContiguityWeights::build(spec_.n(), pairs);
  prepare();
}

Generator::Generator(DgpSpec spec, weights::ContiguityWeights w) : spec_(std::move(spec)), w_(std::move(w)) {
  prepare();
}

void Generator::prepare() {
  if (spec_.beta.empty()) throw DomainError("beta needs at least the intercept");
  if (!(spec_.sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  if (spec_.error_law == ErrorLaw::heteroscedastic && spec_.covariate_law != CovariateLaw::exponential)
    throw DomainError("heteroscedastic errors need positive (exponential) covariates");
  if (spec_.error_law == ErrorLaw::heteroscedastic && spec_.beta.size() < 2)
    throw DomainError("heteroscedastic errors need at least one covariate");
  check_feasible(w_, spec_.rho, "rho");
  check_feasible(w_, spec_.lambda, "lambda");
  const auto n = static_cast<Eigen::Index>(w_.size());
  // Dense inverses: draws are then two matrix-vector products.
  auto dense_inverse = [&](double a) -> Eigen::MatrixXd {
    if (a == 0.0) return {};
    return ShiftSolver(w_, a).solve(Eigen::MatrixXd::Identity(n, n));
  };
  lag_solver_ = dense_inverse(spec_.rho);
  error_solver_ = dense_inverse(spec_.lambda);
}

SyntheticData Generator::draw(std::uint64_t seed) const {
  const auto n = static_cast<Eigen::Index>(w_.size());
  const auto k = static_cast<Eigen::Index>(spec_.beta.size());
  Rng rng(stats::derive_seed(seed, 0x5eed));
  SyntheticData d;
  d.seed = seed;
  d.X.X.resize(n, k);
  d.X.names.push_back(regression::kIntercept);
  d.X.X.col(0).setOnes();
  std::exponential_distribution<double> ex(1.0);
  for (Eigen::Index j = 1; j < k; ++j) {
    d.X.names.push_back("x" + std::to_string(j));
    if (spec_.covariate_law == CovariateLaw::normal) {
      d.X.X.col(j) = normals(rng, n);
    } else {
      for (Eigen::Index i = 0; i < n; ++i) d.X.X(i, j) = ex(rng);
    }
  }
  d.eps = normals(rng, n) * std::sqrt(spec_.sigma2);
  if (spec_.error_law == ErrorLaw::heteroscedastic) d.eps.array() *= d.X.X.col(1).array().sqrt();
  d.u = spec_.lambda == 0.0 ? d.eps : Eigen::VectorXd(error_solver_ * d.eps);
  const Eigen::VectorXd beta = Eigen::Map<const Eigen::VectorXd>(spec_.beta.data(), k);
  const Eigen::VectorXd rhs = d.X.X * beta + d.u;
  d.y = spec_.rho == 0.0 ? rhs : Eigen::VectorXd(lag_solver_ * rhs);
  return d;
}

void Generator::write_truth(std::ostream& out) const {
  out << std::setprecision(17);
  out << "lattice\t" << spec_.rows << "x" << spec_.cols << "\n";
  out << "n\t" << w_.size() << "\n";
  out << "rho\t" << spec_.rho << "\n";
  out << "lambda\t" << spec_.lambda << "\n";
  for (std::size_t j = 0; j < spec_.beta.size(); ++j)
    out << (j == 0 ? std::string(regression::kIntercept) : "x" + std::to_string(j)) << "\t" << spec_.beta[j] << "\n";
  out << "sigma2\t" << spec_.sigma2 << "\n";
  out << "error_law\t" << (spec_.error_law == ErrorLaw::normal ? "normal" : "heteroscedastic(var ~ x1)") << "\n";
  out << "covariate_law\t" << (spec_.covariate_law == CovariateLaw::normal ? "N(0,1)" : "Exp(1)") << "\n";
  out << "seed\t" << spec_.seed.value_or(0) << "\n";
}

SyntheticData generate(const DgpSpec& spec) {
  if (!spec.seed) throw PreconditionError("DGP spec needs a seed");
  return Generator(spec).draw(*spec.seed);
}

// ---- evaluation ----

const ParameterSummary& EvaluationReport::parameter(const std::string& name) const {
  for (const auto& p : parameters)
    if (p.name == name) return p;
  throw SchemaError("no parameter '" + name + "' in evaluation report");
}

const TestSummary& EvaluationReport::test(const std::string& name) const {
  for (const auto& t : tests)
    if (t.name == name) return t;
  throw SchemaError("no test '" + name + "' in evaluation report");
}

EvaluationReport evaluate(const Estimator& estimator, const Generator& gen, std::size_t replications,
                          const std::map<std::string, double>& truth, unsigned threads) {
  if (!gen.spec().seed) throw PreconditionError("DGP spec needs a seed");
  const std::uint64_t base = *gen.spec().seed;
  std::vector<std::optional<ReplicationResult>> results(replications);
  std::vector<std::string> errors(replications);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < replications; r = next++) {
      try {
        results[r] = estimator(gen.draw(stats::derive_seed(base, r)), gen.weights());
      } catch (const std::exception& e) {
        errors[r] = e.what();
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Aggregate in replication order so the report does not depend on threads.
  EvaluationReport rep;
  rep.replications = replications;
  std::vector<std::string> pnames, tnames;
  std::map<std::string, std::vector<std::pair<double, double>>> est;
  std::map<std::string, std::vector<double>> pv;
  for (std::size_t r = 0; r < replications; ++r) {
    if (!results[r]) {
      ++rep.failures;
      rep.failure_messages.push_back("replication " + std::to_string(r) + ": " + errors[r]);
      continue;
    }
    for (const auto& e : results[r]->estimates) {
      if (!est.contains(e.name)) pnames.push_back(e.name);
      est[e.name].emplace_back(e.estimate, e.se);
    }
    for (const auto& t : results[r]->tests) {
      if (!pv.contains(t.name)) tnames.push_back(t.name);
      pv[t.name].push_back(t.p);
    }
  }
  const double zc = stats::normal_quantile(0.975);
  for (const auto& name : pnames) {
    const auto& v = est[name];
    ParameterSummary s;
    s.name = name;
    auto it = truth.find(name);
    s.truth = it == truth.end() ? 0.0 : it->second;
    s.n = v.size();
    std::vector<double> xs;
    double se_sum = 0.0, sq = 0.0;
    std::size_t cover = 0;
    for (auto [x, se] : v) {
      xs.push_back(x);
      se_sum += se;
      sq += (x - s.truth) * (x - s.truth);
      if (std::abs(x - s.truth) <= zc * se) ++cover;
    }
    const double n = static_cast<double>(v.size());
    s.mean = stats::mean(xs);
    s.bias = s.mean - s.truth;
    s.rmse = std::sqrt(sq / n);
    s.empirical_sd = stats::sample_sd(xs);
    s.mean_se = se_sum / n;
    s.coverage = static_cast<double>(cover) / n;
    rep.parameters.push_back(s);
  }
  for (const auto& name : tnames) {
    const auto& v = pv[name];
    TestSummary t;
    t.name = name;
    t.n = v.size();
    t.rejection_rate =
        static_cast<double>(std::count_if(v.begin(), v.end(), [](double p) { return p < 0.05; })) /
        static_cast<double>(v.size());
    rep.tests.push_back(t);
  }
  return rep;
}

std::map<std::string, double> truth_of(const DgpSpec& spec) {
  std::map<std::string, double> t{{"rho", spec.rho}, {"lambda", spec.lambda}};
  for (std::size_t j = 0; j < spec.beta.size(); ++j)
    t[j == 0 ? std::string(regression::kIntercept) : "x" + std::to_string(j)] = spec.beta[j];
  return t;
}

namespace {

// One operator (and eigen-decomposition) per estimator handle, shared by
// all replications.
struct OperatorCache {
  std::once_flag once;
  std::shared_ptr<spatial::SpatialOperator> op;
  const spatial::SpatialOperator& get(const weights::ContiguityWeights& w) {
    std::call_once(once, [&] { op = std::make_shared<spatial::SpatialOperator>(w); });
    return *op;
  }
};

void push_fit(ReplicationResult& r, const spatial::SpatialFit& f) {
  if (f.rho) r.estimates.push_back({"rho", f.rho->estimate, f.rho->se});
  if (f.lambda) r.estimates.push_back({"lambda", f.lambda->estimate, f.lambda->se});
  for (std::size_t j = 0; j < f.names.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    r.estimates.push_back({f.names[j], f.beta[jj], f.se[jj]});
  }
}

}  // namespace

Estimator estimator_by_name(const std::string& name) {
  auto cache = std::make_shared<OperatorCache>();
  if (name == "sar") {
    return [cache](const SyntheticData& d, const weights::ContiguityWeights& w) {
      spatial::SarOptions o;
      o.keep_resolvent = false;
      ReplicationResult r;
      push_fit(r, spatial::fit_sar(d.y, d.X, cache->get(w), o));
      return r;
    };
  }
  if (name == "sem") {
    return [cache](const SyntheticData& d, const weights::ContiguityWeights& w) {
      ReplicationResult r;
      push_fit(r, spatial::fit_sem(d.y, d.X, cache->get(w)));
      return r;
    };
  }
  if (name == "sac") {
    return [cache](const SyntheticData& d, const weights::ContiguityWeights& w) {
      ReplicationResult r;
      push_fit(r, spatial::fit_sac(d.y, d.X, cache->get(w)));
      return r;
    };
  }
  if (name == "gs2sls") {
    return [](const SyntheticData& d, const weights::ContiguityWeights& w) {
      ReplicationResult r;
      push_fit(r, spatial::fit_gs2sls_white(d.y, d.X, w));
      return r;
    };
  }
  if (name == "ols") {
    return [](const SyntheticData& d, const weights::ContiguityWeights&) {
      ReplicationResult r;
      auto f = regression::ols(d.y, d.X);
      for (std::size_t j = 0; j < f.names.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        r.estimates.push_back({f.names[j], f.beta[jj], f.se[jj]});
      }
      return r;
    };
  }
  if (name == "lm") {
    return [](const SyntheticData& d, const weights::ContiguityWeights& w) {
      ReplicationResult r;
      auto lm = spatial::lm_tests(d.y, d.X, w);
      r.tests = {{"lm_error", lm.lm_error.p},
                 {"lm_lag", lm.lm_lag.p},
                 {"robust_lm_error", lm.robust_lm_error.p},
                 {"robust_lm_lag", lm.robust_lm_lag.p}};
      return r;
    };
  }
  if (name == "lm_sar") {
    return [cache](const SyntheticData& d, const weights::ContiguityWeights& w) {
      const auto& op = cache->get(w);
      ReplicationResult r;
      auto f = spatial::fit_sar(d.y, d.X, op);
      push_fit(r, f);
      r.tests.push_back({"lm_residual_autocorr", spatial::lm_residual_autocorr(f, op).p});
      return r;
    };
  }
  throw DomainError("unknown estimator '" + name + "' (sar|sem|sac|gs2sls|ols|lm|lm_sar)");
}

void write_evaluation_tsv(std::ostream& out, const EvaluationReport& report) {
  const auto prec = out.precision();
  out << std::setprecision(6);
  out << "kind\tname\ttruth\tmean\tbias\trmse\tempirical_sd\tmean_se\tcoverage_or_rate\tn\n";
  for (const auto& p : report.parameters)
    out << "parameter\t" << p.name << '\t' << p.truth << '\t' << p.mean << '\t' << p.bias << '\t' << p.rmse << '\t'
        << p.empirical_sd << '\t' << p.mean_se << '\t' << p.coverage << '\t' << p.n << '\n';
  for (const auto& t : report.tests)
    out << "test\t" << t.name << "\t\t\t\t\t\t\t" << t.rejection_rate << '\t' << t.n << '\n';
  out << "failures\t\t\t\t\t\t\t\t" << report.failures << '\t' << report.replications << '\n';
  out.precision(prec);
}

// ---- matching scenarios ----

MatchingData generate_matching(const MatchingSpec& spec) {
  if (spec.n < 10) throw DomainError("matching scenario needs at least 10 units");
  Rng rng(stats::derive_seed(spec.seed, 0x3a7c));
  const auto n = static_cast<Eigen::Index>(spec.n);
  MatchingData d;
  d.X.names = {regression::kIntercept, "z1", "z2"};
  d.X.X.resize(n, 3);
  d.X.X.col(0).setOnes();
  d.X.X.col(1) = normals(rng, n);
  d.X.X.col(2) = normals(rng, n);
  const double a0 = std::log(spec.treated_share / (1.0 - spec.treated_share));
  std::uniform_real_distribution<double> un(0.0, 1.0);
  d.d.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double eta = a0 + 0.6 * d.X.X(i, 1) - 0.4 * d.X.X(i, 2);
    d.d[i] = un(rng) < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
  }
  const Eigen::VectorXd e = normals(rng, n);
  d.y = 0.2 * d.X.X.col(1) + 0.1 * d.X.X.col(2) + spec.effect * d.d + e;
  return d;
}

// ---- endogeneity scenarios ----

GrowthData generate_growth(const GrowthSpec& spec) {
  if (spec.instruments < 1) throw DomainError("growth scenario needs at least one instrument");
  if (!(std::abs(spec.endogeneity) < 1.0)) throw DomainError("endogeneity must be a correlation in (-1, 1)");
  Rng rng(stats::derive_seed(spec.seed, 0x9c07));
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto L = static_cast<Eigen::Index>(spec.instruments);
  GrowthData d;
  Eigen::MatrixXd Z(n, L);
  for (Eigen::Index j = 0; j < L; ++j) Z.col(j) = normals(rng, n);
  for (Eigen::Index j = 0; j < L; ++j) d.instruments.names.push_back("z" + std::to_string(j + 1));
  d.instruments.X = Z;
  const Eigen::VectorXd c = normals(rng, n);
  d.controls = regression::DesignMatrix::with_intercept({{"c1", c}});

  const double sv = 0.05, se = 0.004;
  const Eigen::VectorXd a = normals(rng, n), b = normals(rng, n);
  const Eigen::VectorXd v = sv * a;
  const Eigen::VectorXd eta = se * (spec.endogeneity * a + std::sqrt(1.0 - spec.endogeneity * spec.endogeneity) * b);
  const Eigen::VectorXd e0 = se * normals(rng, n);

  d.y0_prev = (9.2 + 0.15 * normals(rng, n).array()).matrix();
  Eigen::VectorXd gamma = Eigen::VectorXd::Constant(L, 0.04);
  const Eigen::VectorXd dy0 = (0.45 + (Z * gamma).array()).matrix() + v;
  d.y0 = d.y0_prev + dy0;
  const Eigen::VectorXd base = (0.35 + 0.002 * c.array()).matrix();
  d.g_prev = spec.beta * d.y0_prev + base + e0;
  d.g = spec.beta * d.y0 + base + e0 + eta;
  return d;
}

// ---- county-system fixture ----

namespace {

struct Cell2 {
  std::size_t row, col;
};

std::string fips_of(std::size_t state, std::size_t idx) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02zu%03zu", state + 1, idx + 1);
  return buf;
}

dataset::Region region_at(std::size_t row, std::size_t col, std::size_t rows, std::size_t cols) {
  const double x = static_cast<double>(col) / static_cast<double>(cols);
  const double y = static_cast<double>(row) / static_cast<double>(rows);
  using dataset::Region;
  if (x < 0.25) return Region::FarWest;
  if (x < 0.44) return y < 0.58 ? Region::RockyMountain : Region::Southwest;
  if (x < 0.69) return y < 0.42 ? Region::Plains : (y < 0.7 ? Region::GreatLakes : Region::Southeast);
  if (y < 0.25) return Region::NewEngland;
  return y < 0.55 ? Region::Mideast : Region::Southeast;
}

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

CountySystemFiles write_county_system(const CountySystemSpec& spec, const std::string& dir) {
  const std::size_t R = spec.rows, C = spec.cols, n = R * C;
  if (R < 8 || C < 8) throw DomainError("county grid must be at least 8 x 8");
  if (spec.station_counties > spec.stations) throw DomainError("more station counties than stations");
  std::filesystem::create_directories(dir);
  Rng rng(stats::derive_seed(spec.seed, 0xc0));
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> un(0.0, 1.0);

  auto id = [&](std::size_t r, std::size_t c) { return r * C + c; };
  const std::size_t sb = spec.state_block, states_per_row = (C + sb - 1) / sb;

  // Coast along the west (col 0), south (last row) and east (last col)
  // edges; second-ring "bay" cells on three of every four positions.
  std::vector<int> coast_rank(n, -1);  // 1 = edge, 2 = bay
  std::vector<double> coast_pos(n, 0.0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = id(r, c);
      const bool edge = c == 0 || c == C - 1 || r == R - 1;
      const bool ring2 = (c == 1 && r < R - 1) || (c == C - 2 && r < R - 1) || (r == R - 2 && c > 0 && c < C - 1);
      const std::size_t along = c <= 1 ? r : (c >= C - 2 ? 2 * R + C - r : R + c);
      if (edge) coast_rank[i] = 1;
      else if (ring2 && along % 4 != 0) coast_rank[i] = 2;
      // Position along the coast: west north->south, gulf west->east,
      // east south->north.
      if (c == 0 || (c == 1 && r < R - 1)) coast_pos[i] = static_cast<double>(r);
      else if (r == R - 1 || (r == R - 2 && c > 1 && c < C - 2)) coast_pos[i] = static_cast<double>(R + c);
      else coast_pos[i] = static_cast<double>(R + C + (R - r));
    }

  // Islands: east-edge cells detached from the mainland grid.
  std::vector<std::size_t> island_cells;
  for (std::size_t k = 0; k < spec.islands; ++k) island_cells.push_back(id((k + 1) * R / (spec.islands + 1), C - 1));
  auto is_island = [&](std::size_t i) { return std::find(island_cells.begin(), island_cells.end(), i) != island_cells.end(); };

  std::vector<dataset::CountyRecord> recs(n);
  std::vector<std::string> fips(n);
  std::vector<std::size_t> state_count(states_per_row * ((R + sb - 1) / sb), 0);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = id(r, c);
      const std::size_t st = (r / sb) * states_per_row + c / sb;
      fips[i] = fips_of(st, state_count[st]++);
    }

  // Smooth latent surfaces give the covariates spatial structure.
  auto smooth_field = [&](double scale) {
    std::vector<double> f(n);
    const double p1 = un(rng) * 6.28, p2 = un(rng) * 6.28;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c)
        f[id(r, c)] = std::sin(scale * static_cast<double>(c) / static_cast<double>(C) * 6.28 + p1) *
                      std::cos(scale * static_cast<double>(r) / static_cast<double>(R) * 6.28 + p2);
    return f;
  };
  const auto amen = smooth_field(1.3), wealth = smooth_field(0.9), relig = smooth_field(1.7);

  const double W_km = static_cast<double>(C) * spec.cell_km, H_km = static_cast<double>(R) * spec.cell_km;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t i = id(r, c);
      auto& rec = recs[i];
      const std::size_t st = (r / sb) * states_per_row + c / sb;
      rec.fips = fips[i];
      char sname[8];
      std::snprintf(sname, sizeof sname, "S%02zu", st + 1);
      rec.state = sname;
      const double x = (static_cast<double>(c) + 0.5) * spec.cell_km;
      const double y = (static_cast<double>(r) + 0.5) * spec.cell_km;
      rec.x_km = dataset::Cell::of(x);
      rec.y_km = dataset::Cell::of(y);
      const bool coastal = coast_rank[i] > 0;
      rec.coastal = dataset::Cell::of(coastal ? 1.0 : 0.0);
      rec.coast_distance_km =
          dataset::Cell::of(coastal ? 2.0 + 18.0 * un(rng) : std::min({x, W_km - x, H_km - y}));
      const double pd = std::exp(3.6 + 1.1 * nd(rng) + (coastal ? 0.6 : 0.0));
      rec.population_density = dataset::Cell::of(pd);
      const double u = un(rng);
      rec.urban = dataset::Cell::of(u < 0.15 ? 1.0 : 0.0);
      rec.rural = dataset::Cell::of(u > 0.5 ? 1.0 : 0.0);
      const double adh = clamp(52.0 + 10.0 * relig[i] + 8.0 * nd(rng), 8.0, 95.0);
      rec.adherents_pct = dataset::Cell::of(adh);
      rec.catholics_pct = dataset::Cell::of(clamp(adh * (0.3 + 0.1 * nd(rng)), 0.0, adh));
      rec.evangelical_pct = dataset::Cell::of(clamp(adh * (0.35 + 0.1 * nd(rng)), 0.0, adh));
      rec.mainline_pct = dataset::Cell::of(clamp(adh * (0.2 + 0.05 * nd(rng)), 0.0, adh));
      rec.religious_diversity = dataset::Cell::of(clamp(0.6 + 0.1 * nd(rng), 0.05, 0.95));
      rec.education_pct = dataset::Cell::of(clamp(17.0 + 4.0 * wealth[i] + 4.0 * nd(rng), 3.0, 60.0));
      rec.nonwhites_pct = dataset::Cell::of(clamp(std::exp(2.2 + 0.9 * nd(rng)), 0.2, 95.0));
      rec.highway = dataset::Cell::of(un(rng) < 0.3 ? 1.0 : 0.0);
      rec.right_to_work = dataset::Cell::of(r >= R / 2 ? 1.0 : 0.0);
      rec.amenities = dataset::Cell::of(2.0 * amen[i] + 0.8 * nd(rng) + (coastal ? 1.0 : 0.0));
      rec.region = region_at(r, c, R, C);
      rec.gov_expenditure_pc = dataset::Cell::of(std::exp(6.3 + 0.3 * nd(rng)));
      const double tax = std::exp(6.35 + 0.25 * wealth[i] + 0.35 * nd(rng));
      rec.tax_income_pc = dataset::Cell::of(tax);
      rec.extras["total_intergov_pc"] = dataset::Cell::of(std::exp(6.0 + 0.4 * nd(rng)));
      rec.extras["state_intergov_pc"] = dataset::Cell::of(std::exp(5.7 + 0.4 * nd(rng)));
      rec.extras["property_taxes_pc"] = dataset::Cell::of(tax * clamp(0.7 + 0.1 * nd(rng), 0.2, 1.0));
      rec.adherents_1980_pct = dataset::Cell::of(clamp(adh + 4.0 * nd(rng), 5.0, 98.0));
      rec.population_density_1980 = dataset::Cell::of(pd * std::exp(-0.1 + 0.1 * nd(rng)));
    }

  // Contiguity with islands detached, then linked to their landward cell.
  std::vector<std::pair<std::string, std::string>> adj, links;
  std::vector<weights::IndexPair> adj_idx, link_idx;
  for (const auto& [a, b] : weights::rook_lattice(R, C)) {
    if (is_island(a) || is_island(b)) continue;
    adj.emplace_back(fips[a], fips[b]);
    adj_idx.emplace_back(a, b);
  }
  for (std::size_t i : island_cells) {
    links.emplace_back(fips[i], fips[i - 1]);
    link_idx.emplace_back(i, i - 1);
  }
  const auto W = weights::ContiguityWeights::build(n, adj_idx, link_idx);

  // Stations: spread evenly along the coast; some counties host two.
  std::vector<std::size_t> coastal_cells;
  for (std::size_t i = 0; i < n; ++i)
    if (coast_rank[i] == 1) coastal_cells.push_back(i);
  std::sort(coastal_cells.begin(), coastal_cells.end(),
            [&](std::size_t a, std::size_t b) { return coast_pos[a] != coast_pos[b] ? coast_pos[a] < coast_pos[b] : a < b; });
  std::vector<std::size_t> hosts;
  for (std::size_t k = 0; k < spec.station_counties; ++k)
    hosts.push_back(coastal_cells[k * coastal_cells.size() / spec.station_counties]);
  std::vector<slr::StationRecord> stations;
  std::vector<double> raw;
  for (std::size_t k = 0; k < spec.stations; ++k) {
    const std::size_t h = hosts[k < hosts.size() ? k : (k - hosts.size()) * hosts.size() / (spec.stations - hosts.size() + 1)];
    slr::StationRecord s;
    char sid[16];
    std::snprintf(sid, sizeof sid, "ST%04zu", k + 1);
    s.station_id = sid;
    s.x_km = recs[h].x_km.value + (un(rng) - 0.5) * 0.4 * spec.cell_km;
    s.y_km = recs[h].y_km.value + (un(rng) - 0.5) * 0.4 * spec.cell_km;
    const double t = coast_pos[h] / static_cast<double>(2 * R + C);
    raw.push_back(std::sin(3.0 * 3.14159265358979 * t) + 0.8 * t + 0.5 * nd(rng));
    s.ci_halfwidth = 0.15 + 0.6 * un(rng);
    s.first_year = 1900 + static_cast<int>(75 * un(rng));
    s.last_year = 2012 + static_cast<int>(4 * un(rng));
    s.county_fips = fips[h];
    stations.push_back(s);
  }
  {
    const double m = stats::mean(raw), sd = stats::sample_sd(raw);
    for (std::size_t k = 0; k < stations.size(); ++k)
      stations[k].trend = spec.station_trend_mean + spec.station_trend_sd * (raw[k] - m) / sd;
  }
  std::vector<slr::StationRecord> window = stations;
  for (auto& s : window) {
    s.first_year = 1979;
    s.last_year = 2007;
    s.trend += 0.4 * nd(rng);
    s.ci_halfwidth *= 1.6;
  }

  // Incomplete records: inland counties with a missing amenity score.
  std::vector<std::size_t> incomplete;
  while (incomplete.size() < spec.incomplete) {
    const auto i = static_cast<std::size_t>(un(rng) * static_cast<double>(n)) % n;
    if (coast_rank[i] < 0 && std::find(incomplete.begin(), incomplete.end(), i) == incomplete.end())
      incomplete.push_back(i);
  }

  // Incomes. log y1980 and the 1980s change depend on 1980 covariates;
  // growth after 1990 follows g = beta y0 + pi, pi from a lag model.
  const auto county_slr = slr::extrapolate_nearest(stations, recs);
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::VectorXd y80(ni), y90(ni), xb(ni);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = recs[i];
    const auto ii = static_cast<Eigen::Index>(i);
    y80[ii] = 9.3 + 0.12 * wealth[i] + 0.08 * nd(rng);
    const double s = county_slr[i].slr / 1000.0;
    const double cd = rec.coast_distance_km.value / 1000.0;
    xb[ii] = 0.594 * s - 44.4 * s * s - 0.005 * cd + 0.008 * cd * cd - 0.0006 * rec.gov_expenditure_pc.value / 1000.0 +
             0.0034 * rec.tax_income_pc.value / 1000.0 + 0.0004 * rec.education_pct.value / 10.0 +
             0.0008 * rec.amenities.value - 0.0005 * rec.rural.value + 0.0003 * rec.urban.value -
             0.0002 * rec.nonwhites_pct.value / 10.0 + 0.001 * rec.religious_diversity.value +
             0.0006 * static_cast<double>(static_cast<int>(*rec.region)) / 7.0 +
             0.0004 * (rec.adherents_pct.value - 50.0) + 0.002 * std::log(rec.population_density.value);
  }
  const auto years = dataset::income_years();
  std::vector<int> ends;
  for (int y : years)
    if (y >= 2000) ends.push_back(y);
  // The last column is the 1980s decade, generated by the same equation
  // so that differencing removes the county effect.
  const auto periods = static_cast<Eigen::Index>(ends.size());
  Eigen::MatrixXd rhs(ni, periods + 1);
  const Eigen::VectorXd common = normals(rng, ni);
  for (Eigen::Index t = 0; t <= periods; ++t) {
    const Eigen::VectorXd own = normals(rng, ni);
    rhs.col(t) = xb + 0.0035 * (0.8 * common + 0.6 * own);
  }
  const Eigen::MatrixXd pi = ShiftSolver(W, spec.rho).solve(rhs);
  {
    Eigen::VectorXd g80 = spec.beta * y80 + pi.col(periods);
    g80.array() += spec.mean_growth - g80.mean();
    y90 = y80 + 10.0 * g80;
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto& rec = recs[i];
    const auto ii = static_cast<Eigen::Index>(i);
    rec.income[1980] = dataset::Cell::of(std::round(std::exp(y80[ii]) * 100.0) / 100.0);
    rec.income[1990] = dataset::Cell::of(std::round(std::exp(y90[ii]) * 100.0) / 100.0);
  }
  for (std::size_t t = 0; t < ends.size(); ++t) {
    const auto tt = static_cast<Eigen::Index>(t);
    Eigen::VectorXd g = spec.beta * y90 + pi.col(tt);
    g.array() += spec.mean_growth - g.mean();
    const double T = ends[t] - 1990;
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      recs[i].income[ends[t]] = dataset::Cell::of(std::round(std::exp(y90[ii] + T * g[ii]) * 100.0) / 100.0);
    }
  }
  for (std::size_t i : incomplete) recs[i].amenities = dataset::Cell{};

  CountySystemFiles files;
  const std::filesystem::path d(dir);
  auto open = [&](const std::string& name, std::string& slot) {
    slot = (d / name).string();
    std::ofstream out(slot);
    if (!out) throw PreconditionError("cannot write '" + slot + "'");
    return out;
  };
  {
    auto out = open("counties.csv", files.counties);
    dataset::write_counties(out, recs);
  }
  {
    auto out = open("stations.csv", files.stations);
    slr::write_stations(out, stations);
  }
  {
    auto out = open("stations_1979_2007.csv", files.stations_window);
    slr::write_stations(out, window);
  }
  {
    auto out = open("adjacency.csv", files.adjacency);
    weights::write_pairs(out, adj);
  }
  {
    auto out = open("island_links.csv", files.island_links);
    weights::write_pairs(out, links);
  }
  {
    auto out = open("coast_order.csv", files.coast_order);
    std::vector<std::size_t> all;
    for (std::size_t i = 0; i < n; ++i)
      if (coast_rank[i] > 0) all.push_back(i);
    std::sort(all.begin(), all.end(), [&](std::size_t a, std::size_t b) {
      if (coast_pos[a] != coast_pos[b]) return coast_pos[a] < coast_pos[b];
      return coast_rank[a] != coast_rank[b] ? coast_rank[a] < coast_rank[b] : a < b;
    });
    out << "fips,state\n";
    for (std::size_t i : all) out << fips[i] << ',' << recs[i].state << '\n';
  }
  {
    auto out = open("depletion_groups.csv", files.depletion_groups);
    // Four groups of contiguous states in the southern interior.
    const std::size_t sr = (R + sb - 1) / sb;
    out << "group,state\n";
    for (int g = 0; g < 4; ++g) {
      const std::size_t row = std::min(sr - 1, sr / 2 + static_cast<std::size_t>(g % 2));
      for (std::size_t k = 0; k < 2; ++k) {
        const std::size_t col = std::min(states_per_row - 1, 2 + static_cast<std::size_t>(g / 2) * 2 + k);
        char sname[8];
        std::snprintf(sname, sizeof sname, "S%02zu", row * states_per_row + col + 1);
        out << g + 1 << ',' << sname << '\n';
      }
    }
  }
  return files;
}

}  // namespace slrgrowth::synth
