#include "slrgrowth/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::matching {

namespace {

constexpr int kMaxIrls = 100;
constexpr double kCoefTol = 1e-11;
constexpr double kDevianceTol = 1e-10;
constexpr double kProbFloor = std::numeric_limits<double>::epsilon();

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double clamp_prob(double p) { return std::clamp(p, kProbFloor, 1.0 - kProbFloor); }

double deviance(const Eigen::VectorXd& d, const Eigen::VectorXd& p) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const double q = clamp_prob(p[i]);
    s += d[i] > 0.5 ? std::log(q) : std::log1p(-q);
  }
  return -2.0 * s;
}

}  // namespace

PropensityKind parse_propensity_kind(std::string_view s) {
  if (s == "logit") return PropensityKind::logit;
  if (s == "probit") return PropensityKind::probit;
  if (s == "lpm") return PropensityKind::lpm;
  throw DomainError("unknown propensity model '" + std::string(s) + "' (logit|probit|lpm)");
}

std::string_view kind_name(PropensityKind k) {
  switch (k) {
    case PropensityKind::logit: return "logit";
    case PropensityKind::probit: return "probit";
    case PropensityKind::lpm: return "lpm";
  }
  return "?";
}

CaliperMode parse_caliper_mode(std::string_view s) {
  if (s == "score_sd") return CaliperMode::score_sd;
  if (s == "covariate_sd") return CaliperMode::covariate_sd;
  throw DomainError("unknown caliper mode '" + std::string(s) + "' (score_sd|covariate_sd)");
}

PropensityModel fit_propensity(const Eigen::VectorXd& d, const regression::DesignMatrix& X, PropensityKind kind) {
  const Eigen::Index n = d.size();
  if (X.rows() != n) throw DimensionError("treatment vector and design differ in length");
  double treated = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d[i] != 0.0 && d[i] != 1.0) throw DomainError("treatment indicator must be 0 or 1");
    treated += d[i];
  }
  if (treated == 0.0 || treated == static_cast<double>(n)) throw PreconditionError("treatment indicator is constant");

  PropensityModel m;
  m.kind = kind;
  m.names = X.names;

  if (kind == PropensityKind::lpm) {
    auto fit = regression::ols(d, X);
    m.coefficients = fit.beta;
    m.scores = fit.fitted;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (m.scores[i] < 0.0 || m.scores[i] > 1.0) {
        m.clipped = true;
        m.scores[i] = std::clamp(m.scores[i], 0.0, 1.0);
      }
    }
    m.deviance = deviance(d, m.scores);
    return m;
  }

  const bool logit = kind == PropensityKind::logit;
  auto link = [&](double p) { return logit ? std::log(p / (1.0 - p)) : stats::normal_quantile(p); };
  auto inv = [&](double eta) { return logit ? 1.0 / (1.0 + std::exp(-eta)) : norm_cdf(eta); };
  auto deriv = [&](double eta, double p) { return logit ? p * (1.0 - p) : norm_pdf(eta); };

  Eigen::VectorXd eta(n), p(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    eta[i] = link((d[i] + 0.5) / 2.0);
    p[i] = inv(eta[i]);
  }
  double dev = deviance(d, p);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(X.cols());
  m.converged = false;
  for (int it = 1; it <= kMaxIrls; ++it) {
    Eigen::VectorXd sw(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double pi = clamp_prob(p[i]);
      const double mu = std::max(deriv(eta[i], pi), 1e-300);
      const double var = pi * (1.0 - pi);
      z[i] = eta[i] + (d[i] - pi) / mu;
      sw[i] = std::sqrt(mu * mu / var);
    }
    const Eigen::MatrixXd xw = sw.asDiagonal() * X.X;
    const Eigen::VectorXd prev = beta;
    try {
      beta = regression::QrLeastSquares(xw, X.names).solve(Eigen::VectorXd(sw.cwiseProduct(z)));
    } catch (const SingularityError&) {
      // Weights underflow once the fit separates; keep the last iterate and let the check below flag it.
      beta = prev;
      break;
    }
    eta = X.X * beta;
    for (Eigen::Index i = 0; i < n; ++i) p[i] = inv(eta[i]);
    const double dev_new = deviance(d, p);
    m.iterations = it;
    // Fisher scoring is only linear for probit, so the coefficients must settle too.
    const bool done = std::abs(dev_new - dev) / (std::abs(dev_new) + 0.1) < kDevianceTol &&
                      (beta - prev).cwiseAbs().maxCoeff() < kCoefTol * (1.0 + beta.cwiseAbs().maxCoeff());
    dev = dev_new;
    if (done) {
      m.converged = true;
      break;
    }
  }
  m.coefficients = beta;
  m.deviance = dev;

  std::size_t extreme = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (p[i] < 1e-8 || p[i] > 1.0 - 1e-8) ++extreme;
  if (extreme * 10 > static_cast<std::size_t>(n) || (dev < 1e-6)) {
    m.separation = true;
    m.converged = false;
    // Blame the covariate with the largest standardized coefficient.
    Eigen::Index j = 0;
    double worst = -1.0;
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const Eigen::ArrayXd col = X.X.col(c).array();
      const double sd = std::sqrt((col - col.mean()).square().mean());
      const double size = sd > 0.0 ? std::abs(beta[c]) * sd : 0.0;
      if (size > worst) {
        worst = size;
        j = c;
      }
    }
    m.note = "fitted probabilities at 0 or 1; coefficient '" + X.names[static_cast<std::size_t>(j)] +
             "' diverging (" + std::to_string(beta[j]) + ")";
  } else if (!m.converged) {
    m.note = "IRLS stopped after " + std::to_string(kMaxIrls) + " iterations";
  }
  m.scores.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) m.scores[i] = clamp_prob(p[i]);
  return m;
}

Matching match_units(const Eigen::VectorXd& scores, const std::vector<bool>& treated, const MatchConfig& config,
                     const Eigen::MatrixXd& covariates) {
  if (!(config.caliper > 0.0)) throw DomainError("caliper must be positive");
  if (config.controls_per_treated < 1) throw DomainError("controls_per_treated must be at least 1");
  const auto n = static_cast<std::size_t>(scores.size());
  if (treated.size() != n) throw DimensionError("scores and treatment flags differ in length");
  const bool by_cov = config.mode == CaliperMode::covariate_sd;
  if (by_cov && static_cast<std::size_t>(covariates.rows()) != n)
    throw DimensionError("covariate caliper needs one covariate row per unit");

  std::vector<std::size_t> t_idx, c_idx;
  for (std::size_t i = 0; i < n; ++i) (treated[i] ? t_idx : c_idx).push_back(i);

  Matching out;
  out.n_treated = t_idx.size();
  if (t_idx.empty() || c_idx.empty()) return out;

  std::vector<double> all(scores.data(), scores.data() + scores.size());
  out.score_caliper = config.caliper * stats::sample_sd(all);

  Eigen::VectorXd cov_tol;
  if (by_cov) {
    cov_tol.resize(covariates.cols());
    for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
      std::vector<double> col(static_cast<std::size_t>(covariates.rows()));
      for (Eigen::Index i = 0; i < covariates.rows(); ++i) col[static_cast<std::size_t>(i)] = covariates(i, j);
      cov_tol[j] = config.caliper * stats::sample_sd(col);
    }
  }
  auto admissible = [&](std::size_t t, std::size_t c) {
    if (!by_cov) return std::abs(scores[static_cast<Eigen::Index>(t)] - scores[static_cast<Eigen::Index>(c)]) <=
                        out.score_caliper;
    for (Eigen::Index j = 0; j < covariates.cols(); ++j)
      if (std::abs(covariates(static_cast<Eigen::Index>(t), j) - covariates(static_cast<Eigen::Index>(c), j)) >
          cov_tol[j])
        return false;
    return true;
  };

  std::mt19937_64 rng(stats::derive_seed(config.seed, 0));
  std::vector<std::uint64_t> priority(c_idx.size());
  for (auto& v : priority) v = rng();
  std::vector<std::size_t> order = t_idx;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  std::vector<bool> used(c_idx.size(), false);
  const auto k = static_cast<std::size_t>(config.controls_per_treated);
  for (std::size_t t : order) {
    MatchedSet set;
    set.treated = t;
    std::vector<bool> taken(c_idx.size(), false);
    for (std::size_t r = 0; r < k; ++r) {
      std::size_t best = c_idx.size();
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c_idx.size(); ++j) {
        if (used[j] || taken[j]) continue;
        const double dist =
            std::abs(scores[static_cast<Eigen::Index>(t)] - scores[static_cast<Eigen::Index>(c_idx[j])]);
        if (dist < best_d || (dist == best_d && best < c_idx.size() && priority[j] < priority[best])) {
          if (!admissible(t, c_idx[j])) continue;
          best = j;
          best_d = dist;
        }
      }
      if (best == c_idx.size()) break;
      taken[best] = true;
      if (!config.replace) used[best] = true;
      set.controls.push_back(c_idx[best]);
    }
    if (!set.controls.empty()) out.sets.push_back(std::move(set));
  }
  return out;
}

Effect att(const Matching& m, const Eigen::VectorXd& y) {
  if (m.sets.empty()) throw PreconditionError("no matched treated units");
  std::vector<double> tau;
  tau.reserve(m.sets.size());
  for (const auto& s : m.sets) {
    double c = 0.0;
    for (std::size_t j : s.controls) {
      if (j >= static_cast<std::size_t>(y.size())) throw DimensionError("matched index outside the outcome vector");
      c += y[static_cast<Eigen::Index>(j)];
    }
    tau.push_back(y[static_cast<Eigen::Index>(s.treated)] - c / static_cast<double>(s.controls.size()));
  }
  Effect e;
  e.n_matched = tau.size();
  e.estimate = stats::mean(tau);
  double ss = 0.0;
  for (double t : tau) ss += (t - e.estimate) * (t - e.estimate);
  const double nu = static_cast<double>(tau.size());
  e.se = std::sqrt(ss) / nu;
  if (e.se > 0.0) {
    e.z = e.estimate / e.se;
    e.p = stats::normal_two_sided_p(e.z);
  } else {
    e.z = 0.0;
    e.p = e.estimate == 0.0 ? 1.0 : 0.0;
  }
  return e;
}

bool BalanceReport::balanced(double alpha) const {
  return std::all_of(rows.begin(), rows.end(), [&](const BalanceRow& r) {
    return r.t_p >= alpha && r.ks_p >= alpha && r.ks_boot_p >= alpha;
  });
}

BalanceReport balance(const Matching& m, const regression::DesignMatrix& X, std::uint64_t seed, int bootstrap) {
  if (m.sets.empty()) throw PreconditionError("no matched treated units");
  if (bootstrap < 1) throw DomainError("bootstrap replicate count must be positive");
  std::vector<std::size_t> ti, ci;
  for (const auto& s : m.sets) {
    ti.push_back(s.treated);
    ci.insert(ci.end(), s.controls.begin(), s.controls.end());
  }
  BalanceReport rep;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    if (X.names[static_cast<std::size_t>(j)] == regression::kIntercept) continue;
    std::vector<double> a, b;
    for (auto i : ti) a.push_back(X.X(static_cast<Eigen::Index>(i), j));
    for (auto i : ci) b.push_back(X.X(static_cast<Eigen::Index>(i), j));
    BalanceRow row;
    row.variable = X.names[static_cast<std::size_t>(j)];
    row.mean_treated = stats::mean(a);
    row.mean_control = stats::mean(b);
    const auto w = stats::welch_t_test(a, b);
    row.t_p = w.p;
    row.zero_variance = w.zero_variance;
    const auto ks = stats::ks_two_sample(a, b);
    row.ks_d = ks.statistic;
    row.ks_p = ks.p;

    std::vector<double> pooled = a;
    pooled.insert(pooled.end(), b.begin(), b.end());
    std::mt19937_64 rng(stats::derive_seed(seed, static_cast<std::uint64_t>(j) + 1));
    std::vector<double> ra(a.size()), rb(b.size());
    int exceed = 0;
    for (int r = 0; r < bootstrap; ++r) {
      for (auto& v : ra) v = pooled[rng() % pooled.size()];
      for (auto& v : rb) v = pooled[rng() % pooled.size()];
      if (stats::ks_statistic(ra, rb) >= ks.statistic - 1e-12) ++exceed;
    }
    row.ks_boot_p = (exceed + 1.0) / (bootstrap + 1.0);
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace slrgrowth::matching
