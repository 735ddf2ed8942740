#include "slrgrowth/stats.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "slrgrowth/error.hpp"

namespace slrgrowth::stats {

namespace bm = boost::math;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

double normal_two_sided_p(double z) {
  if (!std::isfinite(z)) return std::isnan(z) ? kNaN : 0.0;
  return 2.0 * bm::cdf(bm::complement(bm::normal_distribution<>(), std::fabs(z)));
}

double student_t_two_sided_p(double t, double dof) {
  if (std::isnan(t) || !(dof > 0)) return kNaN;
  if (std::isinf(t)) return 0.0;
  return 2.0 * bm::cdf(bm::complement(bm::students_t_distribution<>(dof), std::fabs(t)));
}

double chi_squared_upper_p(double stat, double dof) {
  if (std::isnan(stat) || !(dof > 0)) return kNaN;
  if (std::isinf(stat)) return 0.0;
  if (stat <= 0.0) return 1.0;
  return bm::cdf(bm::complement(bm::chi_squared_distribution<>(dof), stat));
}

double fisher_f_upper_p(double f, double dof1, double dof2) {
  if (std::isnan(f) || !(dof1 > 0) || !(dof2 > 0)) return kNaN;
  if (std::isinf(f)) return 0.0;
  if (f <= 0.0) return 1.0;
  return bm::cdf(bm::complement(bm::fisher_f_distribution<>(dof1, dof2), f));
}

double normal_quantile(double p) { return bm::quantile(bm::normal_distribution<>(), p); }

double nearest_rank_quantile(std::span<const double> values, double q) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0,1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const auto n = static_cast<double>(v.size());
  // Guard against q*n landing a hair above an integer through rounding.
  double rank = std::ceil(q * n - 1e-9 * n);
  rank = std::clamp(rank, 1.0, n);
  return v[static_cast<std::size_t>(rank) - 1];
}

double mean(std::span<const double> x) {
  if (x.empty()) throw DomainError("mean of an empty sample");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.empty()) throw DomainError("sd of an empty sample");
  if (x.size() == 1) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

Band band_of(double p) {
  if (!(p < 0.1)) return Band::none;
  if (p < 0.001) return Band::three;
  if (p < 0.01) return Band::two;
  if (p < 0.05) return Band::one;
  return Band::dot;
}

std::string band_symbol(Band b) {
  switch (b) {
    case Band::none: return "";
    case Band::dot: return "•";
    case Band::one: return "*";
    case Band::two: return "**";
    case Band::three: return "***";
  }
  return "";
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("KS test needs two non-empty samples");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size());
  const double nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double kolmogorov_upper_p(double lambda) {
  if (lambda <= 0.0) return 1.0;
  // Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2)
  double sum = 0.0;
  double prev = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += (k % 2 == 1 ? term : -term);
    if (term <= 1e-12 * std::fabs(sum) || term <= 1e-300) break;
    if (std::fabs(term - prev) == 0.0) break;
    prev = term;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  KsResult r;
  r.statistic = ks_statistic(a, b);
  const double ne = static_cast<double>(a.size()) * static_cast<double>(b.size()) /
                    static_cast<double>(a.size() + b.size());
  const double sq = std::sqrt(ne);
  r.p = kolmogorov_upper_p((sq + 0.12 + 0.11 / sq) * r.statistic);
  return r;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw DomainError("Welch t-test needs two samples of size >= 2");
  WelchResult r;
  const double ma = mean(a), mb = mean(b);
  const double va = std::pow(sample_sd(a), 2), vb = std::pow(sample_sd(b), 2);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  if (se2 <= 0.0) {
    r.zero_variance = true;
    r.dof = na + nb - 2.0;
    r.p = 1.0;
    return r;
  }
  r.t = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 /
          ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
  r.p = student_t_two_sided_p(r.t, r.dof);
  return r;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

}  // namespace slrgrowth::stats
