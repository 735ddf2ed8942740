#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace slrgrowth::stats {

// Two-sided and upper-tail p-values. Non-finite statistics map to NaN.
double normal_two_sided_p(double z);
double student_t_two_sided_p(double t, double dof);
double chi_squared_upper_p(double stat, double dof);
double fisher_f_upper_p(double f, double dof1, double dof2);
double normal_quantile(double p);

/// Nearest-rank percentile (inclusive): the value at 1-based rank
/// ceil(q * n) of the sorted sample, rank clamped to [1, n].
/// q is a fraction in [0, 1].
double nearest_rank_quantile(std::span<const double> values, double q);

double mean(std::span<const double> x);
/// Sample standard deviation with the n-1 denominator; 0 for n == 1.
double sample_sd(std::span<const double> x);

/// Significance band of a p-value following the table legend
/// p<0.1 (•), p<0.05 (*), p<0.01 (**), p<0.001 (***).
enum class Band { none, dot, one, two, three };
Band band_of(double p);
std::string band_symbol(Band b);

struct KsResult {
  double statistic = 0.0;  // sup |F1 - F2|
  double p = 1.0;
};

/// Two-sample Kolmogorov-Smirnov statistic with the asymptotic
/// Kolmogorov distribution p-value (effective-n corrected).
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);
double ks_statistic(std::span<const double> a, std::span<const double> b);
double kolmogorov_upper_p(double lambda);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p = 1.0;
  bool zero_variance = false;
};

/// Welch two-sample t-test. When both groups have zero variance the
/// result is p = 1 with the zero_variance flag set.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

/// SplitMix64 step, used to derive independent stream seeds from a base seed.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace slrgrowth::stats
