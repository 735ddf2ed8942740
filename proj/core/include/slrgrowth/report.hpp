#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "slrgrowth/matching.hpp"
#include "slrgrowth/regression.hpp"
#include "slrgrowth/spatial.hpp"

namespace slrgrowth::report {

/// Lower-case hex SHA-256 digests.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

std::string read_file(const std::string& path);
/// Writes `bytes` to `path`, creating parent directories.
void write_file(const std::string& path, const std::string& bytes);

/// Fixed-format number: `digits` significant digits, "NA" for non-finite.
std::string num(double v, int digits = 6);

/// Coefficient table: term, estimate, se, z (or t), p, band.
void write_coefficients_tsv(std::ostream& out, const spatial::SpatialFit& fit);
void write_coefficients_tsv(std::ostream& out, const regression::OlsFit& fit);
void write_impacts_tsv(std::ostream& out, const spatial::ImpactMeasures& im);
void write_lm_tsv(std::ostream& out, const spatial::LmReport& lm);

/// Pairs, effect and balance table of a matching run.
void write_matching_tsv(std::ostream& out, const matching::Matching& m, const matching::Effect& effect,
                        const matching::BalanceReport& balance, const std::vector<std::string>& unit_ids);

struct FigureBar {
  std::string fips;
  std::string state;
  double height = 0.0;
};

/// Bar chart of per-county values in the given order; consecutive counties
/// of the same state form a group and groups alternate black and white.
/// Output bytes depend only on the input.
std::string bar_chart_svg(const std::vector<FigureBar>& bars, const std::string& title);

}  // namespace slrgrowth::report
