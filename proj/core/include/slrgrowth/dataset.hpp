#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace slrgrowth::dataset {

enum class CellState : unsigned char { present, missing, invalid };

/// A numeric cell with an explicit presence marker. Missing or invalid
/// cells never masquerade as zeros.
struct Cell {
  double value = std::numeric_limits<double>::quiet_NaN();
  CellState state = CellState::missing;

  static Cell of(double v) { return {v, CellState::present}; }
  bool ok() const { return state == CellState::present; }
  double get() const;  // throws PreconditionError unless present
};

enum class Region { NewEngland, Mideast, GreatLakes, Plains, Southeast, Southwest, RockyMountain, FarWest };

std::string_view region_name(Region r);
std::optional<Region> parse_region(std::string_view s);
inline constexpr int kRegionCount = 8;

/// Years for which per-capita income is carried.
std::vector<int> income_years();

struct CountyRecord {
  std::string fips;
  std::string state;
  Cell x_km, y_km;
  Cell coastal;  // 0/1
  Cell coast_distance_km;
  std::map<int, Cell> income;  // per-capita income, US$
  Cell gov_expenditure_pc;     // US$, 1992
  Cell tax_income_pc;          // US$, 1992
  Cell population_density;     // per square mile
  Cell urban, rural;
  Cell adherents_pct, catholics_pct, evangelical_pct, mainline_pct;
  Cell religious_diversity;
  Cell education_pct, nonwhites_pct;
  Cell highway, right_to_work;
  Cell amenities;
  std::optional<Region> region;
  Cell adherents_1980_pct;
  Cell population_density_1980;
  /// Optional numeric columns beyond the fixed schema (alternative
  /// government-finance measures and the like).
  std::map<std::string, Cell> extras;
  std::optional<std::vector<double>> denomination_shares;

  bool is_coastal() const { return coastal.ok() && coastal.value == 1.0; }
  const Cell* field(std::string_view name) const;
  /// Every field a model may use is present and valid.
  bool complete() const;
};

/// Canonical numeric field names, in schema order (income columns excluded).
const std::vector<std::string>& numeric_field_names();

/// Maps canonical field names onto CSV header names. Fields not listed use
/// their canonical name.
struct CountySchema {
  std::map<std::string, std::string> rename;
  std::string header_for(const std::string& field) const;
};

std::vector<CountyRecord> load_counties(const std::string& path, const CountySchema& schema = {});
std::vector<CountyRecord> parse_counties(std::istream& in, const CountySchema& schema = {},
                                         const std::string& source = "<stream>");
void write_counties(std::ostream& out, std::span<const CountyRecord> records);

std::vector<CountyRecord> complete_cases(std::span<const CountyRecord> records);
std::size_t count_incomplete(std::span<const CountyRecord> records);

/// (yT - y0) / T for log incomes.
double growth_rate(double log_y0, double log_yT, double years);
/// Growth rate from raw positive incomes.
double growth_rate_from_income(double income0, double incomeT, double years);

struct GrowthPanel {
  std::vector<CountyRecord> records;
  int start_year = 1990;
  int end_year = 2012;
  std::vector<double> g;   // average growth rate, log units per year
  std::vector<double> y0;  // log income at start_year
  std::size_t size() const { return records.size(); }
};

/// Keeps counties with both endpoint incomes; end_year in [2000, 2012].
GrowthPanel build_growth_panel(std::span<const CountyRecord> records, int end_year,
                               int start_year = 1990);

/// 1 - sum of squared denomination shares.
double religious_diversity(std::span<const double> shares);

struct Column {
  std::string name;
  std::vector<double> values;
};

Column numeric_column(std::span<const CountyRecord> records, const std::string& field);

struct VariableSummary {
  std::string variable;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct DescriptiveStats {
  std::vector<VariableSummary> rows;
};

/// Unweighted mean and n-1 standard deviation per column over the rows
/// selected by `mask` (all rows when empty).
DescriptiveStats descriptive_stats(std::span<const Column> columns, const std::vector<bool>& mask = {});
void write_descriptive_tsv(std::ostream& out, const DescriptiveStats& stats);

struct TrimVariable {
  std::string name;
  std::vector<double> values;
  bool lower_inclusive = true;
  bool upper_inclusive = true;
};

/// Indices of rows kept after removing, for every listed variable, rows at
/// or above its upper nearest-rank percentile or at or below its lower one.
std::vector<std::size_t> outlier_filter(std::span<const TrimVariable> variables,
                                        double lower_q = 0.05, double upper_q = 0.95);

}  // namespace slrgrowth::dataset
