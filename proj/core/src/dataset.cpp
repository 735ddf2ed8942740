#include "slrgrowth/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "slrgrowth/csv.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::dataset {

namespace {

enum class Kind { any, nonneg, percent, dummy, unit };

struct FieldSpec {
  const char* name;
  Cell CountyRecord::*member;
  Kind kind;
};

const std::vector<FieldSpec>& field_specs() {
  static const std::vector<FieldSpec> specs = {
      {"x_km", &CountyRecord::x_km, Kind::any},
      {"y_km", &CountyRecord::y_km, Kind::any},
      {"coastal", &CountyRecord::coastal, Kind::dummy},
      {"coast_distance_km", &CountyRecord::coast_distance_km, Kind::nonneg},
      {"gov_expenditure_pc", &CountyRecord::gov_expenditure_pc, Kind::nonneg},
      {"tax_income_pc", &CountyRecord::tax_income_pc, Kind::nonneg},
      {"population_density", &CountyRecord::population_density, Kind::nonneg},
      {"urban", &CountyRecord::urban, Kind::dummy},
      {"rural", &CountyRecord::rural, Kind::dummy},
      {"adherents_pct", &CountyRecord::adherents_pct, Kind::percent},
      {"catholics_pct", &CountyRecord::catholics_pct, Kind::percent},
      {"evangelical_pct", &CountyRecord::evangelical_pct, Kind::percent},
      {"mainline_pct", &CountyRecord::mainline_pct, Kind::percent},
      {"religious_diversity", &CountyRecord::religious_diversity, Kind::unit},
      {"education_pct", &CountyRecord::education_pct, Kind::percent},
      {"nonwhites_pct", &CountyRecord::nonwhites_pct, Kind::percent},
      {"highway", &CountyRecord::highway, Kind::dummy},
      {"right_to_work", &CountyRecord::right_to_work, Kind::dummy},
      {"amenities", &CountyRecord::amenities, Kind::any},
      {"adherents_1980_pct", &CountyRecord::adherents_1980_pct, Kind::percent},
      {"population_density_1980", &CountyRecord::population_density_1980, Kind::nonneg},
  };
  return specs;
}

bool valid_for(Kind k, double v) {
  if (!std::isfinite(v)) return false;
  switch (k) {
    case Kind::any: return true;
    case Kind::nonneg: return v >= 0.0;
    case Kind::percent: return v >= 0.0 && v <= 100.0;
    case Kind::dummy: return v == 0.0 || v == 1.0;
    case Kind::unit: return v >= 0.0 && v <= 1.0;
  }
  return false;
}

Cell parse_cell(const std::string& text, Kind kind) {
  if (text.empty() || text == "NA" || text == "na" || text == ".") return {};
  double v = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) return {std::numeric_limits<double>::quiet_NaN(), CellState::invalid};
  if (!valid_for(kind, v)) return {v, CellState::invalid};
  return Cell::of(v);
}

std::string income_column(int year) { return "income_" + std::to_string(year); }

constexpr std::string_view kRegionNames[] = {"NewEngland", "Mideast",   "GreatLakes",    "Plains",
                                             "Southeast",  "Southwest", "RockyMountain", "FarWest"};

void write_cell(std::ostream& out, const Cell& c) {
  if (c.state == CellState::present) out << c.value;
}

}  // namespace

double Cell::get() const {
  if (!ok()) throw PreconditionError("access to a missing or invalid cell");
  return value;
}

std::string_view region_name(Region r) { return kRegionNames[static_cast<int>(r)]; }

std::optional<Region> parse_region(std::string_view s) {
  for (int i = 0; i < kRegionCount; ++i) {
    if (kRegionNames[i] == s) return static_cast<Region>(i);
  }
  return std::nullopt;
}

std::vector<int> income_years() {
  std::vector<int> years = {1980, 1990};
  for (int y = 2000; y <= 2012; ++y) years.push_back(y);
  return years;
}

const std::vector<std::string>& numeric_field_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& f : field_specs()) v.emplace_back(f.name);
    return v;
  }();
  return names;
}

const Cell* CountyRecord::field(std::string_view name) const {
  for (const auto& f : field_specs()) {
    if (name == f.name) return &(this->*f.member);
  }
  if (name.rfind("income_", 0) == 0) {
    int year = 0;
    auto rest = name.substr(7);
    auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), year);
    if (ec == std::errc() && p == rest.data() + rest.size()) {
      auto it = income.find(year);
      return it == income.end() ? nullptr : &it->second;
    }
  }
  auto it = extras.find(std::string(name));
  return it == extras.end() ? nullptr : &it->second;
}

bool CountyRecord::complete() const {
  if (!region) return false;
  for (const auto& f : field_specs()) {
    if (!(this->*f.member).ok()) return false;
  }
  for (int y : income_years()) {
    auto it = income.find(y);
    if (it == income.end() || !it->second.ok() || !(it->second.value > 0.0)) return false;
  }
  return true;
}

std::string CountySchema::header_for(const std::string& field) const {
  auto it = rename.find(field);
  return it == rename.end() ? field : it->second;
}

std::vector<CountyRecord> parse_counties(std::istream& in, const CountySchema& schema,
                                         const std::string& source) {
  const auto table = io::CsvTable::parse(in, source);

  std::set<std::string> known;
  auto require = [&](const std::string& field) {
    const auto header = schema.header_for(field);
    known.insert(header);
    return table.column(header);
  };

  const std::size_t c_fips = require("fips");
  const std::size_t c_state = require("state");
  const std::size_t c_region = require("region");
  std::vector<std::pair<const FieldSpec*, std::size_t>> numeric;
  for (const auto& f : field_specs()) numeric.emplace_back(&f, require(f.name));
  std::vector<std::pair<int, std::size_t>> incomes;
  for (int y : income_years()) incomes.emplace_back(y, require(income_column(y)));

  std::vector<std::pair<std::string, std::size_t>> extra_cols;
  for (std::size_t c = 0; c < table.header().size(); ++c) {
    if (!known.count(table.header()[c])) extra_cols.emplace_back(table.header()[c], c);
  }

  std::vector<CountyRecord> out;
  out.reserve(table.rows());
  std::unordered_set<std::string> seen;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    CountyRecord rec;
    rec.fips = table.cell(r, c_fips);
    if (rec.fips.empty()) throw SchemaError(source + ": empty fips at data row " + std::to_string(r + 1));
    if (!seen.insert(rec.fips).second) throw DuplicateKeyError(source + ": duplicate fips '" + rec.fips + "'");
    rec.state = table.cell(r, c_state);
    rec.region = parse_region(table.cell(r, c_region));
    for (const auto& [spec, col] : numeric) rec.*(spec->member) = parse_cell(table.cell(r, col), spec->kind);
    for (const auto& [year, col] : incomes) {
      Cell c = parse_cell(table.cell(r, col), Kind::nonneg);
      if (c.ok() && c.value <= 0.0) c.state = CellState::invalid;
      rec.income[year] = c;
    }
    for (const auto& [name, col] : extra_cols) rec.extras[name] = parse_cell(table.cell(r, col), Kind::any);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CountyRecord> load_counties(const std::string& path, const CountySchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return parse_counties(in, schema, path);
}

void write_counties(std::ostream& out, std::span<const CountyRecord> records) {
  std::set<std::string> extra_names;
  for (const auto& r : records)
    for (const auto& [k, v] : r.extras) extra_names.insert(k);

  out << "fips,state,region";
  for (const auto& f : field_specs()) out << ',' << f.name;
  for (int y : income_years()) out << ',' << income_column(y);
  for (const auto& e : extra_names) out << ',' << e;
  out << '\n';

  const auto old_flags = out.flags();
  const auto old_prec = out.precision();
  out << std::setprecision(17);
  for (const auto& r : records) {
    out << r.fips << ',' << r.state << ',' << (r.region ? region_name(*r.region) : std::string_view{});
    for (const auto& f : field_specs()) {
      out << ',';
      write_cell(out, r.*(f.member));
    }
    for (int y : income_years()) {
      out << ',';
      auto it = r.income.find(y);
      if (it != r.income.end()) write_cell(out, it->second);
    }
    for (const auto& e : extra_names) {
      out << ',';
      auto it = r.extras.find(e);
      if (it != r.extras.end()) write_cell(out, it->second);
    }
    out << '\n';
  }
  out.flags(old_flags);
  out.precision(old_prec);
}

std::vector<CountyRecord> complete_cases(std::span<const CountyRecord> records) {
  std::vector<CountyRecord> out;
  for (const auto& r : records)
    if (r.complete()) out.push_back(r);
  return out;
}

std::size_t count_incomplete(std::span<const CountyRecord> records) {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const CountyRecord& r) { return !r.complete(); }));
}

double growth_rate(double log_y0, double log_yT, double years) {
  if (!(years >= 1.0)) throw DomainError("growth period must be at least one year");
  return (log_yT - log_y0) / years;
}

double growth_rate_from_income(double income0, double incomeT, double years) {
  if (!(income0 > 0.0) || !(incomeT > 0.0)) throw DomainError("income must be positive to take logs");
  return growth_rate(std::log(income0), std::log(incomeT), years);
}

GrowthPanel build_growth_panel(std::span<const CountyRecord> records, int end_year, int start_year) {
  if (end_year < 2000 || end_year > 2012) throw DomainError("period end must lie in 2000..2012");
  GrowthPanel p;
  p.start_year = start_year;
  p.end_year = end_year;
  const double years = static_cast<double>(end_year - start_year);
  for (const auto& r : records) {
    auto a = r.income.find(start_year);
    auto b = r.income.find(end_year);
    if (a == r.income.end() || b == r.income.end() || !a->second.ok() || !b->second.ok()) continue;
    const double l0 = std::log(a->second.value);
    p.records.push_back(r);
    p.y0.push_back(l0);
    p.g.push_back(growth_rate(l0, std::log(b->second.value), years));
  }
  return p;
}

double religious_diversity(std::span<const double> shares) {
  double s = 0.0;
  for (double v : shares) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("denomination share outside [0,1]");
    s += v * v;
  }
  return 1.0 - s;
}

Column numeric_column(std::span<const CountyRecord> records, const std::string& field) {
  Column c{field, {}};
  c.values.reserve(records.size());
  for (const auto& r : records) {
    const Cell* cell = r.field(field);
    if (!cell) throw SchemaError("unknown field '" + field + "' for county " + r.fips);
    if (!cell->ok()) throw PreconditionError("field '" + field + "' missing for county " + r.fips);
    c.values.push_back(cell->value);
  }
  return c;
}

DescriptiveStats descriptive_stats(std::span<const Column> columns, const std::vector<bool>& mask) {
  DescriptiveStats out;
  for (const auto& col : columns) {
    if (!mask.empty() && mask.size() != col.values.size())
      throw DimensionError("subsample mask length differs from column '" + col.name + "'");
    std::vector<double> sel;
    for (std::size_t i = 0; i < col.values.size(); ++i)
      if (mask.empty() || mask[i]) sel.push_back(col.values[i]);
    if (sel.empty()) throw PreconditionError("empty subsample for '" + col.name + "'");
    out.rows.push_back({col.name, stats::mean(sel), stats::sample_sd(sel), sel.size()});
  }
  return out;
}

void write_descriptive_tsv(std::ostream& out, const DescriptiveStats& stats) {
  out << "variable\tmean\tsd\tn\n";
  for (const auto& r : stats.rows) {
    out << r.variable << '\t' << std::setprecision(10) << r.mean << '\t' << r.sd << '\t' << r.n << '\n';
  }
}

std::vector<std::size_t> outlier_filter(std::span<const TrimVariable> variables, double lower_q, double upper_q) {
  if (variables.empty()) return {};
  const std::size_t n = variables.front().values.size();
  std::vector<bool> drop(n, false);
  for (const auto& v : variables) {
    if (v.values.size() != n) throw DimensionError("trim variable '" + v.name + "' has a different length");
    if (n == 0) break;
    const double lo = stats::nearest_rank_quantile(v.values, lower_q);
    const double hi = stats::nearest_rank_quantile(v.values, upper_q);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = v.values[i];
      const bool low = v.lower_inclusive ? x <= lo : x < lo;
      const bool high = v.upper_inclusive ? x >= hi : x > hi;
      if (low || high) drop[i] = true;
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (!drop[i]) keep.push_back(i);
  return keep;
}

}  // namespace slrgrowth::dataset
