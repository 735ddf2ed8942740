#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "slrgrowth/csv.hpp"
#include "slrgrowth/dataset.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"
#include "slrgrowth/synth.hpp"

using namespace slrgrowth;
using namespace slrgrowth::dataset;

namespace {

std::string three_row_csv() {
  std::vector<CountyRecord> recs = {fixtures::county("01001"), fixtures::county("01003", 50, 0, true),
                                    fixtures::county("02001", 100, 0)};
  std::ostringstream out;
  write_counties(out, recs);
  return out.str();
}

// Blanks the named column in data row `row` (0-based) of a CSV text.
std::string blank_cell(const std::string& csv, const std::string& column, std::size_t row) {
  std::istringstream in(csv);
  auto t = io::CsvTable::parse(in);
  const auto c = t.column(column);
  std::istringstream lines(csv);
  std::string line, out;
  std::size_t r = 0;
  std::getline(lines, line);
  out = line + "\n";
  while (std::getline(lines, line)) {
    if (r++ == row) {
      auto cells = io::split_record(line);
      cells[c].clear();
      line.clear();
      for (std::size_t k = 0; k < cells.size(); ++k) line += (k ? "," : "") + cells[k];
    }
    out += line + "\n";
  }
  return out;
}

}  // namespace

TEST(Csv, QuotedFieldsAndHeaderIndex) {
  EXPECT_EQ(io::split_record(R"(a,"b,c",,"d ""q""")"), (std::vector<std::string>{"a", "b,c", "", "d \"q\""}));
  std::istringstream in("x,y\n1,2\n3,4\n");
  const auto t = io::CsvTable::parse(in);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cell(1, "y"), "4");
  EXPECT_THROW(t.column("z"), SchemaError);
}

TEST(Csv, RaggedRowIsASchemaError) {
  std::istringstream in("x,y\n1,2,3\n");
  EXPECT_THROW(io::CsvTable::parse(in), SchemaError);
}

TEST(Counties, ThreeRowRoundTrip) {
  std::istringstream in(three_row_csv());
  const auto recs = parse_counties(in);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1].fips, "01003");
  EXPECT_TRUE(recs[1].is_coastal());
  EXPECT_EQ(recs[2].x_km.get(), 100.0);
  EXPECT_EQ(recs[0].income.at(2012).get(), 20000.0 + 100.0 * 32);
  for (const auto& r : recs) EXPECT_TRUE(r.complete());
}

TEST(Counties, EmptyIncomeCellIsMissingNotZero) {
  std::istringstream in(blank_cell(three_row_csv(), "income_1990", 1));
  const auto recs = parse_counties(in);
  const auto& c = recs[1].income.at(1990);
  EXPECT_EQ(c.state, CellState::missing);
  EXPECT_FALSE(c.ok());
  EXPECT_THROW(c.get(), PreconditionError);
  EXPECT_FALSE(recs[1].complete());
  EXPECT_EQ(count_incomplete(recs), 1u);
  EXPECT_EQ(complete_cases(recs).size(), 2u);
}

TEST(Counties, InvalidValuesAreFlagged) {
  std::vector<CountyRecord> bad = {fixtures::county("01001")};
  bad[0].population_density = Cell::of(-3.0);
  bad[0].coastal = Cell::of(0.5);
  std::ostringstream out;
  write_counties(out, bad);
  std::istringstream in(out.str());
  const auto r = parse_counties(in)[0];
  EXPECT_EQ(r.population_density.state, CellState::invalid);
  EXPECT_EQ(r.coastal.state, CellState::invalid);
  EXPECT_FALSE(r.complete());
}

TEST(Counties, DuplicateFipsRejected) {
  std::vector<CountyRecord> recs = {fixtures::county("01001"), fixtures::county("01001")};
  std::ostringstream out;
  write_counties(out, recs);
  std::istringstream in(out.str());
  EXPECT_THROW(parse_counties(in), DuplicateKeyError);
}

TEST(Counties, MissingColumnRejected) {
  std::istringstream in("fips,state\n01001,S01\n");
  EXPECT_THROW(parse_counties(in), SchemaError);
}

TEST(Counties, SchemaRenamesHeaders) {
  auto csv = three_row_csv();
  csv.replace(csv.find("amenities"), 9, "amenity_index");
  std::istringstream in(csv);
  EXPECT_THROW(parse_counties(in), SchemaError);
  CountySchema schema;
  schema.rename["amenities"] = "amenity_index";
  std::istringstream in2(csv);
  EXPECT_EQ(parse_counties(in2, schema).size(), 3u);
}

TEST(CompleteCases, Degenerate) {
  std::vector<CountyRecord> recs = {fixtures::county("01001"), fixtures::county("01002")};
  EXPECT_EQ(complete_cases(recs).size(), 2u);
  for (auto& r : recs) r.amenities = Cell{};
  EXPECT_TRUE(complete_cases(recs).empty());
}

TEST(Growth, Arithmetic) {
  EXPECT_EQ(growth_rate(10.0, 10.0, 22), 0.0);
  EXPECT_NEAR(growth_rate(10.0, 10.88, 22), 0.04, 1e-15);
  EXPECT_NEAR(growth_rate_from_income(100.0, 100.0 * std::exp(0.22), 22), 0.01, 1e-15);
  EXPECT_THROW(growth_rate(1, 2, 0.5), DomainError);
  EXPECT_THROW(growth_rate_from_income(0.0, 1.0, 10), DomainError);
}

TEST(Growth, PanelSkipsMissingEndpoints) {
  std::vector<CountyRecord> recs = {fixtures::county("01001"), fixtures::county("01002")};
  recs[1].income[2005] = Cell{};
  const auto p = build_growth_panel(recs, 2005);
  EXPECT_EQ(p.size(), 1u);
  EXPECT_NEAR(p.g[0], (std::log(22500.0) - std::log(21000.0)) / 15.0, 1e-15);
  EXPECT_THROW(build_growth_panel(recs, 1999), DomainError);
}

TEST(Diversity, ClosedForms) {
  EXPECT_EQ(religious_diversity(std::vector<double>{1.0}), 0.0);
  EXPECT_DOUBLE_EQ(religious_diversity(std::vector<double>{0.5, 0.5}), 0.5);
  std::vector<double> eq(133, 1.0 / 133.0);
  EXPECT_NEAR(religious_diversity(eq), 1.0 - 1.0 / 133.0, 1e-12);
  EXPECT_NEAR(religious_diversity(eq), 0.99248, 1e-5);
  EXPECT_THROW(religious_diversity(std::vector<double>{1.2}), DomainError);
}

TEST(Descriptive, MeanSdAndMask) {
  std::vector<Column> cols = {{"a", {2, 4, 6}}, {"c", {5, 5, 5}}};
  auto s = descriptive_stats(cols);
  EXPECT_DOUBLE_EQ(s.rows[0].mean, 4.0);
  EXPECT_DOUBLE_EQ(s.rows[0].sd, 2.0);
  EXPECT_EQ(s.rows[1].sd, 0.0);
  s = descriptive_stats(cols, {true, false, true});
  EXPECT_EQ(s.rows[0].n, 2u);
  EXPECT_DOUBLE_EQ(s.rows[0].mean, 4.0);
  EXPECT_THROW(descriptive_stats(cols, {true}), DimensionError);
  EXPECT_THROW(descriptive_stats(cols, {false, false, false}), PreconditionError);
}

TEST(Outliers, NearestRankEnumeration) {
  TrimVariable v{"x", {}};
  for (int i = 1; i <= 100; ++i) v.values.push_back(i);
  const auto keep = outlier_filter(std::vector<TrimVariable>{v}, 0.05, 0.95);
  EXPECT_EQ(keep.size(), 89u);
  EXPECT_EQ(keep.front(), 5u);  // value 6
  EXPECT_EQ(keep.back(), 93u);  // value 94
}

TEST(Outliers, ConstantVariableRemovesEverything) {
  TrimVariable v{"x", std::vector<double>(10, 3.0)};
  EXPECT_TRUE(outlier_filter(std::vector<TrimVariable>{v}).empty());
}

TEST(Outliers, StrictLowerTailKeepsTheMassPoint) {
  // 90 zeros and ten positives: the lower percentile is 0. A strict lower
  // tail keeps the zeros; an inclusive one drops them.
  TrimVariable v{"slr", std::vector<double>(90, 0.0)};
  for (int i = 1; i <= 10; ++i) v.values.push_back(i);
  v.lower_inclusive = false;
  EXPECT_EQ(outlier_filter(std::vector<TrimVariable>{v}).size(), 94u);  // drops 5..10
  v.lower_inclusive = true;
  EXPECT_EQ(outlier_filter(std::vector<TrimVariable>{v}).size(), 4u);
}

TEST(Outliers, UnionAcrossVariables) {
  TrimVariable a{"a", {}}, b{"b", {}};
  for (int i = 1; i <= 100; ++i) {
    a.values.push_back(i);
    b.values.push_back(101 - i);
  }
  // Both variables trim the same rows, in opposite order.
  EXPECT_EQ(outlier_filter(std::vector<TrimVariable>{a, b}).size(), 88u);
}

TEST(Fixture, FullScaleCountsAndMeans) {
  synth::CountySystemSpec spec;
  const auto dir = fixtures::temp_dir("dataset_fixture");
  const auto files = synth::write_county_system(spec, dir);
  const auto recs = load_counties(files.counties);
  EXPECT_EQ(recs.size(), 3072u);
  EXPECT_EQ(count_incomplete(recs), 9u);
  const auto complete = complete_cases(recs);
  EXPECT_EQ(complete.size(), 3063u);
  const auto panel = build_growth_panel(recs, 2012);
  EXPECT_NEAR(stats::mean(panel.g), 0.0413, 5e-5);
}
