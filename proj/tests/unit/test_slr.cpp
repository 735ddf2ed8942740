#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/slr.hpp"
#include "slrgrowth/stats.hpp"

using namespace slrgrowth;
using namespace slrgrowth::slr;

namespace {

StationRecord station(const std::string& id, double x, double y, double trend, double ci = 0.5,
                      const std::string& fips = "") {
  StationRecord s;
  s.station_id = id;
  s.x_km = x;
  s.y_km = y;
  s.trend = trend;
  s.ci_halfwidth = ci;
  s.first_year = 1950;
  s.last_year = 2012;
  s.county_fips = fips;
  return s;
}

CountySlr coastal(double slr, double ci) { return {"x", slr, ci, SlrSource::nearest_station}; }

}  // namespace

TEST(Extrapolation, HostedStationMean) {
  std::vector<dataset::CountyRecord> c = {fixtures::county("01001", 0, 0, true)};
  std::vector<StationRecord> one = {station("A", 0, 0, 3.1, 0.5, "01001"), station("Z", 500, 0, 9.0)};
  auto r = extrapolate_nearest(one, c);
  EXPECT_EQ(r[0].slr, 3.1);
  EXPECT_EQ(r[0].source, SlrSource::own_stations_mean);
  std::vector<StationRecord> two = {station("A", 0, 0, 2.0, 0.2, "01001"), station("B", 30, 0, 4.0, 0.6, "01001")};
  r = extrapolate_nearest(two, c);
  EXPECT_DOUBLE_EQ(r[0].slr, 3.0);
  EXPECT_DOUBLE_EQ(r[0].ci_halfwidth, 0.4);
  // The hosted branch is shared by both modes.
  EXPECT_EQ(extrapolate_idw(two, c)[0].slr, r[0].slr);
}

TEST(Extrapolation, InlandIsZero) {
  std::vector<dataset::CountyRecord> c = {fixtures::county("01001", 0, 0, false)};
  std::vector<StationRecord> s = {station("A", 1, 0, 5.0)};
  for (auto mode : {Extrapolation::nearest, Extrapolation::idw}) {
    const auto r = extrapolate(mode, s, c);
    EXPECT_EQ(r[0].slr, 0.0);
    EXPECT_EQ(r[0].source, SlrSource::inland_zero);
    EXPECT_FALSE(r[0].coastal());
  }
}

TEST(Extrapolation, NearestWithTieBreak) {
  std::vector<dataset::CountyRecord> c = {fixtures::county("01001", 0, 0, true)};
  std::vector<StationRecord> s = {station("B", 10, 0, 1.0), station("A", -10, 0, 3.0), station("C", 0, 50, 7.0)};
  const auto r = extrapolate_nearest(s, c);
  EXPECT_EQ(r[0].slr, 3.0);  // equidistant: lowest station_id
  EXPECT_EQ(r[0].source, SlrSource::nearest_station);
}

TEST(Extrapolation, InverseDistance) {
  std::vector<dataset::CountyRecord> c = {fixtures::county("01001", 0, 0, true)};
  std::vector<StationRecord> sym = {station("A", 5, 0, 1.0), station("B", -5, 0, 3.0)};
  EXPECT_DOUBLE_EQ(extrapolate_idw(sym, c)[0].slr, 2.0);
  std::vector<StationRecord> s = {station("A", 1, 0, 4.0), station("B", 0, 3, 0.0)};
  const auto r = extrapolate_idw(s, c);
  EXPECT_NEAR(r[0].slr, 3.0, 1e-14);
  EXPECT_EQ(r[0].source, SlrSource::inverse_distance);
}

TEST(Extrapolation, CoastalWithoutStationsFails) {
  std::vector<dataset::CountyRecord> c = {fixtures::county("01001", 0, 0, true)};
  EXPECT_THROW(extrapolate_nearest({}, c), PreconditionError);
}

TEST(Stations, ParseRoundTripAndChecks) {
  std::vector<StationRecord> s = {station("A", 1.5, 2.5, 3.25, 0.4, "01001"), station("B", 0, 0, -1.0)};
  std::ostringstream out;
  write_stations(out, s);
  std::istringstream in(out.str());
  const auto back = parse_stations(in);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].county_fips, "01001");
  EXPECT_EQ(back[1].county_fips, "");
  EXPECT_EQ(back[0].trend, 3.25);

  std::istringstream dup("station_id,x_km,y_km,trend_mm_yr,ci95_halfwidth_mm_yr,first_year,last_year\n"
                         "A,0,0,1,0.1,1950,2012\nA,1,1,1,0.1,1950,2012\n");
  EXPECT_THROW(parse_stations(dup), DuplicateKeyError);
  std::istringstream neg("station_id,x_km,y_km,trend_mm_yr,ci95_halfwidth_mm_yr,first_year,last_year\n"
                         "A,0,0,1,-0.1,1950,2012\n");
  EXPECT_THROW(parse_stations(neg), DomainError);
}

TEST(Stations, DatasetRules) {
  std::vector<StationRecord> s = {station("A", 0, 0, 1.0)};
  EXPECT_NO_THROW(validate_stations(s, SlrDataset::full));
  EXPECT_THROW(validate_stations(s, SlrDataset::window1979_2007), PreconditionError);
  s[0].first_year = 1990;
  EXPECT_THROW(validate_stations(s, SlrDataset::full), PreconditionError);
  s[0].first_year = 1979;
  s[0].last_year = 2007;
  EXPECT_NO_THROW(validate_stations(s, SlrDataset::window1979_2007));
}

TEST(TreatedSet, Rules) {
  std::vector<CountySlr> v = {{"i", 0.0, 0.0, SlrSource::inland_zero}, coastal(4.0, 1.0), coastal(-0.5, 0.2),
                              coastal(2.5, 1.0)};
  const auto p = treated_set(v, 1.8);
  EXPECT_EQ(p.controls, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(p.treated, (std::vector<std::size_t>{1}));
  EXPECT_EQ(p.excluded, (std::vector<std::size_t>{3}));
  // Full-width rule: 4.0 - 2.0 = 2.0 > 1.8 still treated; 2.5 - 2.0 is not.
  const auto q = treated_set(v, 1.8, CiRule::minus_full_width);
  EXPECT_EQ(q.treated, (std::vector<std::size_t>{1}));
  EXPECT_THROW(treated_set(v, std::nan("")), DomainError);
}

TEST(CoastalQuantile, Enumeration) {
  std::vector<CountySlr> v;
  for (int i = 10; i >= 1; --i) v.push_back(coastal(i, 0.1));
  v.push_back({"i", 0.0, 0.0, SlrSource::inland_zero});
  EXPECT_EQ(coastal_quantile(v, 0.10), 1.0);
  std::vector<CountySlr> flat(7, coastal(2.0, 0.1));
  EXPECT_EQ(coastal_quantile(flat), 2.0);
  EXPECT_THROW(coastal_quantile(std::vector<CountySlr>{{"i", 0, 0, SlrSource::inland_zero}}), PreconditionError);
}

TEST(CoastalQuantile, ObservedRegimeFixture) {
  // 274 coastal counties with mean 2.764 mm/year and a spread chosen so the
  // lower decile sits at 1.8 mm/year.
  std::vector<CountySlr> v;
  const double sd = (2.764 - 1.8) / -stats::normal_quantile(0.10);
  for (int i = 0; i < 274; ++i) v.push_back(coastal(2.764 + sd * stats::normal_quantile((i + 0.5) / 274.0), 0.3));
  EXPECT_NEAR(coastal_quantile(v, 0.10), 1.8, 0.01);
}
