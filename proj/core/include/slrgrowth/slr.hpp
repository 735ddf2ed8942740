#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "slrgrowth/dataset.hpp"

namespace slrgrowth::slr {

/// A tide-gauge station with its mean sea-level trend (mm/year).
struct StationRecord {
  std::string station_id;
  double x_km = 0.0;
  double y_km = 0.0;
  double trend = 0.0;         // mm/year
  double ci_halfwidth = 0.0;  // 95% CI half-width, mm/year
  int first_year = 0;
  int last_year = 0;
  std::string county_fips;  // hosting county, empty when unknown
};

enum class SlrDataset { full, window1979_2007 };
std::optional<SlrDataset> parse_dataset(std::string_view s);

/// stations.csv: station_id,x_km,y_km,trend_mm_yr,ci95_halfwidth_mm_yr,first_year,last_year
/// with an optional trailing fips column naming the hosting county.
std::vector<StationRecord> load_stations(const std::string& path);
std::vector<StationRecord> parse_stations(std::istream& in, const std::string& source = "<stream>");
void write_stations(std::ostream& out, std::span<const StationRecord> stations);

/// Checks the collection-span rule of a station dataset variant.
void validate_stations(std::span<const StationRecord> stations, SlrDataset dataset);

enum class SlrSource { own_stations_mean, nearest_station, inverse_distance, inland_zero };
std::string_view source_name(SlrSource s);

struct CountySlr {
  std::string fips;
  double slr = 0.0;           // mm/year
  double ci_halfwidth = 0.0;  // mm/year
  SlrSource source = SlrSource::inland_zero;
  bool coastal() const { return source != SlrSource::inland_zero; }
};

enum class Extrapolation { nearest, idw };
std::optional<Extrapolation> parse_extrapolation(std::string_view s);

/// Counties with hosted stations take the mean of those stations; other
/// coastal counties take the Euclidean-nearest station (ties to the lowest
/// station_id); inland counties are zero. Output is aligned with `counties`.
std::vector<CountySlr> extrapolate_nearest(std::span<const StationRecord> stations,
                                           std::span<const dataset::CountyRecord> counties);

/// As extrapolate_nearest, but coastal counties without a hosted station
/// take the inverse-distance weighted mean over all stations.
std::vector<CountySlr> extrapolate_idw(std::span<const StationRecord> stations,
                                       std::span<const dataset::CountyRecord> counties);

std::vector<CountySlr> extrapolate(Extrapolation mode, std::span<const StationRecord> stations,
                                   std::span<const dataset::CountyRecord> counties);

enum class CiRule { minus_halfwidth, minus_full_width };

struct Partition {
  std::vector<std::size_t> treated;
  std::vector<std::size_t> controls;
  std::vector<std::size_t> excluded;
};

/// Treated: coastal with (slr - ci) > threshold. Controls: inland counties and
/// coastal counties with negative slr. Everything else is excluded.
Partition treated_set(std::span<const CountySlr> county_slr, double threshold_mm,
                      CiRule rule = CiRule::minus_halfwidth);

/// Nearest-rank q-quantile of coastal-county slr.
double coastal_quantile(std::span<const CountySlr> county_slr, double q = 0.10);

}  // namespace slrgrowth::slr
