#include "slrgrowth/slr.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <ostream>

#include "slrgrowth/csv.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::slr {

namespace {

double to_double(const io::CsvTable& t, std::size_t r, std::string_view col) {
  const auto& s = t.cell(r, col);
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw SchemaError(t.source() + ": bad numeric value '" + s + "' in column " + std::string(col));
  }
}

struct Located {
  double x, y;
};

Located centroid(const dataset::CountyRecord& c) {
  if (!c.x_km.ok() || !c.y_km.ok()) throw PreconditionError("county " + c.fips + " has no centroid");
  return {c.x_km.value, c.y_km.value};
}

double distance(const Located& a, const StationRecord& s) { return std::hypot(a.x - s.x_km, a.y - s.y_km); }

// Hosted-station means keyed by county fips.
std::map<std::string, std::pair<double, double>> hosted_means(std::span<const StationRecord> stations) {
  std::map<std::string, std::vector<const StationRecord*>> by_county;
  for (const auto& s : stations)
    if (!s.county_fips.empty()) by_county[s.county_fips].push_back(&s);
  std::map<std::string, std::pair<double, double>> out;
  for (const auto& [fips, list] : by_county) {
    double t = 0.0, c = 0.0;
    for (const auto* s : list) {
      t += s->trend;
      c += s->ci_halfwidth;
    }
    out[fips] = {t / static_cast<double>(list.size()), c / static_cast<double>(list.size())};
  }
  return out;
}

template <class Fallback>
std::vector<CountySlr> extrapolate_with(std::span<const StationRecord> stations,
                                        std::span<const dataset::CountyRecord> counties, Fallback&& fallback) {
  const auto hosted = hosted_means(stations);
  std::vector<CountySlr> out;
  out.reserve(counties.size());
  for (const auto& c : counties) {
    CountySlr r;
    r.fips = c.fips;
    if (!c.is_coastal()) {
      r.source = SlrSource::inland_zero;
    } else if (auto it = hosted.find(c.fips); it != hosted.end()) {
      r.slr = it->second.first;
      r.ci_halfwidth = it->second.second;
      r.source = SlrSource::own_stations_mean;
    } else {
      if (stations.empty()) throw PreconditionError("coastal county " + c.fips + " has no reachable station");
      fallback(centroid(c), r);
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::optional<SlrDataset> parse_dataset(std::string_view s) {
  if (s == "full") return SlrDataset::full;
  if (s == "window1979_2007") return SlrDataset::window1979_2007;
  return std::nullopt;
}

std::optional<Extrapolation> parse_extrapolation(std::string_view s) {
  if (s == "nearest") return Extrapolation::nearest;
  if (s == "idw") return Extrapolation::idw;
  return std::nullopt;
}

std::string_view source_name(SlrSource s) {
  switch (s) {
    case SlrSource::own_stations_mean: return "own_stations_mean";
    case SlrSource::nearest_station: return "nearest_station";
    case SlrSource::inverse_distance: return "inverse_distance";
    case SlrSource::inland_zero: return "inland_zero";
  }
  return "";
}

std::vector<StationRecord> parse_stations(std::istream& in, const std::string& source) {
  const auto t = io::CsvTable::parse(in, source);
  for (const char* c : {"station_id", "x_km", "y_km", "trend_mm_yr", "ci95_halfwidth_mm_yr", "first_year", "last_year"})
    (void)t.column(c);
  const bool has_fips = t.has_column("fips");
  std::vector<StationRecord> out;
  std::map<std::string, int> seen;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    StationRecord s;
    s.station_id = t.cell(r, "station_id");
    if (seen[s.station_id]++) throw DuplicateKeyError(source + ": duplicate station_id '" + s.station_id + "'");
    s.x_km = to_double(t, r, "x_km");
    s.y_km = to_double(t, r, "y_km");
    s.trend = to_double(t, r, "trend_mm_yr");
    s.ci_halfwidth = to_double(t, r, "ci95_halfwidth_mm_yr");
    s.first_year = static_cast<int>(to_double(t, r, "first_year"));
    s.last_year = static_cast<int>(to_double(t, r, "last_year"));
    if (has_fips) s.county_fips = t.cell(r, "fips");
    if (s.ci_halfwidth < 0.0) throw DomainError(source + ": negative CI half-width at station " + s.station_id);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<StationRecord> load_stations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return parse_stations(in, path);
}

void write_stations(std::ostream& out, std::span<const StationRecord> stations) {
  out << "station_id,x_km,y_km,trend_mm_yr,ci95_halfwidth_mm_yr,first_year,last_year,fips\n";
  const auto prec = out.precision();
  out << std::setprecision(17);
  for (const auto& s : stations) {
    out << s.station_id << ',' << s.x_km << ',' << s.y_km << ',' << s.trend << ',' << s.ci_halfwidth << ','
        << s.first_year << ',' << s.last_year << ',' << s.county_fips << '\n';
  }
  out.precision(prec);
}

void validate_stations(std::span<const StationRecord> stations, SlrDataset dataset) {
  for (const auto& s : stations) {
    if (dataset == SlrDataset::full && s.last_year - s.first_year + 1 < 30)
      throw PreconditionError("station " + s.station_id + " spans fewer than 30 years");
    if (dataset == SlrDataset::window1979_2007 && (s.first_year != 1979 || s.last_year != 2007))
      throw PreconditionError("station " + s.station_id + " is not on the 1979-2007 window");
  }
}

std::vector<CountySlr> extrapolate_nearest(std::span<const StationRecord> stations,
                                           std::span<const dataset::CountyRecord> counties) {
  return extrapolate_with(stations, counties, [&](const Located& at, CountySlr& r) {
    const StationRecord* best = nullptr;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& s : stations) {
      const double d = distance(at, s);
      if (d < best_d || (d == best_d && best && s.station_id < best->station_id)) {
        best = &s;
        best_d = d;
      }
    }
    r.slr = best->trend;
    r.ci_halfwidth = best->ci_halfwidth;
    r.source = SlrSource::nearest_station;
  });
}

std::vector<CountySlr> extrapolate_idw(std::span<const StationRecord> stations,
                                       std::span<const dataset::CountyRecord> counties) {
  return extrapolate_with(stations, counties, [&](const Located& at, CountySlr& r) {
    // A station sitting exactly on the centroid is treated as hosted.
    double zt = 0.0, zc = 0.0;
    int zero_hits = 0;
    for (const auto& s : stations) {
      if (distance(at, s) == 0.0) {
        zt += s.trend;
        zc += s.ci_halfwidth;
        ++zero_hits;
      }
    }
    if (zero_hits > 0) {
      r.slr = zt / zero_hits;
      r.ci_halfwidth = zc / zero_hits;
      r.source = SlrSource::own_stations_mean;
      return;
    }
    double wsum = 0.0, tsum = 0.0, csum = 0.0;
    for (const auto& s : stations) {
      const double w = 1.0 / distance(at, s);
      wsum += w;
      tsum += w * s.trend;
      csum += w * s.ci_halfwidth;
    }
    r.slr = tsum / wsum;
    r.ci_halfwidth = csum / wsum;
    r.source = SlrSource::inverse_distance;
  });
}

std::vector<CountySlr> extrapolate(Extrapolation mode, std::span<const StationRecord> stations,
                                   std::span<const dataset::CountyRecord> counties) {
  return mode == Extrapolation::nearest ? extrapolate_nearest(stations, counties)
                                        : extrapolate_idw(stations, counties);
}

Partition treated_set(std::span<const CountySlr> county_slr, double threshold_mm, CiRule rule) {
  if (!std::isfinite(threshold_mm)) throw DomainError("treatment threshold must be finite");
  Partition p;
  for (std::size_t i = 0; i < county_slr.size(); ++i) {
    const auto& c = county_slr[i];
    const double ci = rule == CiRule::minus_halfwidth ? c.ci_halfwidth : 2.0 * c.ci_halfwidth;
    if (!c.coastal() || c.slr < 0.0) {
      p.controls.push_back(i);
    } else if (c.slr - ci > threshold_mm) {
      p.treated.push_back(i);
    } else {
      p.excluded.push_back(i);
    }
  }
  return p;
}

double coastal_quantile(std::span<const CountySlr> county_slr, double q) {
  std::vector<double> v;
  for (const auto& c : county_slr)
    if (c.coastal()) v.push_back(c.slr);
  if (v.empty()) throw PreconditionError("no coastal counties");
  return stats::nearest_rank_quantile(v, q);
}

}  // namespace slrgrowth::slr
