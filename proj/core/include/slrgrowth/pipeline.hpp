#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "slrgrowth/dataset.hpp"
#include "slrgrowth/regression.hpp"
#include "slrgrowth/report.hpp"
#include "slrgrowth/slr.hpp"
#include "slrgrowth/spatial.hpp"
#include "slrgrowth/stats.hpp"
#include "slrgrowth/weights.hpp"

namespace slrgrowth::pipeline {

struct Inputs {
  std::string counties;
  std::string stations;
  std::string stations_window;  // 1979-2007 collection window
  std::string adjacency;
  std::string island_links;
  std::string coast_order;       // figure ordering, optional
  std::string depletion_groups;  // group,state; optional
};

enum class Subsample { all, near_coast, coastal, no_outliers, exclude_depletion };

struct Variant {
  std::string name;
  Subsample subsample = Subsample::all;
  int depletion_groups = 0;  // exclude groups 1..k
  std::optional<slr::Extrapolation> extrapolation;
  std::optional<slr::SlrDataset> dataset;
  std::string gov_measure = "gov_expenditure_pc";  // empty: omitted
  std::string tax_measure = "tax_income_pc";
  std::optional<spatial::SpatialKind> model;
};

/// base, no_outliers, near_coast, coastal, depletion1..depletion4, idw,
/// window1979_2007, white, sem, sac, and finance:<gov>+<tax> with
/// gov in {hwy_edu, none} and tax in {total_taxes, total_intergov,
/// state_intergov, property_taxes, none}.
Variant parse_variant(const std::string& name);
/// The eight government-finance rows in table order.
std::vector<std::string> finance_variant_names();

struct BatteryConfig {
  Inputs inputs;
  std::vector<int> periods;  // end years, start year 1990
  slr::Extrapolation extrapolation = slr::Extrapolation::nearest;
  slr::SlrDataset dataset = slr::SlrDataset::full;
  std::vector<Variant> variants;
  spatial::SpatialKind model = spatial::SpatialKind::SAR;
  std::uint64_t seed = 20190101;
  std::string output_dir = "out";
  unsigned threads = 1;
  double outlier_lower_q = 0.05;
  double outlier_upper_q = 0.95;
  bool slr_lower_inclusive = false;  // trim slr <= p5 (true) or slr < p5 (false)
  int figure_period = 2012;
  std::string text;      // config source, kept for hashing and replay
  std::string base_dir;  // relative input paths resolve against this

  static BatteryConfig load(const std::string& path);
  static BatteryConfig parse(const std::string& text, const std::string& source, const std::string& base_dir);
};

struct DesignOptions {
  bool coast_terms = true;
  bool region_dummies = true;
  std::string gov_measure = "gov_expenditure_pc";
  std::string tax_measure = "tax_income_pc";
};

/// Third-stage regressors for the selected rows. Sea-level rise enters in
/// m/year, coast distance in thousand km, finance measures in thousand
/// US$ and population density in thousand per square mile; squares are
/// formed here. Constant columns other than the intercept are dropped and
/// reported through `notes`.
regression::DesignMatrix build_design(const std::vector<dataset::CountyRecord>& counties,
                                      const std::vector<double>& slr_mm, const std::vector<std::size_t>& rows,
                                      const DesignOptions& opt, std::vector<std::string>* notes = nullptr);

/// Loaded inputs plus everything shared read-only by the cells: complete
/// cases, W over them with its spectrum, and county SLR for each
/// extrapolation mode and station dataset.
class Study {
 public:
  explicit Study(const Inputs& inputs);

  const std::vector<dataset::CountyRecord>& counties() const { return counties_; }
  const weights::ContiguityWeights& weights() const { return w_; }
  const spatial::SpatialOperator& full_operator() const;
  const std::vector<slr::CountySlr>& county_slr(slr::Extrapolation mode, slr::SlrDataset ds) const;
  const std::vector<std::string>& coast_order() const { return coast_order_; }
  /// States excluded by the first k depletion groups.
  std::vector<std::string> depletion_states(int k) const;
  double near_coast_threshold_km() const { return near_coast_km_; }
  std::size_t incomplete() const { return incomplete_; }

 private:
  std::vector<dataset::CountyRecord> counties_;
  std::size_t incomplete_ = 0;
  weights::ContiguityWeights w_;
  std::vector<slr::StationRecord> stations_, stations_window_;
  std::vector<std::string> coast_order_;
  std::map<std::string, int> depletion_;
  double near_coast_km_ = 0.0;
  mutable std::once_flag op_once_;
  mutable std::unique_ptr<spatial::SpatialOperator> op_;
  mutable std::mutex slr_mutex_;
  mutable std::map<std::pair<int, int>, std::shared_ptr<const std::vector<slr::CountySlr>>> slr_;
};

struct CellResult {
  std::string variant;
  int period = 0;
  std::string status = "ok";
  std::string error;
  std::size_t n = 0;
  std::optional<regression::ThreeSlsFit> three_sls;
  std::optional<spatial::SpatialFit> fit;      // spatial kinds
  std::optional<regression::OlsFit> ols_fit;   // non-spatial third stage
  std::optional<spatial::ImpactMeasures> impacts;
  std::optional<spatial::LmReport> lm;
  std::optional<spatial::LmStatistic> lm_residual;
  std::optional<weights::MoranResult> moran;
  std::vector<std::string> notes;

  /// Estimate and p-value of a third-stage term, if the model has it.
  std::optional<std::pair<double, double>> coefficient(const std::string& term) const;
};

CellResult run_cell(const Study& study, const BatteryConfig& cfg, const Variant& variant, int period);

/// Structured fit report of one cell: stages, coefficients with bands,
/// spatial parameters, impacts and diagnostics.
std::string cell_json(const CellResult& cell);

struct SignificanceCell {
  bool present = false;
  bool positive = false;
  stats::Band band = stats::Band::none;
  std::string note;
  std::string text() const;  // "+**", "-", "" when absent
};

SignificanceCell significance_cell(double estimate, double p);

struct SignGrid {
  std::vector<int> periods;
  std::vector<std::string> variables;
  std::vector<std::vector<SignificanceCell>> cells;  // [period][variable]
  std::vector<std::size_t> n;
};

inline const std::vector<std::string> kSignVariables = {"slr", "slr2", "coast", "coast2"};

/// Period x variable grid for the cells of one variant.
SignGrid sign_table(const std::vector<const CellResult*>& cells, const std::vector<std::string>& variables = kSignVariables);
void write_sign_tsv(std::ostream& out, const SignGrid& grid);

struct CoastCounty {
  std::string fips;
  std::string state;
  std::optional<double> slr_m;  // m/year
};

/// Per-county initial total effect total_slr * s + total_slr2 * s^2.
std::vector<report::FigureBar> figure_bars(const spatial::ImpactMeasures& impacts,
                                           const std::vector<CoastCounty>& ordered);
std::string figure_impacts(const spatial::ImpactMeasures& impacts, const std::vector<CoastCounty>& ordered);

struct BatteryResult {
  std::vector<CellResult> cells;  // variant-major, period-minor
  std::optional<std::string> figure_svg;
  std::string figure_note;
};

/// Runs every period x variant cell. Cell failures are recorded, not thrown.
BatteryResult run_battery(const BatteryConfig& cfg, const Study& study);

struct OutputFile {
  std::string name;  // relative to the output directory
  std::string sha256;
};

/// Writes sign tables, fits, impacts, diagnostics and the figure.
std::vector<OutputFile> write_outputs(const BatteryResult& result, const BatteryConfig& cfg, const std::string& dir);

/// Manifest JSON. Everything except the "created_at" field is a function
/// of the config, inputs and outputs.
std::string emit_manifest(const BatteryConfig& cfg, const BatteryResult& result, const std::vector<OutputFile>& outputs,
                          const std::string& created_at);

struct ReplayReport {
  bool inputs_match = true;
  bool outputs_match = true;
  std::vector<std::string> mismatches;
};

/// Re-runs the battery recorded in a manifest into `dir` and compares
/// input and output digests.
ReplayReport replay(const std::string& manifest_path, const std::string& dir);

}  // namespace slrgrowth::pipeline
