#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <thread>

#include "slrgrowth/config.hpp"
#include "slrgrowth/csv.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/pipeline.hpp"

namespace slrgrowth::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kStartYear = 1990;
constexpr int kPrevYear = 1980;
constexpr const char* kVersion = "0.3.0";

const std::map<std::string, std::string>& gov_measures() {
  static const std::map<std::string, std::string> m = {{"hwy_edu", "gov_expenditure_pc"}, {"none", ""}};
  return m;
}

const std::map<std::string, std::string>& tax_measures() {
  static const std::map<std::string, std::string> m = {{"total_taxes", "tax_income_pc"},
                                                       {"total_intergov", "total_intergov_pc"},
                                                       {"state_intergov", "state_intergov_pc"},
                                                       {"property_taxes", "property_taxes_pc"},
                                                       {"none", ""}};
  return m;
}

spatial::SpatialKind parse_model(const std::string& s) {
  if (s == "sar") return spatial::SpatialKind::SAR;
  if (s == "sem") return spatial::SpatialKind::SEM;
  if (s == "sac") return spatial::SpatialKind::SAC;
  if (s == "white" || s == "gs2sls") return spatial::SpatialKind::GS2SLS_WHITE;
  throw ConfigError("unknown model '" + s + "' (sar|sem|sac|white)");
}

std::vector<int> parse_periods(const std::vector<std::string>& items) {
  std::vector<int> out;
  for (const auto& raw : items) {
    std::string item = raw;
    // "1990:2012" names one period by its start and end year.
    if (auto c = item.find(':'); c != std::string::npos) {
      if (std::stoi(item.substr(0, c)) != kStartYear) throw ConfigError("periods must start in 1990: '" + raw + "'");
      item = item.substr(c + 1);
    }
    if (auto d = item.find('-'); d != std::string::npos && d > 0) {
      const int a = std::stoi(item.substr(0, d)), b = std::stoi(item.substr(d + 1));
      for (int y = a; y <= b; ++y) out.push_back(y);
    } else {
      out.push_back(std::stoi(item));
    }
  }
  for (int y : out)
    if (y < 2000 || y > 2012) throw ConfigError("period end year " + std::to_string(y) + " outside 2000..2012");
  return out;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute() || base.empty()) return path.lexically_normal().string();
  return (fs::path(base) / path).lexically_normal().string();
}

std::vector<std::string> load_column(const std::string& path, const std::string& column) {
  auto t = io::CsvTable::read(path);
  std::vector<std::string> out;
  const auto c = t.column(column);
  for (std::size_t r = 0; r < t.rows(); ++r) out.push_back(t.cell(r, c));
  return out;
}

}  // namespace

// ---- variants and config ----

Variant parse_variant(const std::string& name) {
  Variant v;
  v.name = name;
  if (name == "base") return v;
  if (name == "no_outliers") {
    v.subsample = Subsample::no_outliers;
    return v;
  }
  if (name == "near_coast") {
    v.subsample = Subsample::near_coast;
    return v;
  }
  if (name == "coastal") {
    v.subsample = Subsample::coastal;
    return v;
  }
  if (name.rfind("depletion", 0) == 0 && name.size() == 10 && name[9] >= '1' && name[9] <= '4') {
    v.subsample = Subsample::exclude_depletion;
    v.depletion_groups = name[9] - '0';
    return v;
  }
  if (name == "idw") {
    v.extrapolation = slr::Extrapolation::idw;
    return v;
  }
  if (name == "window1979_2007") {
    v.dataset = slr::SlrDataset::window1979_2007;
    return v;
  }
  if (name == "white") {
    v.model = spatial::SpatialKind::GS2SLS_WHITE;
    return v;
  }
  if (name == "sem") {
    v.model = spatial::SpatialKind::SEM;
    return v;
  }
  if (name == "sac") {
    v.model = spatial::SpatialKind::SAC;
    return v;
  }
  if (name.rfind("finance:", 0) == 0) {
    const auto spec = name.substr(8);
    const auto plus = spec.find('+');
    if (plus == std::string::npos) throw ConfigError("finance variant must be finance:<gov>+<tax>: '" + name + "'");
    auto g = gov_measures().find(spec.substr(0, plus));
    auto t = tax_measures().find(spec.substr(plus + 1));
    if (g == gov_measures().end()) throw ConfigError("unknown government expenditure measure in '" + name + "'");
    if (t == tax_measures().end()) throw ConfigError("unknown tax measure in '" + name + "'");
    v.gov_measure = g->second;
    v.tax_measure = t->second;
    return v;
  }
  throw ConfigError("unknown variant '" + name + "'");
}

std::vector<std::string> finance_variant_names() {
  return {"finance:hwy_edu+total_taxes",  "finance:hwy_edu+total_intergov", "finance:hwy_edu+state_intergov",
          "finance:none+total_taxes",     "finance:none+total_intergov",    "finance:none+state_intergov",
          "finance:none+property_taxes",  "finance:none+none"};
}

BatteryConfig BatteryConfig::load(const std::string& path) {
  const auto text = report::read_file(path);
  auto base = fs::absolute(fs::path(path)).parent_path().string();
  return parse(text, path, base);
}

BatteryConfig BatteryConfig::parse(const std::string& text, const std::string& source, const std::string& base_dir) {
  std::istringstream in(text);
  const auto ini = config::Ini::parse(in, source);
  ini.require_known({
      {"data",
       {"counties", "stations", "stations_window", "adjacency", "island_links", "coast_order", "depletion_groups"}},
      {"run",
       {"periods", "extrapolation", "slr_dataset", "variants", "model", "seed", "output_dir", "threads",
        "figure_period"}},
      {"outliers", {"lower_q", "upper_q", "slr_lower_inclusive"}},
  });
  BatteryConfig c;
  c.text = text;
  c.base_dir = base_dir;
  c.inputs.counties = resolve(base_dir, ini.get("data", "counties"));
  c.inputs.stations = resolve(base_dir, ini.get("data", "stations"));
  c.inputs.stations_window = resolve(base_dir, ini.get("data", "stations_window", ""));
  c.inputs.adjacency = resolve(base_dir, ini.get("data", "adjacency"));
  c.inputs.island_links = resolve(base_dir, ini.get("data", "island_links", ""));
  c.inputs.coast_order = resolve(base_dir, ini.get("data", "coast_order", ""));
  c.inputs.depletion_groups = resolve(base_dir, ini.get("data", "depletion_groups", ""));

  c.periods = parse_periods(ini.get_list("run", "periods", {"2000-2012"}));
  if (auto e = slr::parse_extrapolation(ini.get("run", "extrapolation", "nearest"))) c.extrapolation = *e;
  else throw ConfigError(source + ": extrapolation must be nearest or idw");
  if (auto d = slr::parse_dataset(ini.get("run", "slr_dataset", "full"))) c.dataset = *d;
  else throw ConfigError(source + ": slr_dataset must be full or window1979_2007");
  for (const auto& v : ini.get_list("run", "variants", {"base"})) {
    if (v == "finance") {
      for (const auto& f : finance_variant_names()) c.variants.push_back(parse_variant(f));
    } else {
      c.variants.push_back(parse_variant(v));
    }
  }
  c.model = parse_model(ini.get("run", "model", "sar"));
  c.seed = static_cast<std::uint64_t>(ini.get_int("run", "seed", 20190101));
  c.output_dir = resolve(base_dir, ini.get("run", "output_dir", "out"));
  const auto threads = ini.get_int("run", "threads", 1);
  if (threads < 1) throw ConfigError(source + ": threads must be at least 1");
  c.threads = static_cast<unsigned>(threads);
  c.figure_period = static_cast<int>(ini.get_int("run", "figure_period", 2012));
  c.outlier_lower_q = ini.get_double("outliers", "lower_q", 0.05);
  c.outlier_upper_q = ini.get_double("outliers", "upper_q", 0.95);
  c.slr_lower_inclusive = ini.get_bool("outliers", "slr_lower_inclusive", false);
  if (!(c.outlier_lower_q >= 0.0 && c.outlier_lower_q < c.outlier_upper_q && c.outlier_upper_q <= 1.0))
    throw ConfigError(source + ": outlier quantiles must satisfy 0 <= lower_q < upper_q <= 1");
  return c;
}

// ---- design ----

regression::DesignMatrix build_design(const std::vector<dataset::CountyRecord>& counties,
                                      const std::vector<double>& slr_mm, const std::vector<std::size_t>& rows,
                                      const DesignOptions& opt, std::vector<std::string>* notes) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
  auto field = [&](const std::string& name, double scale) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto* c = counties[rows[static_cast<std::size_t>(i)]].field(name);
      if (!c || !c->ok()) throw SchemaError("county " + counties[rows[static_cast<std::size_t>(i)]].fips +
                                            " has no value for '" + name + "'");
      v[i] = c->value * scale;
    }
    return v;
  };
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s[i] = slr_mm[rows[static_cast<std::size_t>(i)]] / 1000.0;
  cols.emplace_back("slr", s);
  cols.emplace_back("slr2", s.array().square().matrix());
  if (opt.coast_terms) {
    const Eigen::VectorXd c = field("coast_distance_km", 1e-3);
    cols.emplace_back("coast", c);
    cols.emplace_back("coast2", c.array().square().matrix());
  }
  if (!opt.gov_measure.empty()) cols.emplace_back(opt.gov_measure, field(opt.gov_measure, 1e-3));
  if (!opt.tax_measure.empty()) cols.emplace_back(opt.tax_measure, field(opt.tax_measure, 1e-3));
  cols.emplace_back("population_density", field("population_density", 1e-3));
  for (const char* f : {"urban", "rural", "adherents_pct", "catholics_pct", "evangelical_pct", "mainline_pct",
                        "religious_diversity", "education_pct", "nonwhites_pct", "highway", "right_to_work",
                        "amenities"})
    cols.emplace_back(f, field(f, 1.0));
  if (opt.region_dummies) {
    std::set<int> present;
    for (auto r : rows)
      if (counties[r].region) present.insert(static_cast<int>(*counties[r].region));
    bool baseline = true;
    for (int reg : present) {
      if (baseline) {
        baseline = false;
        continue;
      }
      Eigen::VectorXd d(n);
      for (Eigen::Index i = 0; i < n; ++i)
        d[i] = static_cast<int>(*counties[rows[static_cast<std::size_t>(i)]].region) == reg ? 1.0 : 0.0;
      cols.emplace_back("region_" + std::string(dataset::region_name(static_cast<dataset::Region>(reg))), d);
    }
  }
  std::vector<std::pair<std::string, Eigen::VectorXd>> kept;
  for (auto& c : cols) {
    if (n > 0 && (c.second.array() == c.second[0]).all()) {
      if (notes) notes->push_back("dropped constant column " + c.first);
      continue;
    }
    kept.push_back(std::move(c));
  }
  return regression::DesignMatrix::with_intercept(kept);
}

// ---- study ----

Study::Study(const Inputs& in) {
  auto all = dataset::load_counties(in.counties);
  incomplete_ = dataset::count_incomplete(all);
  counties_ = dataset::complete_cases(all);
  if (counties_.size() < 10) throw PreconditionError("fewer than 10 complete counties");
  std::vector<std::string> ids;
  for (const auto& c : counties_) ids.push_back(c.fips);
  const auto adj = weights::load_pairs(in.adjacency);
  const auto links = in.island_links.empty() ? std::vector<std::pair<std::string, std::string>>{}
                                             : weights::load_pairs(in.island_links);
  w_ = weights::build_weights(ids, adj, links);
  stations_ = slr::load_stations(in.stations);
  slr::validate_stations(stations_, slr::SlrDataset::full);
  if (!in.stations_window.empty()) {
    stations_window_ = slr::load_stations(in.stations_window);
    slr::validate_stations(stations_window_, slr::SlrDataset::window1979_2007);
  }
  if (!in.coast_order.empty()) coast_order_ = load_column(in.coast_order, "fips");
  if (!in.depletion_groups.empty()) {
    auto t = io::CsvTable::read(in.depletion_groups);
    const auto g = t.column("group"), s = t.column("state");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const int k = std::stoi(t.cell(r, g));
      if (k < 1 || k > 4) throw SchemaError(in.depletion_groups + ": group must be 1..4");
      depletion_[t.cell(r, s)] = k;
    }
  }
  std::vector<double> dist;
  for (const auto& c : counties_) dist.push_back(c.coast_distance_km.value);
  near_coast_km_ = stats::nearest_rank_quantile(dist, 0.25);
}

const spatial::SpatialOperator& Study::full_operator() const {
  std::call_once(op_once_, [&] { op_ = std::make_unique<spatial::SpatialOperator>(w_); });
  return *op_;
}

const std::vector<slr::CountySlr>& Study::county_slr(slr::Extrapolation mode, slr::SlrDataset ds) const {
  std::lock_guard lock(slr_mutex_);
  const auto key = std::make_pair(static_cast<int>(mode), static_cast<int>(ds));
  auto it = slr_.find(key);
  if (it == slr_.end()) {
    const auto& st = ds == slr::SlrDataset::full ? stations_ : stations_window_;
    if (st.empty()) throw PreconditionError("no stations loaded for the requested SLR dataset");
    it = slr_.emplace(key, std::make_shared<const std::vector<slr::CountySlr>>(slr::extrapolate(mode, st, counties_)))
             .first;
  }
  return *it->second;
}

std::vector<std::string> Study::depletion_states(int k) const {
  if (depletion_.empty()) throw PreconditionError("depletion-group variant needs a depletion_groups file");
  std::vector<std::string> out;
  for (const auto& [s, g] : depletion_)
    if (g <= k) out.push_back(s);
  return out;
}

// ---- cells ----

std::optional<std::pair<double, double>> CellResult::coefficient(const std::string& term) const {
  auto pick = [&](const std::vector<std::string>& names, const Eigen::VectorXd& b,
                  const Eigen::VectorXd& p) -> std::optional<std::pair<double, double>> {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == term) return std::make_pair(b[static_cast<Eigen::Index>(j)], p[static_cast<Eigen::Index>(j)]);
    return std::nullopt;
  };
  if (fit) return pick(fit->names, fit->beta, fit->p);
  if (ols_fit) return pick(ols_fit->names, ols_fit->beta, ols_fit->p);
  return std::nullopt;
}

CellResult run_cell(const Study& study, const BatteryConfig& cfg, const Variant& variant, int period) {
  CellResult out;
  out.variant = variant.name;
  out.period = period;
  try {
    const auto& counties = study.counties();
    const std::size_t N = counties.size();
    const auto mode = variant.extrapolation.value_or(cfg.extrapolation);
    const auto ds = variant.dataset.value_or(cfg.dataset);
    const auto& cslr = study.county_slr(mode, ds);
    std::vector<double> slr_mm(N);
    for (std::size_t i = 0; i < N; ++i) slr_mm[i] = cslr[i].slr;

    std::vector<double> g(N), y0(N), g_prev(N), y0_prev(N);
    const double T = period - kStartYear;
    for (std::size_t i = 0; i < N; ++i) {
      const auto& inc = counties[i].income;
      y0[i] = std::log(inc.at(kStartYear).value);
      y0_prev[i] = std::log(inc.at(kPrevYear).value);
      g[i] = (std::log(inc.at(period).value) - y0[i]) / T;
      g_prev[i] = (y0[i] - y0_prev[i]) / (kStartYear - kPrevYear);
    }

    std::vector<std::size_t> rows;
    switch (variant.subsample) {
      case Subsample::all:
        rows.resize(N);
        std::iota(rows.begin(), rows.end(), 0);
        break;
      case Subsample::near_coast:
        for (std::size_t i = 0; i < N; ++i)
          if (counties[i].coast_distance_km.value < study.near_coast_threshold_km()) rows.push_back(i);
        break;
      case Subsample::coastal:
        for (std::size_t i = 0; i < N; ++i)
          if (counties[i].is_coastal()) rows.push_back(i);
        break;
      case Subsample::no_outliers: {
        std::vector<dataset::TrimVariable> vars(2);
        vars[0] = {"g", g, true, true};
        vars[1] = {"slr", slr_mm, cfg.slr_lower_inclusive, true};
        rows = dataset::outlier_filter(vars, cfg.outlier_lower_q, cfg.outlier_upper_q);
        break;
      }
      case Subsample::exclude_depletion: {
        const auto ex = study.depletion_states(variant.depletion_groups);
        const std::set<std::string> excluded(ex.begin(), ex.end());
        for (std::size_t i = 0; i < N; ++i)
          if (!excluded.contains(counties[i].state)) rows.push_back(i);
        break;
      }
    }
    // Finance measures outside the fixed schema may be missing.
    for (const auto& m : {variant.gov_measure, variant.tax_measure}) {
      if (m.empty()) continue;
      const auto before = rows.size();
      std::erase_if(rows, [&](std::size_t i) {
        const auto* c = counties[i].field(m);
        return !c || !c->ok();
      });
      if (rows.size() != before)
        out.notes.push_back("dropped " + std::to_string(before - rows.size()) + " counties without " + m);
    }

    const bool spatial_model = variant.subsample != Subsample::coastal;
    std::optional<weights::ContiguityWeights> wsub;
    if (spatial_model && rows.size() != N) {
      const auto kept = study.weights().drop_isolates(rows);
      if (kept.size() != rows.size())
        out.notes.push_back("dropped " + std::to_string(rows.size() - kept.size()) + " counties without neighbours");
      rows = kept;
      wsub = study.weights().subset(rows);
    }
    if (rows.size() < 30) throw PreconditionError("subsample has only " + std::to_string(rows.size()) + " counties");
    out.n = rows.size();

    DesignOptions dopt;
    dopt.coast_terms = variant.subsample != Subsample::coastal;
    dopt.region_dummies = variant.subsample != Subsample::coastal && variant.subsample != Subsample::near_coast;
    dopt.gov_measure = variant.gov_measure;
    dopt.tax_measure = variant.tax_measure;
    const auto X = build_design(counties, slr_mm, rows, dopt, &out.notes);

    auto select = [&](const std::vector<double>& v) {
      Eigen::VectorXd o(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t i = 0; i < rows.size(); ++i) o[static_cast<Eigen::Index>(i)] = v[rows[i]];
      return o;
    };
    regression::ThreeSlsInput in;
    in.g = select(g);
    in.y0 = select(y0);
    in.g_prev = select(g_prev);
    in.y0_prev = select(y0_prev);
    std::vector<double> adh80(N), pd80(N);
    for (std::size_t i = 0; i < N; ++i) {
      adh80[i] = counties[i].adherents_1980_pct.value;
      pd80[i] = std::log(std::max(counties[i].population_density_1980.value, 1e-3));
    }
    in.instruments = regression::DesignMatrix::from_columns(
        {{"adherents_1980_pct", select(adh80)}, {"log_population_density_1980", select(pd80)}});
    in.controls = X;
    in.years = T;
    out.three_sls = regression::three_sls(in);
    const Eigen::VectorXd& pi = out.three_sls->pi;

    if (!spatial_model) {
      out.ols_fit = out.three_sls->stage3;
      return out;
    }
    const auto& w = wsub ? *wsub : study.weights();
    std::unique_ptr<spatial::SpatialOperator> own;
    const spatial::SpatialOperator* op = nullptr;
    if (wsub) {
      own = std::make_unique<spatial::SpatialOperator>(*wsub);
      op = own.get();
    } else {
      op = &study.full_operator();
    }
    out.lm = spatial::lm_tests(pi, X, w);
    out.moran = weights::morans_i(out.three_sls->stage3.residuals, w);
    switch (variant.model.value_or(cfg.model)) {
      case spatial::SpatialKind::SAR:
        out.fit = spatial::fit_sar(pi, X, *op);
        out.impacts = spatial::impacts(*out.fit, *op);
        out.lm_residual = spatial::lm_residual_autocorr(*out.fit, *op);
        break;
      case spatial::SpatialKind::SEM:
        out.fit = spatial::fit_sem(pi, X, *op);
        break;
      case spatial::SpatialKind::SAC:
        out.fit = spatial::fit_sac(pi, X, *op);
        break;
      case spatial::SpatialKind::GS2SLS_WHITE:
        out.fit = spatial::fit_gs2sls_white(pi, X, w);
        out.impacts = spatial::impacts(*out.fit, *op);
        break;
    }
    out.fit->resolvent.reset();
  } catch (const std::exception& e) {
    out.status = "failed";
    out.error = e.what();
  }
  return out;
}

std::string cell_json(const CellResult& c) {
  auto finite = [](double v) -> ojson { return std::isfinite(v) ? ojson(v) : ojson(nullptr); };
  auto coef = [&](const std::string& term, double est, double se, double p) {
    return ojson{{"term", term}, {"estimate", finite(est)}, {"se", finite(se)}, {"p", finite(p)},
                {"band", stats::band_symbol(stats::band_of(p))}};
  };
  ojson j;
  j["variant"] = c.variant;
  j["period"] = std::to_string(kStartYear) + "-" + std::to_string(c.period);
  j["status"] = c.status;
  j["n"] = c.n;
  if (!c.error.empty()) j["error"] = c.error;
  j["notes"] = c.notes;
  if (c.three_sls) {
    const auto& t = *c.three_sls;
    j["three_sls"] = {{"beta", finite(t.beta)}, {"beta_se", finite(t.beta_se)}, {"beta_p", finite(t.beta_p)},
                      {"convergence_rate", finite(t.convergence_rate)},
                      {"wu_hausman", {{"statistic", finite(t.wu_hausman.statistic)}, {"p", finite(t.wu_hausman.p)}}}};
    if (t.sargan)
      j["three_sls"]["sargan"] = {{"statistic", finite(t.sargan->statistic)}, {"p", finite(t.sargan->p)},
                                  {"dof", t.sargan->dof}};
  }
  ojson coefs = ojson::array();
  if (c.fit) {
    j["model"] = spatial::kind_name(c.fit->kind);
    for (std::size_t k = 0; k < c.fit->names.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      coefs.push_back(coef(c.fit->names[k], c.fit->beta[kk], c.fit->se[kk], c.fit->p[kk]));
    }
    if (c.fit->rho) j["rho"] = coef("rho", c.fit->rho->estimate, c.fit->rho->se, c.fit->rho->p);
    if (c.fit->lambda) j["lambda"] = coef("lambda", c.fit->lambda->estimate, c.fit->lambda->se, c.fit->lambda->p);
    j["sigma2"] = finite(c.fit->sigma2);
    if (c.fit->log_likelihood) j["log_likelihood"] = finite(*c.fit->log_likelihood);
    j["convergence"] = {{"converged", c.fit->convergence.converged},
                        {"evaluations", c.fit->convergence.evaluations},
                        {"bracket", {c.fit->convergence.bracket_lo, c.fit->convergence.bracket_hi}},
                        {"note", c.fit->convergence.note}};
  } else if (c.ols_fit) {
    j["model"] = "OLS";
    for (std::size_t k = 0; k < c.ols_fit->names.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      coefs.push_back(coef(c.ols_fit->names[k], c.ols_fit->beta[kk], c.ols_fit->se[kk], c.ols_fit->p[kk]));
    }
    j["r2"] = finite(c.ols_fit->r2);
  }
  j["coefficients"] = coefs;
  if (c.impacts) {
    ojson im = ojson::array();
    for (const auto& r : c.impacts->rows)
      im.push_back({{"variable", r.variable}, {"direct", r.direct}, {"indirect", r.indirect}, {"total", r.total}});
    j["impacts"] = im;
  }
  if (c.lm) {
    auto s = [&](const spatial::LmStatistic& x) { return ojson{{"statistic", finite(x.statistic)}, {"p", finite(x.p)}}; };
    j["lm"] = {{"lm_error", s(c.lm->lm_error)},
               {"lm_lag", s(c.lm->lm_lag)},
               {"robust_lm_error", s(c.lm->robust_lm_error)},
               {"robust_lm_lag", s(c.lm->robust_lm_lag)}};
    if (c.lm_residual) j["lm_residual_autocorrelation"] = s(*c.lm_residual);
  }
  if (c.moran) j["moran"] = {{"statistic", finite(c.moran->statistic)}, {"p", finite(c.moran->p)}};
  return j.dump(2) + "\n";
}

// ---- tables ----

std::string SignificanceCell::text() const {
  if (!present) return "";
  return std::string(positive ? "+" : "-") + stats::band_symbol(band);
}

SignificanceCell significance_cell(double estimate, double p) {
  SignificanceCell c;
  c.present = true;
  c.positive = estimate > 0.0;
  c.band = stats::band_of(p);
  return c;
}

SignGrid sign_table(const std::vector<const CellResult*>& cells, const std::vector<std::string>& variables) {
  SignGrid grid;
  grid.variables = variables;
  for (const auto* c : cells) {
    grid.periods.push_back(c->period);
    grid.n.push_back(c->n);
    std::vector<SignificanceCell> row;
    for (const auto& v : variables) {
      SignificanceCell cell;
      if (c->status != "ok") {
        cell.note = "fit failed";
      } else if (auto co = c->coefficient(v)) {
        cell = significance_cell(co->first, co->second);
      } else {
        cell.note = "not in model";
      }
      row.push_back(cell);
    }
    grid.cells.push_back(std::move(row));
  }
  return grid;
}

void write_sign_tsv(std::ostream& out, const SignGrid& grid) {
  out << "period";
  for (const auto& v : grid.variables) out << '\t' << v;
  out << "\tn\n";
  for (std::size_t r = 0; r < grid.periods.size(); ++r) {
    out << kStartYear << '-' << grid.periods[r];
    for (const auto& c : grid.cells[r]) out << '\t' << (c.present ? c.text() : "NA");
    out << '\t' << grid.n[r] << '\n';
  }
}

std::vector<report::FigureBar> figure_bars(const spatial::ImpactMeasures& impacts,
                                           const std::vector<CoastCounty>& ordered) {
  const double a = impacts.at("slr").total;
  double b = 0.0;
  for (const auto& r : impacts.rows)
    if (r.variable == "slr2") b = r.total;
  std::vector<report::FigureBar> bars;
  bars.reserve(ordered.size());
  for (const auto& c : ordered) {
    if (!c.slr_m || !std::isfinite(*c.slr_m)) throw DomainError("county " + c.fips + " has no sea-level rise value");
    const double s = *c.slr_m;
    bars.push_back({c.fips, c.state, a * s + b * s * s});
  }
  return bars;
}

std::string figure_impacts(const spatial::ImpactMeasures& impacts, const std::vector<CoastCounty>& ordered) {
  return report::bar_chart_svg(figure_bars(impacts, ordered), "Initial effects of sea-level rise on growth: total impacts");
}

// ---- battery ----

BatteryResult run_battery(const BatteryConfig& cfg, const Study& study) {
  if (cfg.periods.empty() || cfg.variants.empty()) throw ConfigError("battery needs at least one period and variant");
  struct Job {
    std::size_t variant;
    int period;
  };
  std::vector<Job> jobs;
  for (std::size_t v = 0; v < cfg.variants.size(); ++v)
    for (int p : cfg.periods) jobs.push_back({v, p});

  // Shared inputs are built before the workers start.
  bool needs_full = false;
  for (const auto& v : cfg.variants) {
    needs_full = needs_full || v.subsample == Subsample::all;
    (void)study.county_slr(v.extrapolation.value_or(cfg.extrapolation), v.dataset.value_or(cfg.dataset));
  }
  if (needs_full) (void)study.full_operator();

  BatteryResult res;
  res.cells.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++)
      res.cells[j] = run_cell(study, cfg, cfg.variants[jobs[j].variant], jobs[j].period);
  };
  const unsigned t = std::min<unsigned>(cfg.threads, static_cast<unsigned>(jobs.size()));
  if (t <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned k = 0; k < t; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  // Figure: first variant on the full sample at the figure period.
  const CellResult* fig = nullptr;
  for (const auto& c : res.cells)
    if (c.period == cfg.figure_period && c.impacts && c.status == "ok") {
      const auto& v = *std::find_if(cfg.variants.begin(), cfg.variants.end(),
                                    [&](const Variant& x) { return x.name == c.variant; });
      if (v.subsample == Subsample::all) {
        fig = &c;
        break;
      }
    }
  if (!fig) {
    res.figure_note = "no full-sample lag-model fit for the figure period";
  } else if (study.coast_order().empty()) {
    res.figure_note = "no coast_order input";
  } else {
    const auto& v = *std::find_if(cfg.variants.begin(), cfg.variants.end(),
                                  [&](const Variant& x) { return x.name == fig->variant; });
    const auto& cslr =
        study.county_slr(v.extrapolation.value_or(cfg.extrapolation), v.dataset.value_or(cfg.dataset));
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < study.counties().size(); ++i) index[study.counties()[i].fips] = i;
    std::vector<CoastCounty> ordered;
    for (const auto& f : study.coast_order()) {
      auto it = index.find(f);
      if (it == index.end()) continue;  // not a complete case
      ordered.push_back({f, study.counties()[it->second].state, cslr[it->second].slr / 1000.0});
    }
    res.figure_svg = figure_impacts(*fig->impacts, ordered);
  }
  return res;
}

std::vector<OutputFile> write_outputs(const BatteryResult& result, const BatteryConfig& cfg, const std::string& dir) {
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& v : cfg.variants) {
    std::vector<const CellResult*> cells;
    for (const auto& c : result.cells)
      if (c.variant == v.name) cells.push_back(&c);
    std::ostringstream s;
    write_sign_tsv(s, sign_table(cells));
    std::string fname = v.name;
    std::replace(fname.begin(), fname.end(), ':', '_');
    std::replace(fname.begin(), fname.end(), '+', '_');
    files.emplace_back("sign_" + fname + ".tsv", s.str());
  }

  std::ostringstream fits, imp, diag;
  fits << "variant\tperiod\tmodel\tterm\testimate\tse\tstat\tp\tband\n";
  imp << "variant\tperiod\tvariable\tdirect\tindirect\ttotal\n";
  diag << "variant\tperiod\tstatus\tn\tmodel\tbeta_y0\tbeta_y0_se\tconvergence_rate\tsargan\tsargan_p\twu_hausman\t"
          "wu_hausman_p\tmoran_i\tmoran_p\tlm_error\tlm_error_p\tlm_lag\tlm_lag_p\trobust_lm_error\t"
          "robust_lm_error_p\trobust_lm_lag\trobust_lm_lag_p\tlm_residual\tlm_residual_p\tsigma2\tlog_likelihood\t"
          "notes\terror\n";
  using report::num;
  for (const auto& c : result.cells) {
    const std::string key = c.variant + '\t' + std::to_string(kStartYear) + '-' + std::to_string(c.period);
    std::string model = "NA";
    auto frow = [&](const std::string& term, double est, double se, double st, double p) {
      fits << key << '\t' << model << '\t' << term << '\t' << num(est) << '\t' << num(se) << '\t' << num(st) << '\t'
           << num(p) << '\t' << stats::band_symbol(stats::band_of(p)) << '\n';
    };
    if (c.three_sls) frow("log_initial_income", c.three_sls->beta, c.three_sls->beta_se, c.three_sls->beta / c.three_sls->beta_se, c.three_sls->beta_p);
    if (c.fit) {
      model = std::string(spatial::kind_name(c.fit->kind));
      for (std::size_t j = 0; j < c.fit->names.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        frow(c.fit->names[j], c.fit->beta[jj], c.fit->se[jj], c.fit->z[jj], c.fit->p[jj]);
      }
      if (c.fit->rho) frow("rho", c.fit->rho->estimate, c.fit->rho->se, c.fit->rho->z, c.fit->rho->p);
      if (c.fit->lambda) frow("lambda", c.fit->lambda->estimate, c.fit->lambda->se, c.fit->lambda->z, c.fit->lambda->p);
    } else if (c.ols_fit) {
      model = "OLS";
      for (std::size_t j = 0; j < c.ols_fit->names.size(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        frow(c.ols_fit->names[j], c.ols_fit->beta[jj], c.ols_fit->se[jj], c.ols_fit->t[jj], c.ols_fit->p[jj]);
      }
    }
    if (c.impacts)
      for (const auto& r : c.impacts->rows)
        imp << key << '\t' << r.variable << '\t' << num(r.direct, 8) << '\t' << num(r.indirect, 8) << '\t'
            << num(r.total, 8) << '\n';
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const auto& ts = c.three_sls;
    std::string notes;
    for (const auto& n : c.notes) notes += (notes.empty() ? "" : "; ") + n;
    std::string err = c.error;
    std::replace(err.begin(), err.end(), '\t', ' ');
    std::replace(err.begin(), err.end(), '\n', ' ');
    diag << key << '\t' << c.status << '\t' << c.n << '\t' << model << '\t' << num(ts ? ts->beta : nan) << '\t'
         << num(ts ? ts->beta_se : nan) << '\t' << num(ts ? ts->convergence_rate : nan) << '\t'
         << num(ts && ts->sargan ? ts->sargan->statistic : nan) << '\t' << num(ts && ts->sargan ? ts->sargan->p : nan)
         << '\t' << num(ts ? ts->wu_hausman.statistic : nan) << '\t' << num(ts ? ts->wu_hausman.p : nan) << '\t'
         << num(c.moran ? c.moran->statistic : nan) << '\t' << num(c.moran ? c.moran->p : nan);
    for (const auto* s : {c.lm ? &c.lm->lm_error : nullptr, c.lm ? &c.lm->lm_lag : nullptr,
                          c.lm ? &c.lm->robust_lm_error : nullptr, c.lm ? &c.lm->robust_lm_lag : nullptr,
                          c.lm_residual ? &*c.lm_residual : nullptr})
      diag << '\t' << num(s ? s->statistic : nan) << '\t' << num(s ? s->p : nan);
    diag << '\t' << num(c.fit ? c.fit->sigma2 : (c.ols_fit ? c.ols_fit->sigma2 : nan)) << '\t'
         << num(c.fit && c.fit->log_likelihood ? *c.fit->log_likelihood : (c.ols_fit ? c.ols_fit->log_likelihood : nan))
         << '\t' << (notes.empty() ? "-" : notes) << '\t' << (err.empty() ? "-" : err) << '\n';
  }
  files.emplace_back("fits.tsv", fits.str());
  files.emplace_back("impacts.tsv", imp.str());
  files.emplace_back("diagnostics.tsv", diag.str());
  if (result.figure_svg) files.emplace_back("figure_total_impacts.svg", *result.figure_svg);

  std::vector<OutputFile> out;
  for (const auto& [name, bytes] : files) {
    report::write_file((fs::path(dir) / name).string(), bytes);
    out.push_back({name, report::sha256_hex(bytes)});
  }
  return out;
}

std::string emit_manifest(const BatteryConfig& cfg, const BatteryResult& result, const std::vector<OutputFile>& outputs,
                          const std::string& created_at) {
  json m;
  m["tool"] = "slrgrowth";
  m["version"] = kVersion;
  m["config"] = {{"sha256", report::sha256_hex(cfg.text)}, {"text", cfg.text}, {"base_dir", cfg.base_dir}};
  json inputs = json::array();
  auto add = [&](const char* role, const std::string& path) {
    if (path.empty()) return;
    inputs.push_back({{"role", role}, {"path", path}, {"sha256", report::sha256_file(path)}});
  };
  add("counties", cfg.inputs.counties);
  add("stations", cfg.inputs.stations);
  add("stations_window", cfg.inputs.stations_window);
  add("adjacency", cfg.inputs.adjacency);
  add("island_links", cfg.inputs.island_links);
  add("coast_order", cfg.inputs.coast_order);
  add("depletion_groups", cfg.inputs.depletion_groups);
  m["inputs"] = inputs;
  json seeds = {{"base", cfg.seed}};
  m["seeds"] = seeds;
  json cells = json::array();
  for (std::size_t i = 0; i < result.cells.size(); ++i) {
    const auto& c = result.cells[i];
    json cell = {{"variant", c.variant},
                 {"period", std::to_string(kStartYear) + "-" + std::to_string(c.period)},
                 {"status", c.status},
                 {"n", c.n},
                 {"seed", stats::derive_seed(cfg.seed, i)}};
    if (!c.error.empty()) cell["error"] = c.error;
    cells.push_back(cell);
  }
  m["cells"] = cells;
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back({{"name", o.name}, {"sha256", o.sha256}});
  m["outputs"] = outs;
  if (!result.figure_note.empty()) m["figure_note"] = result.figure_note;
  m["created_at"] = created_at;
  return m.dump(2) + "\n";
}

ReplayReport replay(const std::string& manifest_path, const std::string& dir) {
  const json m = json::parse(report::read_file(manifest_path));
  ReplayReport rep;
  for (const auto& in : m.at("inputs")) {
    const std::string path = in.at("path");
    std::string now;
    try {
      now = report::sha256_file(path);
    } catch (const std::exception&) {
      now = "missing";
    }
    if (now != in.at("sha256").get<std::string>()) {
      rep.inputs_match = false;
      rep.mismatches.push_back("input " + path + " changed");
    }
  }
  auto cfg = BatteryConfig::parse(m.at("config").at("text").get<std::string>(), manifest_path,
                                  m.at("config").at("base_dir").get<std::string>());
  cfg.output_dir = dir;
  const Study study(cfg.inputs);
  const auto result = run_battery(cfg, study);
  const auto outputs = write_outputs(result, cfg, dir);
  std::map<std::string, std::string> now;
  for (const auto& o : outputs) now[o.name] = o.sha256;
  for (const auto& o : m.at("outputs")) {
    const std::string name = o.at("name");
    auto it = now.find(name);
    if (it == now.end() || it->second != o.at("sha256").get<std::string>()) {
      rep.outputs_match = false;
      rep.mismatches.push_back("output " + name + " differs");
    }
  }
  if (now.size() != m.at("outputs").size()) {
    rep.outputs_match = false;
    rep.mismatches.push_back("different number of output files");
  }
  return rep;
}

}  // namespace slrgrowth::pipeline
