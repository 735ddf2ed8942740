#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "slrgrowth/config.hpp"
#include "slrgrowth/dataset.hpp"
#include "slrgrowth/error.hpp"
#include "slrgrowth/matching.hpp"
#include "slrgrowth/pipeline.hpp"
#include "slrgrowth/report.hpp"
#include "slrgrowth/slr.hpp"
#include "slrgrowth/synth.hpp"

namespace fs = std::filesystem;
using namespace slrgrowth;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMismatch = 3;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// "1990:2012" or "2012"; the start year is fixed at 1990.
int parse_period(const std::string& s) {
  std::string end = s;
  if (auto c = s.find(':'); c != std::string::npos) {
    if (s.substr(0, c) != "1990") throw ConfigError("period must start in 1990: '" + s + "'");
    end = s.substr(c + 1);
  }
  int y = 0;
  try {
    y = std::stoi(end);
  } catch (const std::exception&) {
    throw ConfigError("bad period '" + s + "'");
  }
  if (y < 2000 || y > 2012) throw ConfigError("period end year must be in 2000..2012: '" + s + "'");
  return y;
}

spatial::SpatialKind parse_kind(const std::string& s) {
  if (s == "sar") return spatial::SpatialKind::SAR;
  if (s == "sem") return spatial::SpatialKind::SEM;
  if (s == "sac") return spatial::SpatialKind::SAC;
  if (s == "white") return spatial::SpatialKind::GS2SLS_WHITE;
  throw ConfigError("unknown model '" + s + "' (sar|sem|sac|white)");
}

void emit(const std::string& path, const std::string& bytes) {
  if (path.empty() || path == "-") std::cout << bytes;
  else report::write_file(path, bytes);
}

template <class F>
std::string capture(F&& f) {
  std::ostringstream s;
  f(s);
  return s.str();
}

// ---- run ----

struct RunArgs {
  std::string config, out;
  unsigned threads = 0;
};

int cmd_run(const RunArgs& a) {
  auto cfg = pipeline::BatteryConfig::load(a.config);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.threads > 0) cfg.threads = a.threads;
  const pipeline::Study study(cfg.inputs);
  const auto result = pipeline::run_battery(cfg, study);
  const auto outputs = pipeline::write_outputs(result, cfg, cfg.output_dir);
  report::write_file((fs::path(cfg.output_dir) / "manifest.json").string(),
                     pipeline::emit_manifest(cfg, result, outputs, utc_now()));
  std::size_t failed = 0;
  for (const auto& c : result.cells)
    if (c.status != "ok") {
      ++failed;
      std::cerr << "cell " << c.variant << " 1990-" << c.period << " failed: " << c.error << '\n';
    }
  if (!result.figure_note.empty()) std::cerr << "figure: " << result.figure_note << '\n';
  std::cerr << result.cells.size() - failed << "/" << result.cells.size() << " cells ok; outputs in "
            << cfg.output_dir << '\n';
  return 0;
}

// ---- fit ----

struct FitArgs {
  std::string config, model = "sar", period = "1990:2012", variant = "base", extrapolation, dataset, out;
};

int cmd_fit(const FitArgs& a) {
  auto cfg = pipeline::BatteryConfig::load(a.config);
  auto v = pipeline::parse_variant(a.variant);
  if (!v.model) v.model = parse_kind(a.model);
  if (!a.extrapolation.empty()) {
    auto e = slr::parse_extrapolation(a.extrapolation);
    if (!e) throw ConfigError("--extrapolation must be nearest or idw");
    v.extrapolation = *e;
  }
  if (!a.dataset.empty()) {
    auto d = slr::parse_dataset(a.dataset);
    if (!d) throw ConfigError("--slr-dataset must be full or window1979_2007");
    v.dataset = *d;
  }
  const pipeline::Study study(cfg.inputs);
  const auto cell = pipeline::run_cell(study, cfg, v, parse_period(a.period));
  const auto json = pipeline::cell_json(cell);
  if (a.out.empty()) {
    std::cout << json;
  } else {
    const fs::path dir(a.out);
    report::write_file((dir / "fit.json").string(), json);
    if (cell.fit)
      report::write_file((dir / "coefficients.tsv").string(),
                         capture([&](std::ostream& s) { report::write_coefficients_tsv(s, *cell.fit); }));
    if (cell.ols_fit)
      report::write_file((dir / "coefficients.tsv").string(),
                         capture([&](std::ostream& s) { report::write_coefficients_tsv(s, *cell.ols_fit); }));
    if (cell.impacts)
      report::write_file((dir / "impacts.tsv").string(),
                         capture([&](std::ostream& s) { report::write_impacts_tsv(s, *cell.impacts); }));
    if (cell.lm)
      report::write_file((dir / "lm.tsv").string(),
                         capture([&](std::ostream& s) { report::write_lm_tsv(s, *cell.lm); }));
  }
  if (cell.status != "ok") {
    std::cerr << "fit failed: " << cell.error << '\n';
    return kExitFailure;
  }
  return 0;
}

// ---- match ----

struct MatchArgs {
  std::string config, period = "1990:2012", ps_model = "logit", caliper_mode = "score_sd", ci_rule = "halfwidth";
  std::string extrapolation = "nearest", dataset = "full", out;
  std::vector<std::string> covariates = {"y0", "gov_expenditure_pc", "gov_expenditure_pc^2", "nonwhites_pct",
                                         "amenities", "education_pct", "population_density"};
  double caliper = 0.25;
  double quantile = 0.10;
  std::optional<double> threshold;
  int controls = 1;
  bool replace = false;
  std::uint64_t seed = 20190101;
  int bootstrap = 1000;
};

int cmd_match(const MatchArgs& a) {
  const auto cfg = pipeline::BatteryConfig::load(a.config);
  const pipeline::Study study(cfg.inputs);
  const auto mode = slr::parse_extrapolation(a.extrapolation);
  const auto ds = slr::parse_dataset(a.dataset);
  if (!mode || !ds) throw ConfigError("bad --extrapolation or --slr-dataset");
  const auto& cslr = study.county_slr(*mode, *ds);
  const double threshold = a.threshold ? *a.threshold : slr::coastal_quantile(cslr, a.quantile);
  slr::CiRule rule;
  if (a.ci_rule == "halfwidth") rule = slr::CiRule::minus_halfwidth;
  else if (a.ci_rule == "full_width") rule = slr::CiRule::minus_full_width;
  else throw ConfigError("--ci-rule must be halfwidth or full_width");
  const auto part = slr::treated_set(cslr, threshold, rule);

  std::vector<std::size_t> rows = part.treated;
  rows.insert(rows.end(), part.controls.begin(), part.controls.end());
  std::sort(rows.begin(), rows.end());
  const auto& counties = study.counties();
  const int end = parse_period(a.period);
  const auto n = static_cast<Eigen::Index>(rows.size());

  auto log_income = [&](std::size_t r, int year) {
    auto it = counties[r].income.find(year);
    if (it == counties[r].income.end() || !it->second.ok() || it->second.value <= 0.0)
      throw SchemaError("county " + counties[r].fips + " has no income for " + std::to_string(year));
    return std::log(it->second.value);
  };
  Eigen::VectorXd y(n), d(n);
  std::vector<std::string> ids;
  std::set<std::size_t> treated(part.treated.begin(), part.treated.end());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = rows[static_cast<std::size_t>(i)];
    y[i] = dataset::growth_rate(log_income(r, 1990), log_income(r, end), end - 1990);
    d[i] = treated.count(r) ? 1.0 : 0.0;
    ids.push_back(counties[r].fips);
  }
  std::vector<std::pair<std::string, Eigen::VectorXd>> cols;
  for (const auto& spec : a.covariates) {
    const bool square = spec.size() > 2 && spec.substr(spec.size() - 2) == "^2";
    const auto name = square ? spec.substr(0, spec.size() - 2) : spec;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto r = rows[static_cast<std::size_t>(i)];
      if (name == "y0") {
        v[i] = log_income(r, 1990);
      } else {
        const auto* c = counties[r].field(name);
        if (!c) throw ConfigError("unknown covariate '" + name + "'");
        v[i] = c->get();
      }
    }
    if (square) v = v.array().square().matrix();
    cols.emplace_back(spec, v);
  }
  const auto X = regression::DesignMatrix::with_intercept(cols);
  const auto ps = matching::fit_propensity(d, X, matching::parse_propensity_kind(a.ps_model));
  if (ps.separation) throw ConvergenceError("propensity model: " + ps.note);

  matching::MatchConfig mc;
  mc.caliper = a.caliper;
  mc.mode = matching::parse_caliper_mode(a.caliper_mode);
  mc.controls_per_treated = a.controls;
  mc.replace = a.replace;
  mc.seed = a.seed;
  std::vector<bool> is_treated(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) is_treated[static_cast<std::size_t>(i)] = d[i] == 1.0;
  Eigen::MatrixXd covs = X.X.rightCols(X.cols() - 1);
  const auto m = matching::match_units(ps.scores, is_treated, mc, covs);
  const auto effect = matching::att(m, y);
  const auto bal = matching::balance(m, X, stats::derive_seed(a.seed, 1), a.bootstrap);

  std::cerr << "threshold " << report::num(threshold) << " mm/year; treated " << part.treated.size() << ", controls "
            << part.controls.size() << ", excluded " << part.excluded.size() << "; matched " << m.matched() << '\n';
  if (!ps.note.empty()) std::cerr << "propensity: " << ps.note << '\n';
  emit(a.out, capture([&](std::ostream& s) { report::write_matching_tsv(s, m, effect, bal, ids); }));
  return 0;
}

// ---- figure ----

struct FigureArgs {
  std::string config, period, variant = "base", out = "figure_total_impacts.svg";
};

int cmd_figure(const FigureArgs& a) {
  auto cfg = pipeline::BatteryConfig::load(a.config);
  const int period = a.period.empty() ? cfg.figure_period : parse_period(a.period);
  cfg.periods = {period};
  cfg.figure_period = period;
  cfg.variants = {pipeline::parse_variant(a.variant)};
  const pipeline::Study study(cfg.inputs);
  const auto result = pipeline::run_battery(cfg, study);
  if (!result.figure_svg) {
    const auto& c = result.cells.front();
    std::cerr << "no figure: " << (c.status != "ok" ? c.error : result.figure_note) << '\n';
    return kExitFailure;
  }
  emit(a.out, *result.figure_svg);
  return 0;
}

// ---- synth ----

struct SynthArgs {
  std::string spec, estimator = "sar", out;
  std::size_t reps = 200;
  unsigned threads = 1;
};

int cmd_synth(const SynthArgs& a) {
  const auto spec = synth::load_dgp_spec(a.spec);
  if (!spec.seed) throw ConfigError(a.spec + ": [dgp] seed is required");
  const synth::Generator gen(spec);
  const auto report = synth::evaluate(synth::estimator_by_name(a.estimator), gen, a.reps, synth::truth_of(spec),
                                      a.threads);
  const auto truth = capture([&](std::ostream& s) { gen.write_truth(s); });
  const auto eval = capture([&](std::ostream& s) { synth::write_evaluation_tsv(s, report); });
  if (a.out.empty()) {
    std::cout << truth << '\n' << eval;
  } else {
    report::write_file((fs::path(a.out) / "truth.tsv").string(), truth);
    report::write_file((fs::path(a.out) / "evaluation.tsv").string(), eval);
  }
  for (const auto& msg : report.failure_messages) std::cerr << "replication failed: " << msg << '\n';
  return 0;
}

// ---- describe ----

int cmd_describe(const std::string& config_path, const std::string& out) {
  const auto cfg = pipeline::BatteryConfig::load(config_path);
  const pipeline::Study study(cfg.inputs);
  const auto& counties = study.counties();
  const auto& w = study.weights();
  const auto& cslr = study.county_slr(cfg.extrapolation, cfg.dataset);
  std::size_t coastal = 0;
  for (const auto& c : counties) coastal += c.is_coastal() ? 1 : 0;
  std::cerr << "complete counties " << counties.size() << " (incomplete dropped " << study.incomplete() << ")\n"
            << "coastal counties " << coastal << "\n"
            << "contiguity links " << w.nonzeros() / 2 << ", island links " << w.island_links().size() << "\n"
            << "near-coast threshold " << report::num(study.near_coast_threshold_km()) << " km\n"
            << "10% coastal SLR quantile " << report::num(slr::coastal_quantile(cslr, 0.10)) << " mm/year\n";
  std::vector<dataset::Column> cols;
  for (const auto& f : dataset::numeric_field_names()) cols.push_back(dataset::numeric_column(counties, f));
  std::vector<double> s;
  for (const auto& c : cslr) s.push_back(c.slr);
  cols.push_back({"slr_mm_yr", s});
  emit(out, capture([&](std::ostream& o) { dataset::write_descriptive_tsv(o, dataset::descriptive_stats(cols)); }));
  return 0;
}

// ---- make-fixture ----

struct FixtureArgs {
  std::string out;
  std::size_t rows = 48, cols = 64;
  std::uint64_t seed = 20190101;
};

int cmd_make_fixture(const FixtureArgs& a) {
  synth::CountySystemSpec spec;
  spec.rows = a.rows;
  spec.cols = a.cols;
  spec.seed = a.seed;
  // Keep the station density of the default grid on smaller maps.
  const double scale = std::min(1.0, static_cast<double>(a.rows * a.cols) / static_cast<double>(48 * 64));
  spec.stations = std::max<std::size_t>(8, static_cast<std::size_t>(std::lround(94 * scale)));
  spec.station_counties = std::max<std::size_t>(6, static_cast<std::size_t>(std::lround(86 * scale)));
  const auto files = synth::write_county_system(spec, a.out);
  auto rel = [&](const std::string& p) { return fs::path(p).filename().string(); };
  std::ostringstream cfg;
  cfg << "[data]\n"
      << "counties = " << rel(files.counties) << "\n"
      << "stations = " << rel(files.stations) << "\n"
      << "stations_window = " << rel(files.stations_window) << "\n"
      << "adjacency = " << rel(files.adjacency) << "\n"
      << "island_links = " << rel(files.island_links) << "\n"
      << "coast_order = " << rel(files.coast_order) << "\n"
      << "depletion_groups = " << rel(files.depletion_groups) << "\n\n"
      << "[run]\n"
      << "periods = 2000-2012\n"
      << "variants = base\n"
      << "model = sar\n"
      << "seed = " << a.seed << "\n"
      << "output_dir = out\n";
  report::write_file((fs::path(a.out) / "battery.cfg").string(), cfg.str());
  std::cerr << "fixture written to " << a.out << '\n';
  return 0;
}

// ---- replay ----

int cmd_replay(const std::string& manifest, const std::string& out) {
  const auto rep = pipeline::replay(manifest, out);
  for (const auto& m : rep.mismatches) std::cerr << m << '\n';
  std::cout << "inputs " << (rep.inputs_match ? "match" : "differ") << ", outputs "
            << (rep.outputs_match ? "match" : "differ") << '\n';
  return rep.inputs_match && rep.outputs_match ? 0 : kExitMismatch;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"County growth and sea-level rise: spatial growth regressions, matching and simulation"};
  app.require_subcommand(1);
  std::function<int()> action;

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run the period x variant battery from a config file");
  c_run->add_option("--config", run.config, "Battery config")->required()->check(CLI::ExistingFile);
  c_run->add_option("--out", run.out, "Output directory (overrides [run] output_dir)");
  c_run->add_option("--threads", run.threads, "Worker threads (overrides [run] threads)");
  c_run->callback([&] { action = [&] { return cmd_run(run); }; });

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit one period and variant and print the fit report");
  c_fit->add_option("--config", fit.config, "Battery config")->required()->check(CLI::ExistingFile);
  c_fit->add_option("--model", fit.model, "sar|sem|sac|white")->capture_default_str();
  c_fit->add_option("--period", fit.period, "1990:YYYY")->capture_default_str();
  c_fit->add_option("--variant", fit.variant, "Robustness variant")->capture_default_str();
  c_fit->add_option("--extrapolation", fit.extrapolation, "nearest|idw");
  c_fit->add_option("--slr-dataset", fit.dataset, "full|window1979_2007");
  c_fit->add_option("--out", fit.out, "Directory for fit.json and TSV tables (default: JSON to stdout)");
  c_fit->callback([&] { action = [&] { return cmd_fit(fit); }; });

  MatchArgs match;
  auto* c_match = app.add_subcommand("match", "Propensity-score matching of high-SLR coastal counties");
  c_match->add_option("--config", match.config, "Battery config")->required()->check(CLI::ExistingFile);
  c_match->add_option("--period", match.period, "1990:YYYY")->capture_default_str();
  c_match->add_option("--ps-model", match.ps_model, "logit|probit|lpm")->capture_default_str();
  c_match->add_option("--caliper", match.caliper, "Caliper width")->capture_default_str();
  c_match->add_option("--caliper-mode", match.caliper_mode, "score_sd|covariate_sd")->capture_default_str();
  c_match->add_option("--controls-per-treated", match.controls, "Controls per treated")->capture_default_str();
  c_match->add_flag("--replace", match.replace, "Match with replacement");
  c_match->add_option("--seed", match.seed, "Tie-break and bootstrap seed")->capture_default_str();
  c_match->add_option("--threshold", match.threshold, "Treatment threshold, mm/year (default: coastal quantile)");
  c_match->add_option("--quantile", match.quantile, "Coastal SLR quantile for the threshold")->capture_default_str();
  c_match->add_option("--ci-rule", match.ci_rule, "halfwidth|full_width")->capture_default_str();
  c_match->add_option("--covariates", match.covariates, "Propensity covariates; y0 is log 1990 income, ^2 squares")
      ->delimiter(',');
  c_match->add_option("--bootstrap", match.bootstrap, "Bootstrap KS resamples")->capture_default_str();
  c_match->add_option("--extrapolation", match.extrapolation, "nearest|idw")->capture_default_str();
  c_match->add_option("--slr-dataset", match.dataset, "full|window1979_2007")->capture_default_str();
  c_match->add_option("--out", match.out, "Output TSV (default: stdout)");
  c_match->callback([&] { action = [&] { return cmd_match(match); }; });

  FigureArgs figure;
  auto* c_fig = app.add_subcommand("figure", "Total-impact bar chart of coastal counties");
  c_fig->add_option("--config", figure.config, "Battery config")->required()->check(CLI::ExistingFile);
  c_fig->add_option("--period", figure.period, "1990:YYYY (default: [run] figure_period)");
  c_fig->add_option("--variant", figure.variant, "Full-sample variant")->capture_default_str();
  c_fig->add_option("--out", figure.out, "SVG path, - for stdout")->capture_default_str();
  c_fig->callback([&] { action = [&] { return cmd_figure(figure); }; });

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Monte Carlo evaluation of an estimator on a lattice DGP");
  c_syn->add_option("--spec", syn.spec, "DGP spec ([dgp] section)")->required()->check(CLI::ExistingFile);
  c_syn->add_option("--reps", syn.reps, "Replications")->capture_default_str()->check(CLI::Range(100, 1000000));
  c_syn->add_option("--estimator", syn.estimator, "sar|sem|sac|gs2sls|ols|lm|lm_sar")->capture_default_str();
  c_syn->add_option("--threads", syn.threads, "Worker threads")->capture_default_str();
  c_syn->add_option("--out", syn.out, "Directory for truth.tsv and evaluation.tsv (default: stdout)");
  c_syn->callback([&] { action = [&] { return cmd_synth(syn); }; });

  std::string describe_config, describe_out;
  auto* c_desc = app.add_subcommand("describe", "Sample summary and descriptive statistics");
  c_desc->add_option("--config", describe_config, "Battery config")->required()->check(CLI::ExistingFile);
  c_desc->add_option("--out", describe_out, "Output TSV (default: stdout)");
  c_desc->callback([&] { action = [&] { return cmd_describe(describe_config, describe_out); }; });

  FixtureArgs fixture;
  auto* c_fix = app.add_subcommand("make-fixture", "Write a synthetic county system and a battery config");
  c_fix->add_option("--out", fixture.out, "Target directory")->required();
  c_fix->add_option("--rows", fixture.rows, "Grid rows")->capture_default_str();
  c_fix->add_option("--cols", fixture.cols, "Grid columns")->capture_default_str();
  c_fix->add_option("--seed", fixture.seed, "Generator seed")->capture_default_str();
  c_fix->callback([&] { action = [&] { return cmd_make_fixture(fixture); }; });

  std::string manifest, replay_out;
  auto* c_rep = app.add_subcommand("replay", "Re-run a manifest and compare digests");
  c_rep->add_option("--manifest", manifest, "manifest.json")->required()->check(CLI::ExistingFile);
  c_rep->add_option("--out", replay_out, "Output directory for the re-run")->required();
  c_rep->callback([&] { action = [&] { return cmd_replay(manifest, replay_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
