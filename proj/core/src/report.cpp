#include "slrgrowth/report.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include "slrgrowth/error.hpp"
#include "slrgrowth/stats.hpp"

namespace slrgrowth::report {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError("cannot read '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string sha256_file(const std::string& path) { return sha256_hex(read_file(path)); }

void write_file(const std::string& path, const std::string& bytes) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw PreconditionError("cannot write '" + path + "'");
  out << bytes;
}

std::string num(double v, int digits) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

void write_coefficients_tsv(std::ostream& out, const spatial::SpatialFit& fit) {
  out << "term\testimate\tse\tz\tp\tband\n";
  auto row = [&](const std::string& term, double est, double se, double z, double p) {
    out << term << '\t' << num(est) << '\t' << num(se) << '\t' << num(z) << '\t' << num(p) << '\t'
        << stats::band_symbol(stats::band_of(p)) << '\n';
  };
  for (std::size_t j = 0; j < fit.names.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    row(fit.names[j], fit.beta[jj], fit.se[jj], fit.z[jj], fit.p[jj]);
  }
  if (fit.rho) row("rho", fit.rho->estimate, fit.rho->se, fit.rho->z, fit.rho->p);
  if (fit.lambda) row("lambda", fit.lambda->estimate, fit.lambda->se, fit.lambda->z, fit.lambda->p);
}

void write_coefficients_tsv(std::ostream& out, const regression::OlsFit& fit) {
  out << "term\testimate\tse\tt\tp\tband\n";
  for (std::size_t j = 0; j < fit.names.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    out << fit.names[j] << '\t' << num(fit.beta[jj]) << '\t' << num(fit.se[jj]) << '\t' << num(fit.t[jj]) << '\t'
        << num(fit.p[jj]) << '\t' << stats::band_symbol(stats::band_of(fit.p[jj])) << '\n';
  }
}

void write_impacts_tsv(std::ostream& out, const spatial::ImpactMeasures& im) {
  out << "variable\tdirect\tindirect\ttotal\n";
  for (const auto& r : im.rows)
    out << r.variable << '\t' << num(r.direct, 8) << '\t' << num(r.indirect, 8) << '\t' << num(r.total, 8) << '\n';
}

void write_lm_tsv(std::ostream& out, const spatial::LmReport& lm) {
  out << "test\tstatistic\tp\n";
  out << "lm_error\t" << num(lm.lm_error.statistic) << '\t' << num(lm.lm_error.p) << '\n';
  out << "lm_lag\t" << num(lm.lm_lag.statistic) << '\t' << num(lm.lm_lag.p) << '\n';
  out << "robust_lm_error\t" << num(lm.robust_lm_error.statistic) << '\t' << num(lm.robust_lm_error.p) << '\n';
  out << "robust_lm_lag\t" << num(lm.robust_lm_lag.statistic) << '\t' << num(lm.robust_lm_lag.p) << '\n';
}

void write_matching_tsv(std::ostream& out, const matching::Matching& m, const matching::Effect& effect,
                        const matching::BalanceReport& balance, const std::vector<std::string>& unit_ids) {
  auto label = [&](std::size_t i) { return i < unit_ids.size() ? unit_ids[i] : std::to_string(i); };
  out << "# effect\n";
  out << "att\tse\tz\tp\tband\tn_matched\tn_treated\n";
  out << num(effect.estimate) << '\t' << num(effect.se) << '\t' << num(effect.z) << '\t' << num(effect.p) << '\t'
      << stats::band_symbol(stats::band_of(effect.p)) << '\t' << effect.n_matched << '\t' << m.n_treated << '\n';
  out << "# balance\n";
  out << "variable\tmean_treated\tmean_control\tt_p\tks_d\tks_p\tks_boot_p\tzero_variance\n";
  for (const auto& r : balance.rows)
    out << r.variable << '\t' << num(r.mean_treated) << '\t' << num(r.mean_control) << '\t' << num(r.t_p) << '\t'
        << num(r.ks_d) << '\t' << num(r.ks_p) << '\t' << num(r.ks_boot_p) << '\t' << (r.zero_variance ? 1 : 0)
        << '\n';
  out << "# pairs\n";
  out << "treated\tcontrols\n";
  for (const auto& s : m.sets) {
    out << label(s.treated) << '\t';
    for (std::size_t k = 0; k < s.controls.size(); ++k) out << (k ? ";" : "") << label(s.controls[k]);
    out << '\n';
  }
}

std::string bar_chart_svg(const std::vector<FigureBar>& bars, const std::string& title) {
  const double bar_w = 4.0, gap = 1.0, left = 70.0, right = 20.0, top = 40.0, plot_h = 320.0, bottom = 30.0;
  const double width = left + right + static_cast<double>(bars.size()) * (bar_w + gap);
  const double height = top + plot_h + bottom;
  double lo = 0.0, hi = 0.0;
  for (const auto& b : bars) {
    if (!std::isfinite(b.height)) throw DomainError("county " + b.fips + " has no finite bar height");
    lo = std::min(lo, b.height);
    hi = std::max(hi, b.height);
  }
  if (hi == lo) hi = lo + 1.0;
  const double pad = 0.05 * (hi - lo);
  lo -= lo < 0.0 ? pad : 0.0;
  hi += pad;
  auto ypos = [&](double v) { return top + (hi - v) / (hi - lo) * plot_h; };

  std::string s;
  char buf[256];
  auto add = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    s += buf;
  };
  add("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.1f\" height=\"%.1f\" viewBox=\"0 0 %.1f %.1f\">\n", width,
      height, width, height);
  s += "<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::string t = title;
  for (const auto& [from, to] : {std::pair<std::string, std::string>{"&", "&amp;"}, {"<", "&lt;"}, {">", "&gt;"}}) {
    for (std::size_t p = t.find(from); p != std::string::npos; p = t.find(from, p + to.size())) t.replace(p, 1, to);
  }
  add("<text x=\"%.1f\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">", left);
  s += t + "</text>\n";
  const double y0 = ypos(0.0);
  add("<line x1=\"%.1f\" y1=\"%.3f\" x2=\"%.1f\" y2=\"%.3f\" stroke=\"black\" stroke-width=\"0.5\"/>\n", left, y0,
      width - right, y0);
  add("<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\" stroke-width=\"0.5\"/>\n", left, top, left,
      top + plot_h);
  for (double v : {lo, 0.0, hi}) {
    add("<text x=\"%.1f\" y=\"%.3f\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\">%.3g</text>\n",
        left - 4.0, ypos(v) + 3.0, v);
  }
  bool dark = true;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    if (i > 0 && bars[i].state != bars[i - 1].state) dark = !dark;
    const double x = left + static_cast<double>(i) * (bar_w + gap);
    const double yv = ypos(bars[i].height);
    const double y = std::min(yv, y0), h = std::abs(yv - y0);
    add("<rect x=\"%.1f\" y=\"%.3f\" width=\"%.1f\" height=\"%.3f\" fill=\"%s\" stroke=\"black\" stroke-width=\"0.3\">",
        x, y, bar_w, h, dark ? "black" : "white");
    s += "<title>" + bars[i].fips + " " + bars[i].state + " " + num(bars[i].height, 6) + "</title></rect>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace slrgrowth::report
