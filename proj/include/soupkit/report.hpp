#pragma once

// Self-contained SVG figures and a markdown results table. Every number drawn
// is format_short() of the value that the CSV stores at full precision, so a
// parse-back comparison is exact. No timestamps, no generated ids.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "soupkit/bench.hpp"
#include "soupkit/io.hpp"
#include "soupkit/soup.hpp"

namespace soupkit {

inline void dump_alpha(const AlphaSet& alphas, const std::filesystem::path& path) {
  write_file_atomic(path, alpha_csv(alphas));
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string num(double v) { return format_short(v); }

inline std::string svg_open(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"monospace\" font-size=\"11\">\n";
}

inline std::string text(double x, double y, std::string_view body, std::string_view extra = "") {
  std::string s = "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\"";
  if (!extra.empty()) s += " " + std::string(extra);
  return s + ">" + xml_escape(body) + "</text>\n";
}

inline std::string rect(double x, double y, double w, double h, std::string_view fill) {
  return "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"" + std::string(fill) + "\" stroke=\"#333\" stroke-width=\"0.5\"/>\n";
}

/// White-to-blue ramp, t in [0, 1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto lerp = [&](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", lerp(0xf7, 0x08), lerp(0xfb, 0x30), lerp(0xff, 0x6b));
  return buf;
}

}  // namespace detail

inline constexpr std::string_view kGreen = "#2ca02c";
inline constexpr std::string_view kRed = "#d62728";
inline constexpr std::string_view kBlue = "#1f77b4";
inline constexpr std::string_view kGray = "#bbbbbb";

/// Base-1 dominance: strictly more than half.
inline bool base1_dominates(double alpha1) { return alpha1 > 0.5; }

/// One row of cells per run, one cell per layer (a single cell for the
/// non-layer kinds). Each cell holds an alpha1 bar and its value.
inline std::string alpha_strip_svg(const std::map<std::string, AlphaSet>& alpha_sets, UnitKind kind) {
  if (alpha_sets.empty()) fail("alpha strip: no runs given");
  std::set<SoupUnitId> keys;
  for (const auto& [u, r] : alpha_sets.begin()->second.raw) keys.insert(u);
  for (const auto& [name, set] : alpha_sets) {
    std::set<SoupUnitId> k;
    for (const auto& [u, r] : set.raw) k.insert(u);
    if (k != keys) fail("alpha strip: run '", name, "' has a different model config");
  }
  std::vector<SoupUnitId> units;
  for (const auto& u : keys)
    if (u.kind == kind) units.push_back(u);
  if (units.empty()) fail("alpha strip: no units of kind '", kind_name(kind), "'");

  const double cw = 56, ch = 44, left = 150, top = 40;
  const double width = left + cw * static_cast<double>(units.size()) + 20;
  const double height = top + ch * static_cast<double>(alpha_sets.size()) + 30;
  std::string s = detail::svg_open(width, height);
  s += detail::text(10, 20, "alpha1 by layer: " + std::string(kind_name(kind)));
  for (std::size_t i = 0; i < units.size(); ++i) {
    const std::string label = units[i].layer ? "L" + std::to_string(*units[i].layer) : std::string(kind_name(kind));
    s += detail::text(left + cw * static_cast<double>(i) + 4, top - 6, label);
  }
  std::size_t row = 0;
  for (const auto& [name, set] : alpha_sets) {
    const double y = top + ch * static_cast<double>(row++);
    s += detail::text(10, y + ch / 2 + 4, name);
    for (std::size_t i = 0; i < units.size(); ++i) {
      const double a1 = activate(set.raw.at(units[i]), set.activation).alpha1;
      const double x = left + cw * static_cast<double>(i);
      const auto colour = base1_dominates(a1) ? kGreen : kRed;
      s += "<g class=\"cell\" data-run=\"" + detail::xml_escape(name) + "\" data-unit=\"" + units[i].label() +
           "\" data-alpha1=\"" + detail::num(a1) + "\" data-colour=\"" + (base1_dominates(a1) ? "green" : "red") +
           "\">\n";
      s += detail::rect(x, y, cw, ch, colour);
      s += detail::rect(x + 4, y + ch - 4 - (ch - 20) * std::clamp(a1, 0.0, 1.0), 8,
                        (ch - 20) * std::clamp(a1, 0.0, 1.0), "#ffffff");
      s += detail::text(x + 15, y + ch / 2 + 4, detail::num(a1), "fill=\"#ffffff\"");
      s += "</g>\n";
    }
  }
  s += detail::text(10, height - 10, "green: alpha1 > 0.5 (base 1 dominates); red otherwise");
  return s + "</svg>\n";
}

/// One panel per (train spec, activation, lambda); cells are epochs x lr
/// coloured on a single min/max ramp across the figure.
inline std::string grid_heatmap_svg(const std::vector<SweepRecord>& records, const std::string& eval_set) {
  using PanelKey = std::tuple<std::string, std::string, double>;
  std::vector<PanelKey> panels;
  std::set<double> lrs;
  std::set<std::size_t> epochs;
  std::map<std::tuple<PanelKey, std::size_t, double>, const SweepRecord*> cells;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : records) {
    if (r.alpha1) continue;
    const PanelKey key{r.train_spec, r.activation, r.lambda_l1};
    if (std::find(panels.begin(), panels.end(), key) == panels.end()) panels.push_back(key);
    lrs.insert(r.learning_rate);
    epochs.insert(r.epochs);
    if (!cells.emplace(std::tuple{key, r.epochs, r.learning_rate}, &r).second)
      fail("grid heatmap: duplicate grid point for '", r.train_spec, "'");
    if (r.failed) continue;
    const Metrics* m = r.find(eval_set);
    if (!m) fail("grid heatmap: record lacks eval set '", eval_set, "'");
    lo = std::min(lo, m->exact_match);
    hi = std::max(hi, m->exact_match);
  }
  if (panels.empty()) fail("grid heatmap: no grid records");

  const double cw = 64, ch = 28, left = 70, title_h = 40;
  const double panel_h = title_h + ch * static_cast<double>(epochs.size()) + 30;
  const double width = left + cw * static_cast<double>(lrs.size()) + 20;
  const double height = panel_h * static_cast<double>(panels.size()) + 40;
  std::string s = detail::svg_open(width, height);
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& [spec, act, lam] = panels[p];
    const double py = panel_h * static_cast<double>(p);
    s += detail::text(10, py + 16,
                      eval_set + " exact match | " + spec + " | " + act + " | lambda " + detail::num(lam));
    std::size_t ci = 0;
    for (double lr : lrs)
      s += detail::text(left + cw * static_cast<double>(ci++) + 4, py + title_h - 6, detail::num(lr),
                        "class=\"lr-label\"");
    std::size_t ri = 0;
    for (auto e : epochs) {
      const double y = py + title_h + ch * static_cast<double>(ri++);
      s += detail::text(10, y + ch / 2 + 4, "ep " + std::to_string(e), "class=\"epoch-label\"");
      ci = 0;
      for (double lr : lrs) {
        const double x = left + cw * static_cast<double>(ci++);
        auto it = cells.find({panels[p], e, lr});
        const bool ok = it != cells.end() && !it->second->failed;
        const std::string value = ok ? detail::num(it->second->find(eval_set)->exact_match) : "failed";
        std::string fill(kGray);
        bool dark = false;
        if (ok) {
          const double v = it->second->find(eval_set)->exact_match;
          const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
          fill = detail::ramp(t);
          dark = t > 0.5;
        }
        s += "<g class=\"cell\" data-train-spec=\"" + detail::xml_escape(spec) + "\" data-activation=\"" + act +
             "\" data-lambda=\"" + detail::num(lam) + "\" data-epochs=\"" + std::to_string(e) + "\" data-lr=\"" +
             detail::num(lr) + "\" data-value=\"" + value + "\">\n";
        s += detail::rect(x, y, cw, ch, fill);
        s += detail::text(x + 6, y + ch / 2 + 4, value, dark ? "fill=\"#ffffff\"" : "");
        s += "</g>\n";
      }
    }
  }
  const std::string range = hi > lo ? "min " + detail::num(lo) + " .. max " + detail::num(hi)
                            : std::isfinite(lo) ? "constant " + detail::num(lo)
                                                : "all points failed";
  s += detail::text(10, height - 14, "colour: " + range, "class=\"legend\"");
  return s + "</svg>\n";
}

/// Green soup points at alpha1 in (0, 1); blue line base 1, red line base 2.
inline std::string vanilla_curve_svg(const std::vector<SweepRecord>& records, const std::string& eval_set) {
  const SweepRecord *b1 = nullptr, *b2 = nullptr;
  std::vector<const SweepRecord*> soups;
  for (const auto& r : records) {
    if (!r.alpha1) continue;
    if (!r.find(eval_set)) fail("vanilla curve: record lacks eval set '", eval_set, "'");
    if (*r.alpha1 == 1.0) b1 = &r;
    else if (*r.alpha1 == 0.0) b2 = &r;
    else soups.push_back(&r);
  }
  if (!b1 || !b2) fail("vanilla curve: both base records (alpha1 = 0 and 1) are required");
  std::sort(soups.begin(), soups.end(), [](auto a, auto b) { return *a->alpha1 < *b->alpha1; });

  const double left = 60, top = 30, pw = 400, ph = 240;
  auto px = [&](double a) { return left + pw * a; };
  auto py = [&](double v) { return top + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
  std::string s = detail::svg_open(left + pw + 140, top + ph + 50);
  s += detail::text(10, 18, "vanilla soup: " + eval_set + " exact match vs alpha1");
  s += detail::rect(left, top, pw, ph, "#ffffff");
  for (double t : {0.0, 0.5, 1.0}) {
    s += detail::text(left - 30, py(t) + 4, detail::num(t));
    s += detail::text(px(t) - 6, top + ph + 16, detail::num(t));
  }
  auto baseline = [&](const SweepRecord* r, std::string_view colour, std::string_view name) {
    const double v = r->find(eval_set)->exact_match;
    std::string out = "<g class=\"baseline\" data-base=\"" + std::string(name) + "\" data-value=\"" +
                      detail::num(v) + "\">\n";
    out += "<line x1=\"" + detail::num(left) + "\" y1=\"" + detail::num(py(v)) + "\" x2=\"" +
           detail::num(left + pw) + "\" y2=\"" + detail::num(py(v)) + "\" stroke=\"" + std::string(colour) +
           "\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n";
    out += detail::text(left + pw + 8, py(v) + 4, std::string(name) + " " + detail::num(v),
                        "fill=\"" + std::string(colour) + "\"");
    return out + "</g>\n";
  };
  s += baseline(b1, kBlue, "base1");
  s += baseline(b2, kRed, "base2");
  if (!soups.empty()) {
    std::string pts;
    for (const auto* r : soups)
      pts += (pts.empty() ? "" : " ") + detail::num(px(*r->alpha1)) + "," + detail::num(py(r->find(eval_set)->exact_match));
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + std::string(kGreen) + "\"/>\n";
  }
  for (const auto* r : soups) {
    const double v = r->find(eval_set)->exact_match;
    s += "<g class=\"point\" data-alpha1=\"" + detail::num(*r->alpha1) + "\" data-value=\"" + detail::num(v) + "\">\n";
    s += "<circle cx=\"" + detail::num(px(*r->alpha1)) + "\" cy=\"" + detail::num(py(v)) + "\" r=\"4\" fill=\"" +
         std::string(kGreen) + "\"/>\n";
    s += detail::text(px(*r->alpha1) - 10, py(v) - 8, detail::num(v), "font-size=\"9\"");
    s += "</g>\n";
  }
  return s + "</svg>\n";
}

struct BaselineRow {
  std::string name;
  std::vector<NamedMetrics> metrics;
};

/// Markdown table: baseline rows first, then one row per train spec with
/// mean / max exact match per eval set and the two sums.
inline std::string summary_table(const std::vector<SummaryRow>& rows, const std::vector<BaselineRow>& baselines = {}) {
  std::vector<std::string> sets;
  if (!rows.empty()) sets = rows.front().eval_sets;
  else if (!baselines.empty())
    for (const auto& m : baselines.front().metrics) sets.push_back(m.eval_set);
  if (sets.empty()) fail("summary table: nothing to render");

  std::string s = "| method |";
  std::string rule = "|---|";
  for (const auto& e : sets) {
    s += " " + e + " mean | " + e + " max |";
    rule += "---|---|";
  }
  s += " sum mean | sum max |\n" + rule + "---|---|\n";
  for (const auto& b : baselines) {
    s += "| " + b.name + " |";
    double total = 0.0;
    for (const auto& e : sets) {
      auto it = std::find_if(b.metrics.begin(), b.metrics.end(), [&](const NamedMetrics& m) { return m.eval_set == e; });
      if (it == b.metrics.end()) fail("summary table: baseline '", b.name, "' lacks eval set '", e, "'");
      total += it->metrics.exact_match;
      s += " " + detail::num(it->metrics.exact_match) + " | " + detail::num(it->metrics.exact_match) + " |";
    }
    s += " " + detail::num(total) + " | " + detail::num(total) + " |\n";
  }
  for (const auto& r : rows) {
    if (r.eval_sets != sets) fail("summary table: rows disagree on eval sets");
    s += "| " + r.train_spec + " |";
    for (std::size_t e = 0; e < sets.size(); ++e) s += " " + detail::num(r.mean[e]) + " | " + detail::num(r.max[e]) + " |";
    s += " " + detail::num(r.sum_mean) + " | " + detail::num(r.sum_max) + " |\n";
  }
  return s;
}

}  // namespace soupkit
