#include "hbkmr/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "hbkmr/csv.hpp"

namespace hbkmr::report {
namespace {

constexpr const char* kPalette[] = {"#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c"};

std::string color(std::size_t i) { return kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))]; }

std::string escape(const std::string& s) {
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

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

// Plot frame at (ox, oy) of size w x h with linear maps from data to pixels.
struct Frame {
  double ox, oy, w, h;
  Range xr, yr;

  double px(double x) const { return ox + (x - xr.lo) / (xr.hi - xr.lo) * w; }
  double py(double y) const { return oy + h - (y - yr.lo) / (yr.hi - yr.lo) * h; }

  void draw(std::ostream& out, const Axes& a, bool x_ticks = true) const {
    out << "<rect x=\"" << num(ox) << "\" y=\"" << num(oy) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double yv = yr.lo + (yr.hi - yr.lo) * k / 4.0;
      out << "<text x=\"" << num(ox - 6) << "\" y=\"" << num(py(yv) + 4)
          << "\" font-size=\"11\" text-anchor=\"end\">" << tick(yv) << "</text>\n";
      if (!x_ticks) continue;
      const double xv = xr.lo + (xr.hi - xr.lo) * k / 4.0;
      out << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(oy + h + 16)
          << "\" font-size=\"11\" text-anchor=\"middle\">" << tick(xv) << "</text>\n";
    }
    out << "<text x=\"" << num(ox + w / 2) << "\" y=\"" << num(oy - 10)
        << "\" font-size=\"14\" text-anchor=\"middle\">" << escape(a.title) << "</text>\n";
    out << "<text x=\"" << num(ox + w / 2) << "\" y=\"" << num(oy + h + 34)
        << "\" font-size=\"12\" text-anchor=\"middle\">" << escape(a.xlabel) << "</text>\n";
    out << "<text transform=\"translate(" << num(ox - 46) << "," << num(oy + h / 2)
        << ") rotate(-90)\" font-size=\"12\" text-anchor=\"middle\">" << escape(a.ylabel) << "</text>\n";
  }

  void zero_line(std::ostream& out) const {
    if (yr.lo < 0.0 && yr.hi > 0.0)
      out << "<line x1=\"" << num(ox) << "\" x2=\"" << num(ox + w) << "\" y1=\"" << num(py(0)) << "\" y2=\""
          << num(py(0)) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }
};

void open_svg(std::ostream& out, double width, double height) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void legend(std::ostream& out, const std::vector<Series>& series, double x, double y) {
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    out << "<rect x=\"" << num(x) << "\" y=\"" << num(yy - 9) << "\" width=\"12\" height=\"10\" fill=\"" << color(i)
        << "\"/>\n<text x=\"" << num(x + 16) << "\" y=\"" << num(yy) << "\" font-size=\"11\">"
        << escape(series[i].label) << "</text>\n";
  }
}

}  // namespace

void write_effects_csv(std::ostream& out, const std::vector<EffectEstimate>& effects) {
  csv::write_row(out, {"label", "estimate", "sd", "lower95", "upper95"});
  for (const auto& e : effects)
    csv::write_row(out, {e.label, csv::format_double(e.estimate), csv::format_double(e.sd),
                         csv::format_double(e.lower95), csv::format_double(e.upper95)});
}

void svg_band_plot(std::ostream& out, const Axes& axes, const std::vector<Series>& series) {
  Frame f{70, 40, 520, 320, {}, {}};
  for (const auto& s : series) {
    for (double v : s.x) f.xr.add(v);
    for (double v : s.y) f.yr.add(v);
    for (double v : s.lower) f.yr.add(v);
    for (double v : s.upper) f.yr.add(v);
  }
  f.xr.finish();
  f.yr.finish();
  open_svg(out, 760, 420);
  f.draw(out, axes);
  f.zero_line(out);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    if (s.lower.size() == s.x.size() && s.upper.size() == s.x.size() && !s.x.empty()) {
      out << "<polygon fill=\"" << color(i) << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (std::size_t k = 0; k < s.x.size(); ++k) out << num(f.px(s.x[k])) << "," << num(f.py(s.upper[k])) << " ";
      for (std::size_t k = s.x.size(); k-- > 0;) out << num(f.px(s.x[k])) << "," << num(f.py(s.lower[k])) << " ";
      out << "\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"" << color(i) << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < std::min(s.x.size(), s.y.size()); ++k)
      out << num(f.px(s.x[k])) << "," << num(f.py(s.y[k])) << " ";
    out << "\"/>\n";
  }
  legend(out, series, 610, 60);
  out << "</svg>\n";
}

void svg_interval_plot(std::ostream& out, const Axes& axes, const std::vector<Series>& series,
                       const std::vector<std::string>& tick_labels) {
  Frame f{70, 40, 520, 320, {}, {}};
  for (const auto& s : series) {
    for (double v : s.x) f.xr.add(v);
    for (double v : s.y) f.yr.add(v);
    for (double v : s.lower) f.yr.add(v);
    for (double v : s.upper) f.yr.add(v);
  }
  f.xr.finish();
  f.yr.finish();
  open_svg(out, 760, 420);
  f.draw(out, axes, tick_labels.empty());
  f.zero_line(out);
  const double dodge = 8.0;
  const double centre = 0.5 * static_cast<double>(series.size() - 1);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const double off = (static_cast<double>(i) - centre) * dodge;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      const double x = f.px(s.x[k]) + off;
      if (k < s.lower.size() && k < s.upper.size())
        out << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(f.py(s.lower[k]))
            << "\" y2=\"" << num(f.py(s.upper[k])) << "\" stroke=\"" << color(i) << "\" stroke-width=\"2\"/>\n";
      if (k < s.y.size())
        out << "<circle cx=\"" << num(x) << "\" cy=\"" << num(f.py(s.y[k])) << "\" r=\"3.5\" fill=\"" << color(i)
            << "\"/>\n";
    }
  }
  if (!tick_labels.empty() && !series.empty()) {
    const auto& xs = series.front().x;
    for (std::size_t k = 0; k < std::min(xs.size(), tick_labels.size()); ++k)
      out << "<text x=\"" << num(f.px(xs[k])) << "\" y=\"" << num(f.oy + f.h + 16)
          << "\" font-size=\"10\" text-anchor=\"middle\">" << escape(tick_labels[k]) << "</text>\n";
  }
  legend(out, series, 610, 60);
  out << "</svg>\n";
}

void svg_scatter_panels(std::ostream& out, const std::vector<Panel>& panels) {
  const double pw = 360, ph = 260, gap_x = 110, gap_y = 100;
  const std::size_t cols = 2;
  const std::size_t rows = (panels.size() + cols - 1) / cols;
  open_svg(out, 70 + cols * (pw + gap_x), 40 + static_cast<double>(rows) * (ph + gap_y));
  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    Frame f{70 + static_cast<double>(p % cols) * (pw + gap_x), 40 + static_cast<double>(p / cols) * (ph + gap_y),
            pw, ph, {}, {}};
    for (double v : panel.x) f.xr.add(v);
    for (double v : panel.y) f.yr.add(v);
    if (!panel.groups.empty()) {
      f.xr.lo = -0.5;
      f.xr.hi = static_cast<double>(panel.groups.size()) - 0.5;
    } else {
      f.xr.finish();
    }
    f.yr.finish();
    f.draw(out, panel.axes, panel.groups.empty());
    f.zero_line(out);
    for (std::size_t k = 0; k < std::min(panel.x.size(), panel.y.size()); ++k) {
      // Deterministic horizontal jitter for strip plots.
      const double jitter = panel.groups.empty() ? 0.0 : 0.3 * (static_cast<double>((k * 7919) % 101) / 100.0 - 0.5);
      out << "<circle cx=\"" << num(f.px(panel.x[k] + jitter)) << "\" cy=\"" << num(f.py(panel.y[k]))
          << "\" r=\"2\" fill=\"#1b6ca8\" fill-opacity=\"0.6\"/>\n";
    }
    for (std::size_t g = 0; g < panel.groups.size(); ++g)
      out << "<text x=\"" << num(f.px(static_cast<double>(g))) << "\" y=\"" << num(f.oy + f.h + 16)
          << "\" font-size=\"11\" text-anchor=\"middle\">" << escape(panel.groups[g]) << "</text>\n";
  }
  out << "</svg>\n";
}

void svg_prediction_plot(std::ostream& out, const Axes& axes, const std::vector<double>& observed,
                         const std::vector<EffectEstimate>& intervals) {
  std::vector<std::size_t> order(intervals.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return intervals[a].lower95 + intervals[a].upper95 < intervals[b].lower95 + intervals[b].upper95;
  });
  Frame f{70, 40, 620, 320, {}, {}};
  f.xr.lo = -0.5;
  f.xr.hi = static_cast<double>(intervals.size()) - 0.5;
  for (const auto& e : intervals) f.yr.add(e.lower95), f.yr.add(e.upper95);
  for (double v : observed) f.yr.add(v);
  f.yr.finish();
  open_svg(out, 760, 420);
  f.draw(out, axes, false);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& e = intervals[order[k]];
    const double x = f.px(static_cast<double>(k));
    out << "<line x1=\"" << num(x) << "\" x2=\"" << num(x) << "\" y1=\"" << num(f.py(e.lower95)) << "\" y2=\""
        << num(f.py(e.upper95)) << "\" stroke=\"#1b6ca8\" stroke-opacity=\"0.6\"/>\n";
    if (order[k] < observed.size() && std::isfinite(observed[order[k]])) {
      const bool inside = e.lower95 <= observed[order[k]] && observed[order[k]] <= e.upper95;
      out << "<circle cx=\"" << num(x) << "\" cy=\"" << num(f.py(observed[order[k]])) << "\" r=\"2\" fill=\""
          << (inside ? "#222" : "#d1495b") << "\"/>\n";
    }
  }
  out << "</svg>\n";
}

}  // namespace hbkmr::report
