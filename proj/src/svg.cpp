#include "augspec/svg.hpp"

#include "augspec/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace augspec {

namespace {

constexpr double kWidth = 760.0;
constexpr double kHeight = 420.0;
constexpr double kMarginLeft = 70.0;
constexpr double kMarginRight = 20.0;
constexpr double kMarginTop = 40.0;
constexpr double kMarginBottom = 60.0;

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868",
                          "#c44e52", "#8172b3", "#937860"};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
  double map(double v, double pixel_lo, double pixel_hi) const {
    const double t = (v - lo) / (hi - lo);
    return pixel_lo + t * (pixel_hi - pixel_lo);
  }
};

Range padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.08 * (hi - lo);
  return {lo - pad, hi + pad};
}

struct BoxStats {
  double q1, median, q3, lo_whisker, hi_whisker;
};

BoxStats box_stats(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t i = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(i);
    if (i + 1 >= values.size()) return values.back();
    return values[i] * (1.0 - frac) + values[i + 1] * frac;
  };
  BoxStats s{};
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.lo_whisker = values.front();
  s.hi_whisker = values.back();
  return s;
}

void svg_header(std::ostream& out, double width, double height) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void text_at(std::ostream& out, double x, double y, const std::string& s,
             const std::string& anchor = "middle", double size = 12.0) {
  out << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y)
      << "\" font-family=\"sans-serif\" font-size=\"" << size
      << "\" text-anchor=\"" << anchor << "\">" << s << "</text>\n";
}

}  // namespace

void write_box_plot_svg(const std::filesystem::path& path,
                        const std::vector<BoxPanel>& panels,
                        const std::string& y_label) {
  const double panel_width = kWidth;
  const double total_height = kHeight * static_cast<double>(panels.size());
  std::ofstream out(path);
  if (!out) throw LinalgError("write_box_plot_svg: cannot open " + path.string());
  svg_header(out, panel_width, total_height);

  for (std::size_t p = 0; p < panels.size(); ++p) {
    const auto& panel = panels[p];
    const double top = kHeight * static_cast<double>(p);
    const double plot_left = kMarginLeft;
    const double plot_right = panel_width - kMarginRight;
    const double plot_top = top + kMarginTop;
    const double plot_bottom = top + kHeight - kMarginBottom;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& s : panel.series) {
      for (double v : s.values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    if (!std::isfinite(lo)) {
      lo = 0.0;
      hi = 1.0;
    }
    const Range yr = padded_range(lo, hi);

    out << "<line x1=\"" << fmt(plot_left) << "\" y1=\"" << fmt(plot_bottom)
        << "\" x2=\"" << fmt(plot_right) << "\" y2=\"" << fmt(plot_bottom)
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << fmt(plot_left) << "\" y1=\"" << fmt(plot_top)
        << "\" x2=\"" << fmt(plot_left) << "\" y2=\"" << fmt(plot_bottom)
        << "\" stroke=\"black\"/>\n";
    text_at(out, (plot_left + plot_right) / 2, top + 20.0, panel.title,
            "middle", 14.0);
    text_at(out, 16.0, (plot_top + plot_bottom) / 2, y_label, "middle");

    for (int tick = 0; tick <= 4; ++tick) {
      const double v = yr.lo + (yr.hi - yr.lo) * tick / 4.0;
      const double y = yr.map(v, plot_bottom, plot_top);
      out << "<line x1=\"" << fmt(plot_left - 4) << "\" y1=\"" << fmt(y)
          << "\" x2=\"" << fmt(plot_left) << "\" y2=\"" << fmt(y)
          << "\" stroke=\"black\"/>\n";
      std::ostringstream label;
      label.precision(3);
      label << v;
      text_at(out, plot_left - 8, y + 4, label.str(), "end", 10.0);
    }

    const double n = static_cast<double>(panel.series.size());
    const double slot = (plot_right - plot_left) / std::max(n, 1.0);
    for (std::size_t i = 0; i < panel.series.size(); ++i) {
      const auto& s = panel.series[i];
      if (s.values.empty()) continue;
      const BoxStats st = box_stats(s.values);
      const double cx = plot_left + slot * (static_cast<double>(i) + 0.5);
      const double half = std::min(28.0, slot * 0.3);
      const char* color = kPalette[i % 6];

      const double y_q1 = yr.map(st.q1, plot_bottom, plot_top);
      const double y_q3 = yr.map(st.q3, plot_bottom, plot_top);
      const double y_med = yr.map(st.median, plot_bottom, plot_top);
      const double y_lo = yr.map(st.lo_whisker, plot_bottom, plot_top);
      const double y_hi = yr.map(st.hi_whisker, plot_bottom, plot_top);

      out << "<line x1=\"" << fmt(cx) << "\" y1=\"" << fmt(y_lo) << "\" x2=\""
          << fmt(cx) << "\" y2=\"" << fmt(y_hi) << "\" stroke=\"" << color
          << "\"/>\n";
      out << "<rect x=\"" << fmt(cx - half) << "\" y=\"" << fmt(y_q3)
          << "\" width=\"" << fmt(2 * half) << "\" height=\""
          << fmt(std::max(1.0, y_q1 - y_q3)) << "\" fill=\"" << color
          << "\" fill-opacity=\"0.35\" stroke=\"" << color << "\"/>\n";
      out << "<line x1=\"" << fmt(cx - half) << "\" y1=\"" << fmt(y_med)
          << "\" x2=\"" << fmt(cx + half) << "\" y2=\"" << fmt(y_med)
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      text_at(out, cx, plot_bottom + 18, s.label);
    }
  }
  out << "</svg>\n";
}

void write_line_chart_svg(const std::filesystem::path& path,
                          const std::vector<LineSeries>& series,
                          const std::string& title, const std::string& x_label,
                          const std::string& y_label) {
  std::ofstream out(path);
  if (!out) throw LinalgError("write_line_chart_svg: cannot open " + path.string());
  svg_header(out, kWidth, kHeight);

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo;
  double y_lo = x_lo, y_hi = -x_lo;
  for (const auto& s : series) {
    for (double v : s.xs) {
      x_lo = std::min(x_lo, v);
      x_hi = std::max(x_hi, v);
    }
    for (double v : s.ys) {
      y_lo = std::min(y_lo, v);
      y_hi = std::max(y_hi, v);
    }
  }
  if (!std::isfinite(x_lo)) {
    x_lo = 0;
    x_hi = 1;
    y_lo = 0;
    y_hi = 1;
  }
  const Range xr = padded_range(x_lo, x_hi);
  const Range yr = padded_range(y_lo, y_hi);
  const double plot_left = kMarginLeft;
  const double plot_right = kWidth - kMarginRight;
  const double plot_top = kMarginTop;
  const double plot_bottom = kHeight - kMarginBottom;

  out << "<line x1=\"" << fmt(plot_left) << "\" y1=\"" << fmt(plot_bottom)
      << "\" x2=\"" << fmt(plot_right) << "\" y2=\"" << fmt(plot_bottom)
      << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << fmt(plot_left) << "\" y1=\"" << fmt(plot_top)
      << "\" x2=\"" << fmt(plot_left) << "\" y2=\"" << fmt(plot_bottom)
      << "\" stroke=\"black\"/>\n";
  text_at(out, (plot_left + plot_right) / 2, 22.0, title, "middle", 14.0);
  text_at(out, (plot_left + plot_right) / 2, kHeight - 16.0, x_label);
  text_at(out, 16.0, (plot_top + plot_bottom) / 2, y_label);

  for (int tick = 0; tick <= 4; ++tick) {
    const double vy = yr.lo + (yr.hi - yr.lo) * tick / 4.0;
    const double y = yr.map(vy, plot_bottom, plot_top);
    std::ostringstream label;
    label.precision(3);
    label << vy;
    text_at(out, plot_left - 8, y + 4, label.str(), "end", 10.0);
    const double vx = xr.lo + (xr.hi - xr.lo) * tick / 4.0;
    const double x = xr.map(vx, plot_left, plot_right);
    std::ostringstream xlab;
    xlab.precision(3);
    xlab << vx;
    text_at(out, x, plot_bottom + 16, xlab.str(), "middle", 10.0);
  }

  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % 6];
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t j = 0; j < s.xs.size(); ++j) {
      out << fmt(xr.map(s.xs[j], plot_left, plot_right)) << ','
          << fmt(yr.map(s.ys[j], plot_bottom, plot_top)) << ' ';
    }
    out << "\"/>\n";
    text_at(out, plot_right - 10,
            plot_top + 16.0 * static_cast<double>(i + 1), s.label, "end");
  }
  out << "</svg>\n";
}

}  // namespace augspec
