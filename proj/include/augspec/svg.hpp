#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace augspec {

/// Grouped box plot written as a standalone SVG, one box per (group, label)
/// cell. Plots are a convenience; the CSVs remain the contract.
struct BoxSeries {
  std::string label;
  std::vector<double> values;
};

struct BoxPanel {
  std::string title;
  std::vector<BoxSeries> series;
};

void write_box_plot_svg(const std::filesystem::path& path,
                        const std::vector<BoxPanel>& panels,
                        const std::string& y_label);

/// Simple multi-line chart over a shared x grid.
struct LineSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

void write_line_chart_svg(const std::filesystem::path& path,
                          const std::vector<LineSeries>& series,
                          const std::string& title, const std::string& x_label,
                          const std::string& y_label);

}  // namespace augspec
