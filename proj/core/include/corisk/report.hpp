#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace corisk {

struct PlotSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
  bool step = false;
};

struct PlotMarker {
  std::string label;
  double x = 0.0;
  double y = 0.0;
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_max = 1.0;
  double y_max = 1.0;
  bool diagonal = false;
  std::vector<PlotSeries> series;
  std::vector<PlotMarker> markers;
};

std::string render_svg(const LinePlot& plot);

// Writes report.json and, when plots is set, one SVG per figure. Returns the
// files written.
std::vector<std::filesystem::path> write_report(const nlohmann::json& report, const std::filesystem::path& dir,
                                                bool plots);

}  // namespace corisk
