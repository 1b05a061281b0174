#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hbkmr/inference.hpp"

namespace hbkmr::report {

// label,estimate,sd,lower95,upper95
void write_effects_csv(std::ostream& out, const std::vector<EffectEstimate>& effects);

// One curve with a shaded interval band (or error bars in interval plots).
struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> lower;
  std::vector<double> upper;
};

struct Axes {
  std::string title;
  std::string xlabel;
  std::string ylabel;
};

// Curves with 95% bands, overlaid; a horizontal reference line at 0.
void svg_band_plot(std::ostream& out, const Axes& axes, const std::vector<Series>& series);

// Point estimates with error bars; series are dodged horizontally around each x.
void svg_interval_plot(std::ostream& out, const Axes& axes, const std::vector<Series>& series,
                       const std::vector<std::string>& tick_labels = {});

struct Panel {
  Axes axes;
  std::vector<double> x;
  std::vector<double> y;
  // Non-empty: x holds group indices and these name the groups (strip plot).
  std::vector<std::string> groups;
};

// Scatter panels laid out in a grid, two per row.
void svg_scatter_panels(std::ostream& out, const std::vector<Panel>& panels);

// Observed values against 95% predictive intervals, sorted by interval midpoint.
void svg_prediction_plot(std::ostream& out, const Axes& axes, const std::vector<double>& observed,
                         const std::vector<EffectEstimate>& intervals);

}  // namespace hbkmr::report
