#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace eatr::plot {

struct Series {
  std::string name;
  std::vector<double> y;  // x is the index
  uint8_t r = 0, g = 0, b = 0;
};

// Renders index-vs-value polylines with axis box, gridlines, and numeric
// min/max labels into an 8-bit RGB PNG. Non-finite points are skipped.
void line_plot_png(const std::string& path, const std::vector<Series>& series,
                   int width = 720, int height = 360);

}  // namespace eatr::plot
