#pragma once
// Minimal line/bar chart rasterizer writing RGB PNGs; enough for loss
// curves and small comparison charts without a plotting dependency.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pccs::plot {

using Rgb = std::array<uint8_t, 3>;

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> err;  // optional error bars, same length as y
  Rgb color{31, 119, 180};
  bool markers = false;
};

struct Chart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  bool log_y = false;
  int width = 640;
  int height = 400;
};

Rgb palette(std::size_t i);

void render_png(const Chart& chart, const std::filesystem::path& path);

}  // namespace pccs::plot
