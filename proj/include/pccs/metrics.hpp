#pragma once
// Overlap and surface-distance metrics on 2D label masks.
//
// Both-empty masks count as perfect overlap; surface metrics are undefined
// (nullopt) unless both masks have a boundary for the class. Means skip
// undefined entries.

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pccs/geometry.hpp"

namespace pccs {

struct OverlapScores {
  double dice = 0.0;
  double jaccard = 0.0;
};

struct SurfaceScores {
  double hd95 = 0.0;
  double assd = 0.0;
};

OverlapScores dice_jaccard(const SegMask& pred, const SegMask& gt, int cls);

// Pooled directed boundary-to-boundary distances, both directions, in
// pixel units.
std::vector<double> pooled_surface_distances(const SegMask& pred, const SegMask& gt, int cls);

std::optional<SurfaceScores> surface_distances(const SegMask& pred, const SegMask& gt, int cls);

// Linear interpolation between closest ranks, inclusive (q in [0, 1]).
double percentile_inclusive(std::vector<double> values, double q);

struct ClassMetrics {
  std::optional<double> dice;
  std::optional<double> jaccard;
  std::optional<double> hd95;
  std::optional<double> assd;
};

// Foreground classes 1..C-1 of a single image.
std::vector<ClassMetrics> image_metrics(const SegMask& pred, const SegMask& gt);

struct MetricRow {
  std::string label;  // class id or "mean"
  ClassMetrics values;
  int images = 0;     // images contributing a defined dice
};

struct MetricReport {
  std::vector<MetricRow> classes;
  MetricRow mean;
};

// Averages per-image results over images, then the class rows over classes.
MetricReport aggregate_metrics(const std::vector<std::vector<ClassMetrics>>& per_image);

void write_metrics_csv(std::ostream& out, const MetricReport& report);
std::string format_metrics_table(const MetricReport& report);

}  // namespace pccs
