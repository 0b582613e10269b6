#include "pccs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pccs {

namespace {

constexpr int64_t kInfSquared = std::numeric_limits<int64_t>::max();

void check_class(const SegMask& mask, int class_id) {
  if (class_id < 0 || class_id >= mask.num_classes()) {
    throw std::domain_error("class id " + std::to_string(class_id) + " outside [0, " +
                            std::to_string(mask.num_classes()) + ")");
  }
}

std::vector<uint8_t> class_indicator(const SegMask& mask, int class_id) {
  std::vector<uint8_t> inside(mask.size());
  const auto labels = mask.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) inside[i] = labels[i] == class_id ? 1 : 0;
  return inside;
}

// Lower envelope of parabolas (x - q)^2 + f(q) over the finite sites of f.
void envelope_1d(const int64_t* f, int64_t* out, int n, std::vector<int>& sites,
                 std::vector<double>& bounds) {
  sites.clear();
  bounds.clear();
  for (int q = 0; q < n; ++q) {
    const int64_t fq = f[q];
    if (fq == kInfSquared) continue;
    while (!sites.empty()) {
      const int v = sites.back();
      const double fv = static_cast<double>(f[v]);
      const double s = ((static_cast<double>(fq) + double(q) * q) - (fv + double(v) * v)) /
                       (2.0 * (q - v));
      if (s <= bounds.back()) {
        sites.pop_back();
        bounds.pop_back();
      } else {
        sites.push_back(q);
        bounds.push_back(s);
        break;
      }
    }
    if (sites.empty()) {
      sites.push_back(q);
      bounds.push_back(-std::numeric_limits<double>::infinity());
    }
  }
  if (sites.empty()) {
    for (int x = 0; x < n; ++x) out[x] = kInfSquared;
    return;
  }
  std::size_t k = 0;
  for (int x = 0; x < n; ++x) {
    while (k + 1 < sites.size() && bounds[k + 1] <= x) ++k;
    const int64_t d = x - sites[k];
    out[x] = d * d + f[sites[k]];
  }
}

DistancePlane absent_plane(int height, int width) {
  DistancePlane plane;
  plane.height = height;
  plane.width = width;
  plane.class_present = false;
  plane.values.assign(static_cast<std::size_t>(height) * width, kAbsentDistance);
  return plane;
}

DistancePlane assemble_plane(const std::vector<uint8_t>& inside,
                             const std::vector<uint8_t>& boundary,
                             const std::vector<int64_t>& squared, int height, int width) {
  DistancePlane plane;
  plane.height = height;
  plane.width = width;
  plane.class_present = true;
  plane.values.resize(inside.size());
  for (std::size_t i = 0; i < inside.size(); ++i) {
    if (boundary[i]) {
      plane.values[i] = 0;
    } else {
      const int32_t d = quantize_distance(squared[i]);
      plane.values[i] = inside[i] ? -d : d;
    }
  }
  return plane;
}

}  // namespace

SegMask::SegMask(int height, int width, int num_classes, std::vector<int32_t> labels,
                 Provenance provenance)
    : height_(height),
      width_(width),
      num_classes_(num_classes),
      labels_(std::move(labels)),
      provenance_(provenance) {
  if (height < 1 || width < 1) throw std::domain_error("mask must be at least 1x1");
  if (num_classes < 2) throw std::domain_error("mask needs at least 2 classes");
  if (labels_.size() != static_cast<std::size_t>(height) * width) {
    throw std::domain_error("mask label count does not match height*width");
  }
  for (int32_t v : labels_) {
    if (v < 0 || v >= num_classes) {
      throw std::domain_error("label " + std::to_string(v) + " outside [0, " +
                              std::to_string(num_classes) + ")");
    }
  }
}

SegMask SegMask::with_provenance(Provenance p) const {
  SegMask copy = *this;
  copy.provenance_ = p;
  return copy;
}

int32_t quantize_distance(int64_t squared_distance) {
  // round(sqrt(d2)) with exact integer arithmetic; sqrt of an integer is
  // never exactly k + 1/2, so there are no ties to break.
  auto q = static_cast<int64_t>(std::sqrt(static_cast<double>(squared_distance)));
  while (q * q > squared_distance) --q;
  while ((q + 1) * (q + 1) <= squared_distance) ++q;
  if (squared_distance - q * q > q) ++q;
  return static_cast<int32_t>(q);
}

std::vector<uint8_t> boundary_pixels(std::span<const uint8_t> inside, int height, int width) {
  std::vector<uint8_t> boundary(inside.size(), 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (!inside[i]) continue;
      const bool edge = y == 0 || x == 0 || y == height - 1 || x == width - 1 ||
                        !inside[i - width] || !inside[i + width] || !inside[i - 1] ||
                        !inside[i + 1];
      boundary[i] = edge ? 1 : 0;
    }
  }
  return boundary;
}

std::vector<int64_t> squared_distance_to_seeds(std::span<const uint8_t> seeds, int height,
                                               int width) {
  std::vector<int64_t> grid(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) grid[i] = seeds[i] ? 0 : kInfSquared;

  std::vector<int> sites;
  std::vector<double> bounds;
  std::vector<int64_t> column(static_cast<std::size_t>(height));
  std::vector<int64_t> result(static_cast<std::size_t>(height));
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) column[y] = grid[static_cast<std::size_t>(y) * width + x];
    envelope_1d(column.data(), result.data(), height, sites, bounds);
    for (int y = 0; y < height; ++y) grid[static_cast<std::size_t>(y) * width + x] = result[y];
  }
  std::vector<int64_t> out(grid.size());
  for (int y = 0; y < height; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * width;
    envelope_1d(grid.data() + row, out.data() + row, width, sites, bounds);
  }
  return out;
}

DistancePlane signed_distance_map(const SegMask& mask, int class_id) {
  check_class(mask, class_id);
  const int h = mask.height();
  const int w = mask.width();
  const auto inside = class_indicator(mask, class_id);
  if (std::none_of(inside.begin(), inside.end(), [](uint8_t v) { return v != 0; })) {
    return absent_plane(h, w);
  }
  const auto boundary = boundary_pixels(inside, h, w);
  const auto squared = squared_distance_to_seeds(boundary, h, w);
  return assemble_plane(inside, boundary, squared, h, w);
}

DistancePlane signed_distance_map_bruteforce(const SegMask& mask, int class_id) {
  check_class(mask, class_id);
  const int h = mask.height();
  const int w = mask.width();
  const auto inside = class_indicator(mask, class_id);
  if (std::none_of(inside.begin(), inside.end(), [](uint8_t v) { return v != 0; })) {
    return absent_plane(h, w);
  }
  const auto boundary = boundary_pixels(inside, h, w);
  std::vector<std::pair<int, int>> edge;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (boundary[static_cast<std::size_t>(y) * w + x]) edge.emplace_back(y, x);
    }
  }
  std::vector<int64_t> squared(inside.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int64_t best = kInfSquared;
      for (const auto& [by, bx] : edge) {
        const int64_t dy = y - by;
        const int64_t dx = x - bx;
        best = std::min(best, dy * dy + dx * dx);
      }
      squared[static_cast<std::size_t>(y) * w + x] = best;
    }
  }
  return assemble_plane(inside, boundary, squared, h, w);
}

SignedDistanceMap signed_distance_maps(const SegMask& mask) {
  SignedDistanceMap sdm;
  sdm.planes.reserve(static_cast<std::size_t>(mask.num_classes()));
  for (int c = 0; c < mask.num_classes(); ++c) sdm.planes.push_back(signed_distance_map(mask, c));
  return sdm;
}

std::map<int32_t, int64_t> distance_histogram(const DistancePlane& plane) {
  std::map<int32_t, int64_t> counts;
  if (!plane.class_present) return counts;
  for (int32_t v : plane.values) ++counts[v];
  return counts;
}

std::set<int32_t> interior_distance_set(const DistancePlane& plane) {
  std::set<int32_t> bins;
  if (!plane.class_present) return bins;
  for (int32_t v : plane.values) {
    if (v < 0) bins.insert(v);
  }
  return bins;
}

}  // namespace pccs
