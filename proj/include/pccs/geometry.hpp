#pragma once
// Segmentation masks, exact signed distance maps and distance-bin histograms.
//
// Sign convention: 0 on the class boundary, negative strictly inside,
// positive strictly outside. The boundary of a class is the set of its
// pixels that have at least one 4-neighbour outside the class, where
// out-of-image counts as outside.

#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <vector>

namespace pccs {

enum class Provenance { GroundTruth, Pseudo };

class SegMask {
 public:
  SegMask() = default;
  SegMask(int height, int width, int num_classes, std::vector<int32_t> labels,
          Provenance provenance = Provenance::GroundTruth);

  int height() const { return height_; }
  int width() const { return width_; }
  int num_classes() const { return num_classes_; }
  Provenance provenance() const { return provenance_; }
  std::size_t size() const { return labels_.size(); }

  int32_t at(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  std::span<const int32_t> labels() const { return labels_; }

  SegMask with_provenance(Provenance p) const;
  bool operator==(const SegMask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_classes_ = 0;
  std::vector<int32_t> labels_;
  Provenance provenance_ = Provenance::GroundTruth;
};

// Value stored for every pixel of an absent class. No pixel distance on a
// grid that fits in memory can reach it.
inline constexpr int32_t kAbsentDistance = std::numeric_limits<int32_t>::min();

// One class plane of a signed distance map.
struct DistancePlane {
  int height = 0;
  int width = 0;
  bool class_present = false;
  std::vector<int32_t> values;

  int32_t at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const DistancePlane&) const = default;
};

struct SignedDistanceMap {
  std::vector<DistancePlane> planes;  // indexed by class

  int num_classes() const { return static_cast<int>(planes.size()); }
};

// 1 where pixel is a boundary pixel of `inside`.
std::vector<uint8_t> boundary_pixels(std::span<const uint8_t> inside, int height, int width);

// Exact squared Euclidean distance to the nearest seed pixel, computed with
// the separable lower-envelope transform. Pixels are at integer centres, so
// the result is an exact integer. Returns all-max when there is no seed.
std::vector<int64_t> squared_distance_to_seeds(std::span<const uint8_t> seeds, int height,
                                               int width);

DistancePlane signed_distance_map(const SegMask& mask, int class_id);
DistancePlane signed_distance_map_bruteforce(const SegMask& mask, int class_id);
SignedDistanceMap signed_distance_maps(const SegMask& mask);

// N_{c,j}: pixel count per quantized distance. Empty for an absent class.
std::map<int32_t, int64_t> distance_histogram(const DistancePlane& plane);

// Strictly negative distances present in the plane.
std::set<int32_t> interior_distance_set(const DistancePlane& plane);

// Round half away from zero.
int32_t quantize_distance(int64_t squared_distance);

}  // namespace pccs
