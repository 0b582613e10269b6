#pragma once
// Boundary prototypes: mean projected features per (class, interior distance
// bin), the anchor/positive/negative sets built from them, and the
// class-level teacher prototypes maintained across steps.

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pccs/geometry.hpp"

namespace pccs {

// Per-pixel feature vectors, pixel-major: values[(y * width + x) * dim + d].
struct FeatureMap {
  int height = 0;
  int width = 0;
  int dim = 0;
  std::vector<double> values;

  FeatureMap() = default;
  FeatureMap(int h, int w, int d)
      : height(h), width(w), dim(d), values(static_cast<std::size_t>(h) * w * d, 0.0) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  std::span<const double> pixel(std::size_t i) const {
    return {values.data() + i * dim, static_cast<std::size_t>(dim)};
  }
  std::span<double> pixel(std::size_t i) {
    return {values.data() + i * dim, static_cast<std::size_t>(dim)};
  }
};

struct PrototypeKey {
  int cls = 0;
  int32_t bin = 0;
  auto operator<=>(const PrototypeKey&) const = default;
};

struct PrototypeEntry {
  std::vector<double> vector;
  int64_t count = 0;
  double uncertainty = 0.0;
};

struct PrototypeBank {
  std::map<PrototypeKey, PrototypeEntry> entries;
  std::string built_from;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
  bool contains(const PrototypeKey& k) const { return entries.count(k) != 0; }
};

struct ContrastSets {
  PrototypeKey anchor;
  std::vector<PrototypeKey> positives;
  std::vector<PrototypeKey> negatives;
};

// Default cap on |j|; deeper interior pixels join the deepest bin.
inline constexpr int kDefaultMaxBin = 24;

// Bin a pixel falls into, or nullopt when it is not an interior pixel.
std::optional<int32_t> interior_bin(int32_t distance, int max_bin);

PrototypeBank extract_prototypes(const FeatureMap& features, const SignedDistanceMap& sdm,
                                 int max_bin = kDefaultMaxBin);

// Pools every image of a batch into one bank.
PrototypeBank extract_prototypes(std::span<const FeatureMap> features,
                                 std::span<const SignedDistanceMap> sdms,
                                 int max_bin = kDefaultMaxBin, std::string built_from = {});

// Backward of extract_prototypes: scatters d(loss)/d(prototype) onto the
// pixels that were averaged into it.
std::vector<FeatureMap> prototype_feature_grad(
    const std::map<PrototypeKey, std::vector<double>>& prototype_grad, const PrototypeBank& bank,
    std::span<const FeatureMap> features, std::span<const SignedDistanceMap> sdms,
    int max_bin = kDefaultMaxBin);

ContrastSets build_contrast_sets(const PrototypeBank& bank, const PrototypeKey& anchor);

std::optional<std::vector<double>> class_mean_feature(const FeatureMap& features,
                                                      const SegMask& mask, int cls);
std::optional<std::vector<double>> class_mean_feature(std::span<const FeatureMap> features,
                                                      std::span<const SegMask> masks, int cls);

// (mu + gamma - 1) * p2 + (1 - mu) * p1 + (1 - gamma) * v; without v it is
// the plain moving average mu * p2 + (1 - mu) * p1.
std::vector<double> update_teacher_prototype(std::span<const double> p2,
                                             std::span<const double> p1,
                                             std::optional<std::span<const double>> v, double mu,
                                             double gamma);

using ProbabilityMapping = std::function<std::vector<double>(std::span<const double>)>;

// Entropy (natural log) of g(p); g's output must lie on the simplex.
double prototype_uncertainty(std::span<const double> prototype, const ProbabilityMapping& g);
void assign_uncertainties(PrototypeBank& bank, const ProbabilityMapping& g);

class TeacherPrototypeSet {
 public:
  TeacherPrototypeSet() = default;
  TeacherPrototypeSet(int num_classes, int dim);

  // First sighting of a class initialises p2 := p1.
  void update(int cls, std::span<const double> student_prototype,
              std::optional<std::span<const double>> teacher_mean, double mu, double gamma);
  void advance() { ++step_; }

  int num_classes() const { return static_cast<int>(prototypes_.size()); }
  int dim() const { return dim_; }
  bool has(int cls) const { return prototypes_.at(static_cast<std::size_t>(cls)).has_value(); }
  bool any() const;
  const std::vector<double>& prototype(int cls) const;
  const std::optional<std::vector<double>>& history(int cls) const {
    return history_.at(static_cast<std::size_t>(cls));
  }
  int64_t step() const { return step_; }

  // Raw access for checkpointing.
  std::vector<std::optional<std::vector<double>>>& prototypes() { return prototypes_; }
  std::vector<std::optional<std::vector<double>>>& histories() { return history_; }
  const std::vector<std::optional<std::vector<double>>>& prototypes() const { return prototypes_; }
  const std::vector<std::optional<std::vector<double>>>& histories() const { return history_; }
  void set_step(int64_t s) { step_ = s; }

  bool operator==(const TeacherPrototypeSet&) const = default;

 private:
  int dim_ = 0;
  std::vector<std::optional<std::vector<double>>> prototypes_;
  std::vector<std::optional<std::vector<double>>> history_;
  int64_t step_ = 0;
};

}  // namespace pccs
