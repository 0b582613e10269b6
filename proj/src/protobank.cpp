#include "pccs/protobank.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pccs {

namespace {

void check_aligned(const FeatureMap& f, const SignedDistanceMap& sdm) {
  for (const auto& plane : sdm.planes) {
    if (plane.height != f.height || plane.width != f.width) {
      throw std::domain_error("feature map and distance map are not spatially aligned");
    }
  }
  if (f.values.size() != f.pixels() * static_cast<std::size_t>(f.dim)) {
    throw std::domain_error("feature map storage does not match its shape");
  }
}

}  // namespace

std::optional<int32_t> interior_bin(int32_t distance, int max_bin) {
  if (distance == kAbsentDistance || distance >= 0) return std::nullopt;
  if (max_bin > 0) return std::max(distance, -max_bin);
  return distance;
}

PrototypeBank extract_prototypes(const FeatureMap& features, const SignedDistanceMap& sdm,
                                 int max_bin) {
  return extract_prototypes(std::span<const FeatureMap>(&features, 1),
                            std::span<const SignedDistanceMap>(&sdm, 1), max_bin);
}

PrototypeBank extract_prototypes(std::span<const FeatureMap> features,
                                 std::span<const SignedDistanceMap> sdms, int max_bin,
                                 std::string built_from) {
  if (features.size() != sdms.size()) throw std::domain_error("features/sdm count mismatch");
  PrototypeBank bank;
  bank.built_from = std::move(built_from);
  int dim = -1;
  for (std::size_t img = 0; img < features.size(); ++img) {
    const FeatureMap& f = features[img];
    check_aligned(f, sdms[img]);
    if (dim < 0) dim = f.dim;
    if (f.dim != dim) throw std::domain_error("feature dimension differs across the batch");
    for (int c = 0; c < sdms[img].num_classes(); ++c) {
      const DistancePlane& plane = sdms[img].planes[static_cast<std::size_t>(c)];
      if (!plane.class_present) continue;
      for (std::size_t i = 0; i < plane.values.size(); ++i) {
        const auto bin = interior_bin(plane.values[i], max_bin);
        if (!bin) continue;
        PrototypeEntry& e = bank.entries[PrototypeKey{c, *bin}];
        if (e.vector.empty()) e.vector.assign(static_cast<std::size_t>(dim), 0.0);
        const auto px = f.pixel(i);
        for (int d = 0; d < dim; ++d) e.vector[d] += px[d];
        ++e.count;
      }
    }
  }
  for (auto& [key, e] : bank.entries) {
    const double inv = 1.0 / static_cast<double>(e.count);
    for (double& v : e.vector) v *= inv;
  }
  return bank;
}

std::vector<FeatureMap> prototype_feature_grad(
    const std::map<PrototypeKey, std::vector<double>>& prototype_grad, const PrototypeBank& bank,
    std::span<const FeatureMap> features, std::span<const SignedDistanceMap> sdms, int max_bin) {
  std::vector<FeatureMap> grads;
  grads.reserve(features.size());
  for (std::size_t img = 0; img < features.size(); ++img) {
    const FeatureMap& f = features[img];
    FeatureMap g(f.height, f.width, f.dim);
    for (int c = 0; c < sdms[img].num_classes(); ++c) {
      const DistancePlane& plane = sdms[img].planes[static_cast<std::size_t>(c)];
      if (!plane.class_present) continue;
      for (std::size_t i = 0; i < plane.values.size(); ++i) {
        const auto bin = interior_bin(plane.values[i], max_bin);
        if (!bin) continue;
        const PrototypeKey key{c, *bin};
        const auto it = prototype_grad.find(key);
        if (it == prototype_grad.end()) continue;
        const double inv = 1.0 / static_cast<double>(bank.entries.at(key).count);
        auto px = g.pixel(i);
        for (int d = 0; d < f.dim; ++d) px[d] += it->second[d] * inv;
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

ContrastSets build_contrast_sets(const PrototypeBank& bank, const PrototypeKey& anchor) {
  if (!bank.contains(anchor)) {
    throw std::domain_error("anchor (" + std::to_string(anchor.cls) + ", " +
                            std::to_string(anchor.bin) + ") is not in the bank");
  }
  ContrastSets sets;
  sets.anchor = anchor;
  for (const auto& [key, entry] : bank.entries) {
    if (key == anchor) continue;
    (key.cls == anchor.cls ? sets.positives : sets.negatives).push_back(key);
  }
  return sets;
}

std::optional<std::vector<double>> class_mean_feature(const FeatureMap& features,
                                                      const SegMask& mask, int cls) {
  return class_mean_feature(std::span<const FeatureMap>(&features, 1),
                            std::span<const SegMask>(&mask, 1), cls);
}

std::optional<std::vector<double>> class_mean_feature(std::span<const FeatureMap> features,
                                                      std::span<const SegMask> masks, int cls) {
  if (features.size() != masks.size()) throw std::domain_error("features/masks count mismatch");
  std::vector<double> sum;
  int64_t count = 0;
  for (std::size_t img = 0; img < features.size(); ++img) {
    const FeatureMap& f = features[img];
    const SegMask& m = masks[img];
    if (m.height() != f.height || m.width() != f.width) {
      throw std::domain_error("feature map and mask are not spatially aligned");
    }
    if (sum.empty()) sum.assign(static_cast<std::size_t>(f.dim), 0.0);
    const auto labels = m.labels();
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != cls) continue;
      const auto px = f.pixel(i);
      for (int d = 0; d < f.dim; ++d) sum[d] += px[d];
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  for (double& v : sum) v /= static_cast<double>(count);
  return sum;
}

std::vector<double> update_teacher_prototype(std::span<const double> p2,
                                             std::span<const double> p1,
                                             std::optional<std::span<const double>> v, double mu,
                                             double gamma) {
  if (p1.size() != p2.size() || (v && v->size() != p2.size())) {
    throw std::domain_error("prototype dimension mismatch");
  }
  if (mu < 0.0 || mu > 1.0 || gamma < 0.0 || gamma > 1.0 || mu + gamma < 1.0) {
    throw std::domain_error("prototype update needs 0<=mu<=1, 0<=gamma<=1, mu+gamma>=1");
  }
  std::vector<double> out(p2.size());
  if (!v) {
    for (std::size_t d = 0; d < out.size(); ++d) out[d] = mu * p2[d] + (1.0 - mu) * p1[d];
    return out;
  }
  const double keep = mu + gamma - 1.0;
  for (std::size_t d = 0; d < out.size(); ++d) {
    out[d] = keep * p2[d] + (1.0 - mu) * p1[d] + (1.0 - gamma) * (*v)[d];
  }
  return out;
}

double prototype_uncertainty(std::span<const double> prototype, const ProbabilityMapping& g) {
  const std::vector<double> probs = g(prototype);
  double sum = 0.0;
  for (double p : probs) {
    if (p < -1e-6 || p > 1.0 + 1e-6) throw std::domain_error("classifier output outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::domain_error("classifier output is not on the simplex");
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

void assign_uncertainties(PrototypeBank& bank, const ProbabilityMapping& g) {
  for (auto& [key, entry] : bank.entries) entry.uncertainty = prototype_uncertainty(entry.vector, g);
}

TeacherPrototypeSet::TeacherPrototypeSet(int num_classes, int dim)
    : dim_(dim),
      prototypes_(static_cast<std::size_t>(num_classes)),
      history_(static_cast<std::size_t>(num_classes)) {}

void TeacherPrototypeSet::update(int cls, std::span<const double> student_prototype,
                                 std::optional<std::span<const double>> teacher_mean, double mu,
                                 double gamma) {
  if (cls < 0 || cls >= num_classes()) throw std::domain_error("class outside prototype set");
  if (static_cast<int>(student_prototype.size()) != dim_) {
    throw std::domain_error("student prototype dimension mismatch");
  }
  auto& slot = prototypes_[static_cast<std::size_t>(cls)];
  if (!slot) {
    slot.emplace(student_prototype.begin(), student_prototype.end());
  } else {
    slot = update_teacher_prototype(*slot, student_prototype, teacher_mean, mu, gamma);
  }
  if (teacher_mean) {
    history_[static_cast<std::size_t>(cls)].emplace(teacher_mean->begin(), teacher_mean->end());
  }
}

bool TeacherPrototypeSet::any() const {
  return std::any_of(prototypes_.begin(), prototypes_.end(),
                     [](const auto& p) { return p.has_value(); });
}

const std::vector<double>& TeacherPrototypeSet::prototype(int cls) const {
  const auto& slot = prototypes_.at(static_cast<std::size_t>(cls));
  if (!slot) throw std::domain_error("no teacher prototype for class " + std::to_string(cls));
  return *slot;
}

}  // namespace pccs
