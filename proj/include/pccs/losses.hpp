#pragma once
// Training objectives and their analytic gradients.
//
// Every loss takes an optional gradient out-parameter; when given, it is
// filled with d(loss)/d(input) in the input's own layout. Teacher-side inputs
// (teacher probabilities, teacher prototypes, pseudo-labels) never receive
// gradients.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pccs/geometry.hpp"
#include "pccs/protobank.hpp"

namespace pccs {

enum class Branch { Student, Teacher };

// Per-pixel class probabilities, pixel-major: probs[(y * width + x) * C + c].
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<double> probs;
  Branch branch = Branch::Student;

  ProbabilityMap() = default;
  ProbabilityMap(int h, int w, int c, Branch b = Branch::Student)
      : height(h), width(w), num_classes(c),
        probs(static_cast<std::size_t>(h) * w * c, 0.0), branch(b) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  double& at(std::size_t pixel, int c) { return probs[pixel * num_classes + c]; }
  double at(std::size_t pixel, int c) const { return probs[pixel * num_classes + c]; }
  bool same_shape(const ProbabilityMap& o) const {
    return height == o.height && width == o.width && num_classes == o.num_classes;
  }
  // Throws unless every pixel is on the simplex within tol.
  void validate(double tol = 1e-5) const;
  SegMask argmax(Provenance provenance) const;
};

inline constexpr double kCeEpsilon = 1e-8;
inline constexpr double kDiceSmooth = 1e-5;
inline constexpr double kEntropyEpsilon = 1e-6;
inline constexpr double kDegenerateSimilarity = 1e-8;

// 0.5 * (cross-entropy + soft Dice); ground-truth masks only.
double supervised_loss(const ProbabilityMap& pred, const SegMask& gt,
                       std::vector<double>* grad = nullptr);

struct ContrastGrad {
  std::vector<double> anchor;
  std::vector<std::vector<double>> positives;
  std::vector<std::vector<double>> negatives;
};

// Similarity-weighted InfoNCE over unit vectors. Weights are a.p+ / sum a.q+,
// falling back to uniform when that sum is not positive.
double contrastive_consistency_loss(std::span<const double> anchor,
                                    const std::vector<std::span<const double>>& positives,
                                    const std::vector<std::span<const double>>& negatives,
                                    double tau, ContrastGrad* grad = nullptr);

// Positive-set weights used by contrastive_consistency_loss.
std::vector<double> similarity_weights(std::span<const double> anchor,
                                       const std::vector<std::span<const double>>& positives);

// softmax(-H(p)) across all bank entries.
std::vector<double> uncertainty_weights(const PrototypeBank& bank);

// Sum over anchors of uncertainty weight times the anchor's contrastive loss.
// Vectors are L2-normalised internally; the gradient is with respect to the
// raw (unnormalised) bank vectors, with uncertainties held fixed.
double uncertainty_weighted_pc_loss(const PrototypeBank& bank, double tau,
                                    std::map<PrototypeKey, std::vector<double>>* grad = nullptr);

// Mean over pixels with a teacher prototype for their class of the
// pixel-to-teacher-prototype contrastive loss using cosine similarity.
double pixel_prototype_aux_loss(const FeatureMap& features, const SegMask& labels,
                                const TeacherPrototypeSet& teacher, double tau,
                                FeatureMap* grad = nullptr);

// Mean squared difference over all H*W*C entries. With a validity mask only
// valid pixels are averaged.
double consistency_loss(const ProbabilityMap& student, const ProbabilityMap& teacher,
                        std::vector<double>* grad_student = nullptr,
                        std::span<const uint8_t> valid = {});

// u_i = max(0, -sum_c p_c ln(p_c + eps)).
std::vector<double> pixel_uncertainty(const ProbabilityMap& p, double eps = kEntropyEpsilon);

// (sqrt(sum u_s^2) + sqrt(sum u_t^2)) / (2 H W).
double uncertainty_loss(std::span<const double> u_student, std::span<const double> u_teacher,
                        std::vector<double>* grad_u_student = nullptr);

// uncertainty_loss composed with pixel_uncertainty; gradient w.r.t. student
// probabilities.
double uncertainty_loss_from_probs(const ProbabilityMap& student, const ProbabilityMap& teacher,
                                   std::vector<double>* grad_student = nullptr,
                                   double eps = kEntropyEpsilon);

// 0.1 * exp(-5 (1 - t / ramp)^2), held at 0.1 once t >= ramp.
double lambda_c_schedule(double step, double ramp);

struct LossToggles {
  bool con = true;
  bool u = true;
  bool aux = true;
  bool pc = true;

  bool any() const { return con || u || aux || pc; }
  bool operator==(const LossToggles&) const = default;
};

struct LossWeights {
  double lambda_aux = 0.3;
  double lambda_pc = 0.1;
  double lambda_u = 0.01;
  double ramp = 30000.0;
};

struct LossParts {
  double sup = 0.0;
  double con = 0.0;
  double u = 0.0;
  double aux = 0.0;
  double pc = 0.0;
};

struct LossBundle {
  double l_sup = 0.0;
  double l_pc = 0.0;
  double l_aux = 0.0;
  double l_con = 0.0;
  double l_u = 0.0;
  double l_c = 0.0;
  double l_total = 0.0;
  double lambda_c = 0.0;
  double lambda_aux = 0.0;
  double lambda_pc = 0.0;
  double lambda_u = 0.0;

  // d(l_total)/d(part) for each active part.
  double coef_con() const { return lambda_c; }
  double coef_u() const { return lambda_c * lambda_u; }
  double coef_aux() const { return lambda_aux; }
  double coef_pc() const { return lambda_pc; }

  bool operator==(const LossBundle&) const = default;
};

class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(std::string component, const std::string& what)
      : std::runtime_error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }

 private:
  std::string component_;
};

// Inactive parts contribute zero. Throws TrainingAbort on a non-finite part.
LossBundle total_loss(const LossParts& parts, const LossWeights& weights,
                      const LossToggles& toggles, double step);

}  // namespace pccs
