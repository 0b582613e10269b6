#pragma once
// Two-stage training loop: supervised warm-up, then joint student/teacher
// training with pseudo-labels, boundary prototype banks and teacher
// prototype updates. Also evaluation, checkpoints and ablation grids.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pccs/config.hpp"
#include "pccs/data.hpp"
#include "pccs/losses.hpp"
#include "pccs/metrics.hpp"
#include "pccs/model.hpp"
#include "pccs/protobank.hpp"

namespace pccs {

// lr * (1 - t / t_max)^power, clamped at zero past t_max.
double poly_lr(double base, int64_t step, int64_t t_max, double power);

struct HistoryEntry {
  int64_t step = 0;
  std::string split;
  double dice = 0.0;
  double jaccard = 0.0;
  bool operator==(const HistoryEntry&) const = default;
};

template <typename T>
struct BasicTrainState {
  UNet<T> student;
  UNet<T> teacher;
  SgdMomentum<T> optimizer;
  PrototypeClassifier classifier;
  TeacherPrototypeSet prototypes;
  int64_t step = 0;
  std::vector<HistoryEntry> history;
};

using TrainState = BasicTrainState<float>;

template <typename T>
BasicTrainState<T> init_state(const TrainConfig& config, int num_classes);

// Sample ids consumed at one step. Labeled ids cycle through a fresh
// permutation per epoch of the labeled pool; unlabeled ids likewise.
struct BatchPlan {
  std::vector<std::string> labeled;
  std::vector<std::string> unlabeled;
  bool joint = false;  // false during warm-up or with every unsupervised loss off
};

BatchPlan plan_batch(const TrainConfig& config, const SplitManifest& splits, int64_t step);

struct Batch {
  std::vector<const Sample*> labeled;
  std::vector<const Sample*> unlabeled;
  bool joint = false;
  int64_t step = 0;

  std::size_t size() const { return labeled.size() + unlabeled.size(); }
  const Sample& sample(std::size_t i) const {
    return i < labeled.size() ? *labeled[i] : *unlabeled[i - labeled.size()];
  }
};

Batch assemble_batch(const BatchPlan& plan, const Dataset& data, int64_t step);

// Everything the student's losses consume from the teacher side, fixed for
// the step and carrying no gradient path back to the student.
struct StepTargets {
  std::vector<ProbabilityMap> teacher_probs;  // original frame; outside the crop: student probs
  std::vector<std::vector<uint8_t>> valid;     // pixels the teacher view covers
  std::vector<SegMask> masks;                  // GT (labeled) or pseudo-labels (unlabeled)
  std::vector<SegMask> feature_masks;          // masks at the feature resolution
  std::vector<SignedDistanceMap> sdms;
};

template <typename T>
struct StudentGrads {
  Tensor<T> probs;
  Tensor<T> projected;
};

// Normalised student inputs [1][N][H][W] for a batch.
template <typename T>
Tensor<T> student_inputs(const Batch& batch);

// Steps (2)-(4) and (6): teacher forward on augmented views, inversion,
// pseudo-labels, SDMs and the teacher prototype update.
template <typename T>
StepTargets build_targets(const Batch& batch, BasicTrainState<T>& state, const TrainConfig& config,
                          const NetworkOutputs<T>& student);

// Step (5) and (7): the student bank and every active loss, with gradients
// w.r.t. the student's probabilities and projected features when asked.
template <typename T>
LossBundle student_losses(const Batch& batch, const NetworkOutputs<T>& student,
                          const StepTargets& targets, const TrainConfig& config,
                          const BasicTrainState<T>& state, StudentGrads<T>* grads);

// Forward, targets, losses and backward into the student's parameter
// gradients (zeroed first). Does not update parameters.
template <typename T>
LossBundle compute_gradients(const Batch& batch, BasicTrainState<T>& state,
                             const TrainConfig& config);

// One full step: compute_gradients, SGD on the student, the classifier step,
// teacher EMA. Throws TrainingAbort naming a non-finite loss component.
template <typename T>
LossBundle train_step(const Batch& batch, BasicTrainState<T>& state, const TrainConfig& config);

// Argmax segmentation in inference mode; independent of batch_size.
std::vector<SegMask> predict(UNet<float>& model, const Dataset& data,
                             const std::vector<std::string>& ids, int batch_size);
MetricReport evaluate(UNet<float>& model, const Dataset& data, const std::vector<std::string>& ids,
                      int batch_size);

// Checkpoint directory: manifest.json plus one binary blob per component.
void save_checkpoint(const std::filesystem::path& dir, const TrainState& state,
                     const TrainConfig& config);
// Throws ConfigError when the stored config hash differs from config's.
TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& config,
                           int num_classes);
TrainConfig checkpoint_config(const std::filesystem::path& dir);
int checkpoint_num_classes(const std::filesystem::path& dir);

// Subsystem seeds derived from the root seed, for logging.
std::map<std::string, uint64_t> derived_seeds(const TrainConfig& config);

SplitManifest resolve_splits(const TrainConfig& config, const Dataset& data);

struct RunResult {
  TrainState state;
  SplitManifest splits;
  MetricReport val;
  MetricReport test;
};

using StepCallback = std::function<void(int64_t, const LossBundle&, double lr)>;

// Trains into out_dir: config.json, splits.csv, losses.csv, checkpoint/,
// final_metrics.csv. With resume set, continues from out_dir/checkpoint.
RunResult run_training(const TrainConfig& config, const Dataset& data,
                       const std::filesystem::path& out_dir, bool resume,
                       const StepCallback& on_step = {});

std::string losses_csv_header();
std::string losses_csv_row(int64_t step, const LossBundle& b, double lr);
void write_final_metrics(const std::filesystem::path& path, const MetricReport& val,
                         const MetricReport& test);

struct AblationArm {
  std::string name;
  LossToggles toggles;
};

// The six toggle rows of the paper's ablation table.
std::vector<AblationArm> default_ablation_grid();
AblationArm parse_ablation_arm(const std::string& spec);  // e.g. "con+u", "all", "none"

struct AblationResult {
  AblationArm arm;
  double labeled_fraction = 0.0;
  std::vector<double> dice;  // one per seed
  std::vector<double> jaccard;
};

// Trains every arm for every seed into out_dir/<arm>/seed<k>.
std::vector<AblationResult> run_ablation(const TrainConfig& base, const Dataset& data,
                                         const std::vector<AblationArm>& grid,
                                         const std::vector<uint64_t>& seeds,
                                         const std::filesystem::path& out_dir);
void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationResult>& results);

double mean_of(const std::vector<double>& v);
double stddev_of(const std::vector<double>& v);  // sample std, 0 for fewer than 2

}  // namespace pccs
