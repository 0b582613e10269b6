#pragma once
// TrainConfig: every hyperparameter, schedule, seed, path and toggle of a
// training run, with a flat key/value text form (JSON objects accepted).

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pccs/losses.hpp"
#include "pccs/model.hpp"

namespace pccs {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string preset = "desk";

  // network
  std::vector<int> widths{16, 32, 64, 64, 64};
  int fused_channels = 256;

  // objective
  double lambda_aux = 0.3;
  double lambda_pc = 0.1;
  double lambda_u = 0.01;
  double tau = 0.05;
  double epsilon = kEntropyEpsilon;
  double t_ramp = 30000.0;
  int max_bin = kDefaultMaxBin;
  double classifier_weight = 0.1;
  LossToggles toggles;

  // teacher
  double mu = 0.99;     // prototype moving average
  double gamma = 0.999;
  double mu_w = 0.99;   // weight EMA
  bool teacher_history = true;
  std::string pseudo_source = "teacher";  // teacher | student
  bool consistency_on_labeled = true;
  std::string labeled_proto_masks = "gt";  // gt | pseudo

  // optimisation
  int64_t t_max = 20000;
  int64_t warmup_steps = -1;  // -1: 10% of t_max
  double lr = 0.05;
  double lr_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int batch_size = 8;
  int labeled_per_batch = 4;

  // data
  uint64_t seed = 1;
  int64_t split_seed = -1;  // -1: derived from seed
  double labeled_fraction = 0.1;
  std::string split_file;

  // run control (not part of the config hash)
  int64_t steps = -1;  // -1: run to t_max
  int64_t checkpoint_every = 1000;
  int64_t eval_every = 0;
  int eval_batch = 16;

  int64_t resolved_warmup() const { return warmup_steps < 0 ? t_max / 10 : warmup_steps; }
  int64_t resolved_steps() const { return steps < 0 ? t_max : steps; }
  uint64_t resolved_split_seed() const;
  ModelConfig model_config(int num_classes) const;
  void validate() const;
};

TrainConfig preset_config(const std::string& name);

// "key = value" per line, '#' starts a comment; or a JSON object. A preset key
// is applied first, every other key overrides it. Unknown keys throw.
TrainConfig parse_config_text(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

// Overrides are not validated individually; call validate() once after all.
void set_config_value(TrainConfig& config, const std::string& key, const std::string& value);
// "l_pc=off", "all_unsup=off", ...
void apply_toggle(TrainConfig& config, const std::string& spec);

std::string config_to_json(const TrainConfig& config, bool include_run_control = true);
TrainConfig config_from_json(const std::string& json_text);

// FNV-1a over the canonical JSON of every field except paths and run control.
uint64_t config_hash(const TrainConfig& config);
std::string hash_hex(uint64_t h);

std::vector<std::string> config_keys();

}  // namespace pccs
