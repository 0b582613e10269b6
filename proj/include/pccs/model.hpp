#pragma once
// U-Net style encoder-decoder with a middle-stage feature fusion branch and a
// 128-d projection head, plus the linear-softmax prototype classifier and the
// weight-level EMA used to build the teacher.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "pccs/nn.hpp"
#include "pccs/tensor.hpp"

namespace pccs {

inline constexpr int kProjectionDim = 128;

struct ModelConfig {
  int in_channels = 1;
  int num_classes = 2;
  std::vector<int> widths{16, 32, 64, 64, 64};
  int fused_channels = 256;  // adapter width F between fusion and projection

  int depth() const { return static_cast<int>(widths.size()); }
  // Input side length must be a multiple of this.
  int size_multiple() const { return 1 << (depth() - 1); }
  // Stages (0-based) whose outputs are fused at the 1/4 resolution.
  std::vector<int> fused_stages() const;
  int fused_input_channels() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct NetworkOutputs {
  Tensor<T> logits;     // [C][N][H][W]
  Tensor<T> probs;      // softmax over channels
  Tensor<T> fused;      // [F][N][H/4][W/4]
  Tensor<T> projected;  // [128][N][H/4][W/4]
};

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits);

// Backward of a channel softmax: g_logits = p * (g - sum_c p_c g_c).
template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs);

template <typename T>
class UNet {
 public:
  UNet() = default;
  UNet(const ModelConfig& config, uint64_t seed);

  NetworkOutputs<T> forward(const Tensor<T>& images, NormMode mode);

  // Backpropagates from the most recent forward pass. Either gradient may be
  // empty (no contribution). Parameter gradients accumulate into params().
  void backward(const Tensor<T>& grad_probs, const Tensor<T>& grad_projected);

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const ModelConfig& config() const { return config_; }

 private:
  struct Block {
    Conv2d<T> conv1;
    BatchNorm<T> norm1;
    Relu<T> act1;
    Conv2d<T> conv2;
    BatchNorm<T> norm2;
    Relu<T> act2;
  };
  Block make_block(const std::string& name, int in, int out, std::mt19937_64& rng);
  Tensor<T> block_forward(Block& b, const Tensor<T>& x, NormMode mode);
  Tensor<T> block_backward(Block& b, const Tensor<T>& g, bool need_input_grad);

  ModelConfig config_;
  ParamStore<T> params_;
  std::vector<Block> encoder_;
  std::vector<MaxPool2<T>> pools_;
  std::vector<Conv2d<T>> up_convs_;  // indexed by the decoder level they feed
  std::vector<Block> decoder_;
  Conv2d<T> head_;
  Conv2d<T> adapter_;
  Relu<T> adapter_act_;
  Conv2d<T> projection_;

  std::vector<int> enc_channels_;
  Tensor<T> last_probs_;
};

// g(.): affine 128 -> C followed by softmax. Trained on detached pixel
// features, so it never feeds gradient into the backbone.
class PrototypeClassifier {
 public:
  PrototypeClassifier() = default;
  PrototypeClassifier(int num_classes, int dim);

  std::vector<double> probabilities(std::span<const double> feature) const;

  // Mean cross-entropy over (feature, label) rows; accumulates gradients.
  double accumulate_ce(std::span<const double> features, std::span<const int32_t> labels);
  void sgd_step(double lr, double momentum, double weight_decay);

  int num_classes() const { return num_classes_; }
  int dim() const { return dim_; }
  std::vector<double>& weights() { return weights_; }
  std::vector<double>& bias() { return bias_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }
  std::vector<double>& momentum_buffer() { return momentum_; }
  const std::vector<double>& momentum_buffer() const { return momentum_; }

 private:
  int num_classes_ = 0;
  int dim_ = 0;
  std::vector<double> weights_;  // [C][dim]
  std::vector<double> bias_;     // [C]
  std::vector<double> grad_;     // weights then bias
  std::vector<double> momentum_;
};

// teacher := decay * teacher + (1 - decay) * student, over every tensor
// (buffers included, so the teacher's normalisation statistics track too).
template <typename T>
void ema_update_weights(const ParamStore<T>& student, ParamStore<T>& teacher, double decay);

// Plain SGD with momentum and L2 weight decay applied to trainable tensors.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum() = default;
  SgdMomentum(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(ParamStore<T>& params, double lr);

  std::vector<std::vector<T>>& buffers() { return buffers_; }
  const std::vector<std::vector<T>>& buffers() const { return buffers_; }

 private:
  double momentum_ = 0.9;
  double weight_decay_ = 1e-4;
  std::vector<std::vector<T>> buffers_;
};

}  // namespace pccs
