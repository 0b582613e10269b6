#include "pccs/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pccs {

std::vector<int> ModelConfig::fused_stages() const {
  std::vector<int> stages;
  for (int s = 1; s <= std::min(3, depth() - 1); ++s) stages.push_back(s);
  return stages;
}

int ModelConfig::fused_input_channels() const {
  int total = 0;
  for (int s : fused_stages()) total += widths[static_cast<std::size_t>(s)];
  return total;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  Tensor<T> probs(logits.c, logits.n, logits.h, logits.w);
  const std::size_t stride = logits.channel_stride();
  for (std::size_t i = 0; i < stride; ++i) {
    T mx = logits.v[i];
    for (int ch = 1; ch < logits.c; ++ch) mx = std::max(mx, logits.v[ch * stride + i]);
    T sum = 0;
    for (int ch = 0; ch < logits.c; ++ch) {
      const T e = std::exp(logits.v[ch * stride + i] - mx);
      probs.v[ch * stride + i] = e;
      sum += e;
    }
    for (int ch = 0; ch < logits.c; ++ch) probs.v[ch * stride + i] /= sum;
  }
  return probs;
}

template <typename T>
Tensor<T> softmax_channels_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  require_same_shape(probs, grad_probs, "softmax backward");
  Tensor<T> g(probs.c, probs.n, probs.h, probs.w);
  const std::size_t stride = probs.channel_stride();
  for (std::size_t i = 0; i < stride; ++i) {
    T dot = 0;
    for (int ch = 0; ch < probs.c; ++ch) dot += probs.v[ch * stride + i] * grad_probs.v[ch * stride + i];
    for (int ch = 0; ch < probs.c; ++ch) {
      const std::size_t k = ch * stride + i;
      g.v[k] = probs.v[k] * (grad_probs.v[k] - dot);
    }
  }
  return g;
}

template <typename T>
UNet<T>::UNet(const ModelConfig& config, uint64_t seed) : config_(config) {
  if (config.depth() < 3) throw std::domain_error("network needs at least 3 stages");
  if (config.num_classes < 2) throw std::domain_error("network needs at least 2 classes");
  std::mt19937_64 rng(seed);
  const int depth = config.depth();
  int in = config.in_channels;
  for (int k = 0; k < depth; ++k) {
    const int out = config.widths[static_cast<std::size_t>(k)];
    encoder_.push_back(make_block("enc" + std::to_string(k), in, out, rng));
    pools_.emplace_back();
    in = out;
  }
  up_convs_.resize(static_cast<std::size_t>(depth - 1));
  decoder_.resize(static_cast<std::size_t>(depth - 1));
  for (int k = depth - 2; k >= 0; --k) {
    const int below = config.widths[static_cast<std::size_t>(k + 1)];
    const int here = config.widths[static_cast<std::size_t>(k)];
    up_convs_[k] = Conv2d<T>(params_, "up" + std::to_string(k), below, here, 1, rng);
    decoder_[k] = make_block("dec" + std::to_string(k), 2 * here, here, rng);
  }
  head_ = Conv2d<T>(params_, "head", config.widths[0], config.num_classes, 1, rng);
  adapter_ = Conv2d<T>(params_, "fuse_adapter", config.fused_input_channels(),
                       config.fused_channels, 1, rng);
  projection_ = Conv2d<T>(params_, "projection", config.fused_channels, kProjectionDim, 1, rng);
}

template <typename T>
typename UNet<T>::Block UNet<T>::make_block(const std::string& name, int in, int out,
                                            std::mt19937_64& rng) {
  Block b;
  b.conv1 = Conv2d<T>(params_, name + ".conv1", in, out, 3, rng);
  b.norm1 = BatchNorm<T>(params_, name + ".bn1", out);
  b.conv2 = Conv2d<T>(params_, name + ".conv2", out, out, 3, rng);
  b.norm2 = BatchNorm<T>(params_, name + ".bn2", out);
  return b;
}

template <typename T>
Tensor<T> UNet<T>::block_forward(Block& b, const Tensor<T>& x, NormMode mode) {
  Tensor<T> y = b.conv1.forward(params_, x);
  y = b.act1.forward(b.norm1.forward(params_, y, mode));
  y = b.conv2.forward(params_, y);
  return b.act2.forward(b.norm2.forward(params_, y, mode));
}

template <typename T>
Tensor<T> UNet<T>::block_backward(Block& b, const Tensor<T>& g, bool need_input_grad) {
  Tensor<T> d = b.norm2.backward(params_, b.act2.backward(g));
  d = b.conv2.backward(params_, d);
  d = b.norm1.backward(params_, b.act1.backward(d));
  return b.conv1.backward(params_, d, need_input_grad);
}

template <typename T>
NetworkOutputs<T> UNet<T>::forward(const Tensor<T>& images, NormMode mode) {
  const int m = config_.size_multiple();
  if (images.c != config_.in_channels) throw std::domain_error("input channel mismatch");
  if (images.h % m != 0 || images.w % m != 0 || images.h < m || images.w < m) {
    throw std::domain_error("input size must be a positive multiple of " + std::to_string(m));
  }
  const int depth = config_.depth();
  std::vector<Tensor<T>> enc(static_cast<std::size_t>(depth));
  enc[0] = block_forward(encoder_[0], images, mode);
  for (int k = 1; k < depth; ++k) {
    enc[k] = block_forward(encoder_[k], pools_[k].forward(enc[k - 1]), mode);
  }
  enc_channels_.clear();
  for (const auto& e : enc) enc_channels_.push_back(e.c);

  Tensor<T> d = enc[depth - 1];
  for (int k = depth - 2; k >= 0; --k) {
    Tensor<T> up = upsample2(up_convs_[k].forward(params_, d));
    d = block_forward(decoder_[k], concat_channels(enc[k], up), mode);
  }
  NetworkOutputs<T> out;
  out.logits = head_.forward(params_, d);
  out.probs = softmax_channels(out.logits);
  last_probs_ = out.probs;

  Tensor<T> fused_in;
  for (int s : config_.fused_stages()) {
    Tensor<T> part = s == 1 ? avg_pool2(enc[s]) : s == 3 ? upsample2(enc[s]) : enc[s];
    fused_in = fused_in.v.empty() ? std::move(part) : concat_channels(fused_in, part);
  }
  out.fused = adapter_act_.forward(adapter_.forward(params_, fused_in));
  out.projected = projection_.forward(params_, out.fused);
  return out;
}

template <typename T>
void UNet<T>::backward(const Tensor<T>& grad_probs, const Tensor<T>& grad_projected) {
  const int depth = config_.depth();
  std::vector<Tensor<T>> enc_grad(static_cast<std::size_t>(depth));

  if (!grad_probs.v.empty()) {
    Tensor<T> g = head_.backward(params_, softmax_channels_backward(last_probs_, grad_probs));
    for (int k = 0; k <= depth - 2; ++k) {
      Tensor<T> gcat = block_backward(decoder_[k], g, true);
      const int skip = enc_channels_[k];
      add_into(enc_grad[k], slice_channels(gcat, 0, skip));
      Tensor<T> gup = upsample2_backward(slice_channels(gcat, skip, gcat.c - skip));
      g = up_convs_[k].backward(params_, gup);
    }
    add_into(enc_grad[depth - 1], g);
  }

  if (!grad_projected.v.empty()) {
    Tensor<T> g = projection_.backward(params_, grad_projected);
    g = adapter_.backward(params_, adapter_act_.backward(std::move(g)));
    int offset = 0;
    for (int s : config_.fused_stages()) {
      const int ch = enc_channels_[s];
      Tensor<T> part = slice_channels(g, offset, ch);
      offset += ch;
      if (s == 1) {
        add_into(enc_grad[s], avg_pool2_backward(part));
      } else if (s == 3) {
        add_into(enc_grad[s], upsample2_backward(part));
      } else {
        add_into(enc_grad[s], part);
      }
    }
  }

  for (int k = depth - 1; k >= 0; --k) {
    if (enc_grad[k].v.empty()) continue;
    Tensor<T> g = block_backward(encoder_[k], enc_grad[k], k > 0);
    if (k > 0) add_into(enc_grad[k - 1], pools_[k].backward(g));
  }
}

PrototypeClassifier::PrototypeClassifier(int num_classes, int dim)
    : num_classes_(num_classes),
      dim_(dim),
      weights_(static_cast<std::size_t>(num_classes) * dim, 0.0),
      bias_(static_cast<std::size_t>(num_classes), 0.0),
      grad_(static_cast<std::size_t>(num_classes) * (dim + 1), 0.0),
      momentum_(static_cast<std::size_t>(num_classes) * (dim + 1), 0.0) {}

std::vector<double> PrototypeClassifier::probabilities(std::span<const double> feature) const {
  if (static_cast<int>(feature.size()) != dim_) throw std::domain_error("classifier input dim");
  std::vector<double> logits(static_cast<std::size_t>(num_classes_));
  for (int c = 0; c < num_classes_; ++c) {
    double z = bias_[c];
    const double* w = weights_.data() + static_cast<std::size_t>(c) * dim_;
    for (int d = 0; d < dim_; ++d) z += w[d] * feature[d];
    logits[c] = z;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double& z : logits) {
    z = std::exp(z - mx);
    sum += z;
  }
  for (double& z : logits) z /= sum;
  return logits;
}

double PrototypeClassifier::accumulate_ce(std::span<const double> features,
                                          std::span<const int32_t> labels) {
  const std::size_t rows = labels.size();
  if (rows == 0) return 0.0;
  if (features.size() != rows * static_cast<std::size_t>(dim_)) {
    throw std::domain_error("classifier features/labels mismatch");
  }
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(rows);
  double* gw = grad_.data();
  double* gb = grad_.data() + static_cast<std::size_t>(num_classes_) * dim_;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto f = features.subspan(r * dim_, static_cast<std::size_t>(dim_));
    const auto p = probabilities(f);
    const int y = labels[r];
    loss -= std::log(std::max(p[y], 1e-12)) * inv;
    for (int c = 0; c < num_classes_; ++c) {
      const double g = (p[c] - (c == y ? 1.0 : 0.0)) * inv;
      gb[c] += g;
      double* w = gw + static_cast<std::size_t>(c) * dim_;
      for (int d = 0; d < dim_; ++d) w[d] += g * f[d];
    }
  }
  return loss;
}

void PrototypeClassifier::sgd_step(double lr, double momentum, double weight_decay) {
  const std::size_t nw = weights_.size();
  for (std::size_t i = 0; i < grad_.size(); ++i) {
    double& param = i < nw ? weights_[i] : bias_[i - nw];
    const double g = grad_[i] + weight_decay * param;
    momentum_[i] = momentum * momentum_[i] + g;
    param -= lr * momentum_[i];
    grad_[i] = 0.0;
  }
}

template <typename T>
void ema_update_weights(const ParamStore<T>& student, ParamStore<T>& teacher, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) throw std::domain_error("EMA decay must be in [0, 1)");
  if (student.size() != teacher.size()) throw std::domain_error("EMA parameter count mismatch");
  for (std::size_t i = 0; i < student.size(); ++i) {
    if (student[static_cast<int>(i)].value.size() != teacher[static_cast<int>(i)].value.size()) {
      throw std::domain_error("EMA shape mismatch at " + student[static_cast<int>(i)].name);
    }
  }
  const T keep = static_cast<T>(decay);
  const T take = static_cast<T>(1.0 - decay);
  for (std::size_t i = 0; i < student.size(); ++i) {
    const auto& s = student[static_cast<int>(i)].value;
    auto& t = teacher[static_cast<int>(i)].value;
    for (std::size_t k = 0; k < s.size(); ++k) t[k] = keep * t[k] + take * s[k];
  }
}

template <typename T>
void SgdMomentum<T>::step(ParamStore<T>& params, double lr) {
  auto& tensors = params.tensors();
  if (buffers_.size() != tensors.size()) {
    buffers_.assign(tensors.size(), {});
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].trainable) buffers_[i].assign(tensors[i].value.size(), T(0));
    }
  }
  const T mom = static_cast<T>(momentum_);
  const T wd = static_cast<T>(weight_decay_);
  const T rate = static_cast<T>(lr);
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = tensors[i];
    if (!p.trainable) continue;
    auto& buf = buffers_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      buf[k] = mom * buf[k] + (p.grad[k] + wd * p.value[k]);
      p.value[k] -= rate * buf[k];
    }
  }
}

template class UNet<float>;
template class UNet<double>;
template class SgdMomentum<float>;
template class SgdMomentum<double>;
template Tensor<float> softmax_channels(const Tensor<float>&);
template Tensor<double> softmax_channels(const Tensor<double>&);
template Tensor<float> softmax_channels_backward(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> softmax_channels_backward(const Tensor<double>&, const Tensor<double>&);
template void ema_update_weights(const ParamStore<float>&, ParamStore<float>&, double);
template void ema_update_weights(const ParamStore<double>&, ParamStore<double>&, double);

}  // namespace pccs
