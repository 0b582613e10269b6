#pragma once
// Minimal layer set for the segmentation network: convolution, batch norm,
// ReLU, pooling, nearest upsampling. Every layer caches what its backward
// pass needs from the most recent forward call. Parameters live in a
// ParamStore owned by the network; layers only hold indices into it, so a
// network can be copied by value.

#include <Eigen/Core>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pccs/tensor.hpp"

namespace pccs {

template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;
};

template <typename T>
class ParamStore {
 public:
  int add(std::string name, std::vector<int> shape, bool trainable, T fill = T(0)) {
    std::size_t count = 1;
    for (int d : shape) count *= static_cast<std::size_t>(d);
    ParamTensor<T> p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    p.value.assign(count, fill);
    p.grad.assign(count, T(0));
    p.trainable = trainable;
    tensors_.push_back(std::move(p));
    return static_cast<int>(tensors_.size()) - 1;
  }

  ParamTensor<T>& operator[](int i) { return tensors_[static_cast<std::size_t>(i)]; }
  const ParamTensor<T>& operator[](int i) const { return tensors_[static_cast<std::size_t>(i)]; }
  std::vector<ParamTensor<T>>& tensors() { return tensors_; }
  const std::vector<ParamTensor<T>>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  void zero_grad() {
    for (auto& p : tensors_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  std::size_t trainable_count() const {
    std::size_t total = 0;
    for (const auto& p : tensors_) {
      if (p.trainable) total += p.value.size();
    }
    return total;
  }

 private:
  std::vector<ParamTensor<T>> tensors_;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

enum class NormMode {
  Train,       // batch statistics, running statistics updated
  BatchStats,  // batch statistics, running statistics untouched
  Eval,        // running statistics
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int in, int out, int kernel,
         std::mt19937_64& rng)
      : in_(in), out_(out), k_(kernel) {
    if (kernel != 1 && kernel != 3) throw std::domain_error("kernel must be 1 or 3");
    weight_ = store.add(name + ".weight", {out, in, kernel, kernel}, true);
    bias_ = store.add(name + ".bias", {out}, true);
    // He initialisation for ReLU networks.
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * kernel * kernel)));
    for (auto& w : store[weight_].value) w = static_cast<T>(normal(rng));
  }

  Tensor<T> forward(const ParamStore<T>& store, const Tensor<T>& x) {
    if (x.c != in_) throw std::domain_error("conv input channel mismatch");
    input_ = x;
    Tensor<T> y(out_, x.n, x.h, x.w);
    const Eigen::Index k = in_ * k_ * k_;
    ConstMatMap<T> wm(store[weight_].value.data(), out_, k);
    const auto& b = store[bias_].value;
    for_each_chunk(x, [&](int first, Eigen::Index cols) {
      StridedMap ym(y.data() + offset(x, first), out_, cols, Stride(y.channel_stride(), 1));
      if (k_ == 1) {
        ym.noalias() = wm * ConstStridedMap(x.data() + offset(x, first), in_, cols,
                                            Stride(x.channel_stride(), 1));
      } else {
        im2col(x, first, cols);
        ym.noalias() = wm * ConstMatMap<T>(col_.data(), k, cols);
      }
      for (int o = 0; o < out_; ++o) ym.row(o).array() += b[static_cast<std::size_t>(o)];
    });
    return y;
  }

  // Accumulates parameter gradients; returns the input gradient when asked.
  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& gy, bool need_input_grad = true) {
    const Tensor<T>& x = input_;
    const Eigen::Index k = in_ * k_ * k_;
    MatMap<T> gw(store[weight_].grad.data(), out_, k);
    ConstMatMap<T> wm(store[weight_].value.data(), out_, k);
    auto& gb = store[bias_].grad;
    Tensor<T> gx;
    if (need_input_grad) gx = Tensor<T>(in_, x.n, x.h, x.w);
    for_each_chunk(x, [&](int first, Eigen::Index cols) {
      ConstStridedMap gm(gy.data() + offset(x, first), out_, cols, Stride(gy.channel_stride(), 1));
      // ordered loop: Eigen's vectorised sum peels by pointer alignment
      for (int o = 0; o < out_; ++o) {
        const T* row = gy.data() + offset(x, first) + o * gy.channel_stride();
        T acc = 0;
        for (Eigen::Index j = 0; j < cols; ++j) acc += row[j];
        gb[static_cast<std::size_t>(o)] += acc;
      }
      if (k_ == 1) {
        ConstStridedMap xm(x.data() + offset(x, first), in_, cols, Stride(x.channel_stride(), 1));
        gw.noalias() += gm * xm.transpose();
        if (need_input_grad) {
          StridedMap gxm(gx.data() + offset(x, first), in_, cols, Stride(gx.channel_stride(), 1));
          gxm.noalias() = wm.transpose() * gm;
        }
      } else {
        im2col(x, first, cols);
        gw.noalias() += gm * ConstMatMap<T>(col_.data(), k, cols).transpose();
        if (need_input_grad) {
          MatMap<T>(col_.data(), k, cols).noalias() = wm.transpose() * gm;
          col2im(gx, first, cols);
        }
      }
    });
    return gx;
  }

  int weight_index() const { return weight_; }

 private:
  using Stride = Eigen::Stride<Eigen::Dynamic, 1>;
  using StridedMap = Eigen::Map<RowMat<T>, 0, Stride>;
  using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Stride>;

  // GEMMs run over groups of whole images of about 4096 columns so the
  // unfolded patch matrix stays cache resident.
  template <typename Fn>
  static void for_each_chunk(const Tensor<T>& x, Fn&& fn) {
    const std::size_t plane = x.plane();
    const int per_chunk = std::max<int>(1, static_cast<int>(4096 / std::max<std::size_t>(plane, 1)));
    for (int first = 0; first < x.n; first += per_chunk) {
      const int count = std::min(per_chunk, x.n - first);
      fn(first, static_cast<Eigen::Index>(count * plane));
    }
  }

  static std::size_t offset(const Tensor<T>& x, int first_image) {
    return static_cast<std::size_t>(first_image) * x.plane();
  }

  void im2col(const Tensor<T>& x, int first, Eigen::Index cols) {
    const int h = x.h;
    const int w = x.w;
    const int images = static_cast<int>(cols / static_cast<Eigen::Index>(x.plane()));
    col_.resize(static_cast<std::size_t>(in_) * 9 * static_cast<std::size_t>(cols));
    for (int ci = 0; ci < in_; ++ci) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          T* dst = col_.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * cols;
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(w, w + 1 - kx);
          for (int img = 0; img < images; ++img) {
            const T* src = x.data() + x.index(ci, first + img, 0, 0);
            T* out = dst + static_cast<std::size_t>(img) * h * w;
            for (int y = 0; y < h; ++y) {
              T* drow = out + static_cast<std::size_t>(y) * w;
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= h) {
                std::fill(drow, drow + w, T(0));
                continue;
              }
              if (x0 > 0) drow[0] = T(0);
              if (x1 < w) drow[w - 1] = T(0);
              const T* srow = src + static_cast<std::size_t>(sy) * w + (kx - 1);
              std::copy(srow + x0, srow + x1, drow + x0);
            }
          }
        }
      }
    }
  }

  void col2im(Tensor<T>& gx, int first, Eigen::Index cols) const {
    const int h = gx.h;
    const int w = gx.w;
    const int images = static_cast<int>(cols / static_cast<Eigen::Index>(gx.plane()));
    for (int ci = 0; ci < in_; ++ci) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const T* src = col_.data() + (static_cast<std::size_t>(ci) * 9 + ky * 3 + kx) * cols;
          const int x0 = std::max(0, 1 - kx);
          const int x1 = std::min(w, w + 1 - kx);
          for (int img = 0; img < images; ++img) {
            T* dst = gx.data() + gx.index(ci, first + img, 0, 0);
            const T* in = src + static_cast<std::size_t>(img) * h * w;
            for (int y = 0; y < h; ++y) {
              const int sy = y + ky - 1;
              if (sy < 0 || sy >= h) continue;
              T* drow = dst + static_cast<std::size_t>(sy) * w + (kx - 1);
              const T* irow = in + static_cast<std::size_t>(y) * w;
              for (int xx = x0; xx < x1; ++xx) drow[xx] += irow[xx];
            }
          }
        }
      }
    }
  }

  int in_ = 0;
  int out_ = 0;
  int k_ = 1;
  int weight_ = -1;
  int bias_ = -1;
  Tensor<T> input_;
  std::vector<T> col_;
};

template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int channels) : channels_(channels) {
    gamma_ = store.add(name + ".gamma", {channels}, true, T(1));
    beta_ = store.add(name + ".beta", {channels}, true, T(0));
    mean_ = store.add(name + ".running_mean", {channels}, false, T(0));
    var_ = store.add(name + ".running_var", {channels}, false, T(1));
  }

  Tensor<T> forward(ParamStore<T>& store, const Tensor<T>& x, NormMode mode) {
    const std::size_t m = x.channel_stride();
    Tensor<T> y(x.c, x.n, x.h, x.w);
    xhat_ = Tensor<T>(x.c, x.n, x.h, x.w);
    inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
    const auto& gamma = store[gamma_].value;
    const auto& beta = store[beta_].value;
    for (int ch = 0; ch < channels_; ++ch) {
      const T* src = x.data() + ch * m;
      double mean = 0.0;
      double var = 0.0;
      if (mode == NormMode::Eval) {
        mean = static_cast<double>(store[mean_].value[ch]);
        var = static_cast<double>(store[var_].value[ch]);
      } else {
        for (std::size_t i = 0; i < m; ++i) mean += src[i];
        mean /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          const double d = src[i] - mean;
          var += d * d;
        }
        var /= static_cast<double>(m);
        if (mode == NormMode::Train) {
          auto& rm = store[mean_].value[ch];
          auto& rv = store[var_].value[ch];
          const double unbiased = m > 1 ? var * m / (m - 1) : var;
          rm = static_cast<T>((1.0 - kMomentum) * rm + kMomentum * mean);
          rv = static_cast<T>((1.0 - kMomentum) * rv + kMomentum * unbiased);
        }
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
      const T mu = static_cast<T>(mean);
      inv_std_[ch] = inv;
      T* xh = xhat_.data() + ch * m;
      T* dst = y.data() + ch * m;
      for (std::size_t i = 0; i < m; ++i) {
        xh[i] = (src[i] - mu) * inv;
        dst[i] = gamma[ch] * xh[i] + beta[ch];
      }
    }
    mode_ = mode;
    return y;
  }

  Tensor<T> backward(ParamStore<T>& store, const Tensor<T>& gy) {
    if (mode_ == NormMode::Eval) throw std::logic_error("batch norm backward after eval forward");
    const std::size_t m = gy.channel_stride();
    Tensor<T> gx(gy.c, gy.n, gy.h, gy.w);
    const auto& gamma = store[gamma_].value;
    auto& ggamma = store[gamma_].grad;
    auto& gbeta = store[beta_].grad;
    for (int ch = 0; ch < channels_; ++ch) {
      const T* g = gy.data() + ch * m;
      const T* xh = xhat_.data() + ch * m;
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      ggamma[ch] += static_cast<T>(sum_gx);
      gbeta[ch] += static_cast<T>(sum_g);
      const double scale = static_cast<double>(gamma[ch]) * inv_std_[ch] / static_cast<double>(m);
      T* dst = gx.data() + ch * m;
      for (std::size_t i = 0; i < m; ++i) {
        dst[i] = static_cast<T>(scale * (m * static_cast<double>(g[i]) - sum_g - xh[i] * sum_gx));
      }
    }
    return gx;
  }

 private:
  int channels_ = 0;
  int gamma_ = -1;
  int beta_ = -1;
  int mean_ = -1;
  int var_ = -1;
  NormMode mode_ = NormMode::Eval;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
class Relu {
 public:
  Tensor<T> forward(Tensor<T> x) {
    mask_.assign(x.size(), 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x.v[i] > T(0)) {
        mask_[i] = 1;
      } else {
        x.v[i] = T(0);
      }
    }
    return x;
  }
  Tensor<T> backward(Tensor<T> g) const {
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!mask_[i]) g.v[i] = T(0);
    }
    return g;
  }

 private:
  std::vector<uint8_t> mask_;
};

template <typename T>
class MaxPool2 {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.h % 2 || x.w % 2) throw std::domain_error("max pool needs even spatial size");
    Tensor<T> y(x.c, x.n, x.h / 2, x.w / 2);
    argmax_.assign(y.size(), 0);
    in_c_ = x.c;
    in_n_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    std::size_t o = 0;
    for (int ch = 0; ch < x.c; ++ch) {
      for (int img = 0; img < x.n; ++img) {
        for (int y0 = 0; y0 < y.h; ++y0) {
          for (int x0 = 0; x0 < y.w; ++x0, ++o) {
            std::size_t best = x.index(ch, img, 2 * y0, 2 * x0);
            for (int dy = 0; dy < 2; ++dy) {
              for (int dx = 0; dx < 2; ++dx) {
                const std::size_t i = x.index(ch, img, 2 * y0 + dy, 2 * x0 + dx);
                if (x.v[i] > x.v[best]) best = i;
              }
            }
            argmax_[o] = best;
            y.v[o] = x.v[best];
          }
        }
      }
    }
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) const {
    Tensor<T> gx(in_c_, in_n_, in_h_, in_w_);
    for (std::size_t o = 0; o < gy.size(); ++o) gx.v[argmax_[o]] += gy.v[o];
    return gx;
  }

 private:
  std::vector<std::size_t> argmax_;
  int in_c_ = 0;
  int in_n_ = 0;
  int in_h_ = 0;
  int in_w_ = 0;
};

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, x.h / 2, x.w / 2);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int img = 0; img < x.n; ++img) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) {
          y.at(ch, img, yy, xx) =
              T(0.25) * (x.at(ch, img, 2 * yy, 2 * xx) + x.at(ch, img, 2 * yy, 2 * xx + 1) +
                         x.at(ch, img, 2 * yy + 1, 2 * xx) + x.at(ch, img, 2 * yy + 1, 2 * xx + 1));
        }
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> avg_pool2_backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.c, gy.n, gy.h * 2, gy.w * 2);
  for (int ch = 0; ch < gy.c; ++ch) {
    for (int img = 0; img < gy.n; ++img) {
      for (int y = 0; y < gx.h; ++y) {
        for (int x = 0; x < gx.w; ++x) gx.at(ch, img, y, x) = T(0.25) * gy.at(ch, img, y / 2, x / 2);
      }
    }
  }
  return gx;
}

template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  Tensor<T> y(x.c, x.n, x.h * 2, x.w * 2);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int img = 0; img < x.n; ++img) {
      for (int yy = 0; yy < y.h; ++yy) {
        for (int xx = 0; xx < y.w; ++xx) y.at(ch, img, yy, xx) = x.at(ch, img, yy / 2, xx / 2);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> upsample2_backward(const Tensor<T>& gy) {
  Tensor<T> gx(gy.c, gy.n, gy.h / 2, gy.w / 2);
  for (int ch = 0; ch < gy.c; ++ch) {
    for (int img = 0; img < gy.n; ++img) {
      for (int y = 0; y < gy.h; ++y) {
        for (int x = 0; x < gy.w; ++x) gx.at(ch, img, y / 2, x / 2) += gy.at(ch, img, y, x);
      }
    }
  }
  return gx;
}

// Channel concatenation is a plain append in channel-major layout.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::domain_error("concat shape mismatch");
  Tensor<T> y;
  y.c = a.c + b.c;
  y.n = a.n;
  y.h = a.h;
  y.w = a.w;
  y.v.reserve(a.size() + b.size());
  y.v.insert(y.v.end(), a.v.begin(), a.v.end());
  y.v.insert(y.v.end(), b.v.begin(), b.v.end());
  return y;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int first, int count) {
  Tensor<T> y;
  y.c = count;
  y.n = x.n;
  y.h = x.h;
  y.w = x.w;
  const auto begin = x.v.begin() + static_cast<std::ptrdiff_t>(first * x.channel_stride());
  y.v.assign(begin, begin + static_cast<std::ptrdiff_t>(count * x.channel_stride()));
  return y;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g) {
  if (acc.v.empty()) {
    acc = g;
    return;
  }
  require_same_shape(acc, g, "gradient accumulation");
  for (std::size_t i = 0; i < g.size(); ++i) acc.v[i] += g.v[i];
}

}  // namespace pccs
