#pragma once
// Dense 4-D activation in channel-major layout [C][N][H][W]. Channel-major
// keeps every convolution a single GEMM over the whole batch and makes
// per-channel statistics contiguous.

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace pccs {

template <typename T>
struct Tensor {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Tensor() = default;
  Tensor(int channels, int batch, int height, int width, T fill = T(0))
      : c(channels), n(batch), h(height), w(width),
        v(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t channel_stride() const { return static_cast<std::size_t>(n) * h * w; }

  std::size_t index(int ch, int img, int y, int x) const {
    return ((static_cast<std::size_t>(ch) * n + img) * h + y) * w + x;
  }
  T& at(int ch, int img, int y, int x) { return v[index(ch, img, y, x)]; }
  const T& at(int ch, int img, int y, int x) const { return v[index(ch, img, y, x)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  bool same_shape(const Tensor& o) const { return c == o.c && n == o.n && h == o.h && w == o.w; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.c = c;
    out.n = n;
    out.h = h;
    out.w = w;
    out.v.assign(v.begin(), v.end());
    return out;
  }
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw std::domain_error(std::string("shape mismatch: ") + what);
}

}  // namespace pccs
