#pragma once

// Layer primitives with hand-written backward passes. Feature maps are planar
// (C x H x W); images enter and leave through to_planes / from_planes.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/rng.hpp"

namespace nrr::nn {

template <class T>
struct Planes {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Planes() = default;
  Planes(int c, int h, int w, T fill = T(0)) : channels(c), height(h), width(w) {
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  T& at(int c, int y, int x) { return data[(c * plane_size()) + static_cast<std::size_t>(y) * width + x]; }
  const T& at(int c, int y, int x) const {
    return data[(c * plane_size()) + static_cast<std::size_t>(y) * width + x];
  }
  T* plane(int c) { return data.data() + c * plane_size(); }
  const T* plane(int c) const { return data.data() + c * plane_size(); }
  bool same_shape(const Planes& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Planes&) const = default;
};

template <class T>
Planes<T> to_planes(const Image<T>& im) {
  Planes<T> p(im.channels(), im.height(), im.width());
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x)
      for (int c = 0; c < im.channels(); ++c) p.at(c, y, x) = im(y, x, c);
  return p;
}

template <class T>
Image<T> from_planes(const Planes<T>& p) {
  Image<T> im(p.height, p.width, p.channels);
  for (int c = 0; c < p.channels; ++c)
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) im(y, x, c) = p.at(c, y, x);
  return im;
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvShape {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  std::size_t weight_count() const {
    return static_cast<std::size_t>(out) * in * kernel * kernel;
  }
  int out_extent(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
  bool operator==(const ConvShape&) const = default;
};

/// Kernel layout: out x in x k x k, row-major.
template <class T>
struct ConvParam {
  ConvShape shape;
  std::vector<T> weight;
  std::vector<T> bias;

  ConvParam() = default;
  explicit ConvParam(ConvShape s) : shape(s), weight(s.weight_count(), T(0)), bias(s.out, T(0)) {}

  std::size_t parameter_count() const { return weight.size() + bias.size(); }

  /// Fan-in scaled (He) normal initialisation.
  void init_he(Rng& rng) {
    const double fan_in = static_cast<double>(shape.in) * shape.kernel * shape.kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& w : weight) w = static_cast<T>(dist(rng));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  void zero() {
    std::fill(weight.begin(), weight.end(), T(0));
    std::fill(bias.begin(), bias.end(), T(0));
  }

  bool operator==(const ConvParam&) const = default;
};

namespace detail_conv {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
void im2col(const Planes<T>& x, const ConvShape& s, int oh, int ow, std::vector<T>& col) {
  const int k = s.kernel;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  col.assign(static_cast<std::size_t>(x.channels) * k * k * cols, T(0));
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.plane(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= x.height) continue;
          T* row = dst + static_cast<std::size_t>(oy) * ow;
          const T* srow = src + static_cast<std::size_t>(iy) * x.width;
          if (s.stride == 1) {
            const int lo = std::max(0, s.pad - kx);
            const int hi = std::min(ow, x.width + s.pad - kx);
            if (lo < hi) std::copy(srow + lo - s.pad + kx, srow + hi - s.pad + kx, row + lo);
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * s.stride - s.pad + kx;
              if (ix >= 0 && ix < x.width) row[ox] = srow[ix];
            }
          }
        }
      }
  }
}

template <class T>
void col2im(const std::vector<T>& col, const ConvShape& s, int oh, int ow, Planes<T>& dx) {
  const int k = s.kernel;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < dx.channels; ++c) {
    T* dst = dx.plane(c);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= dx.height) continue;
          const T* row = src + static_cast<std::size_t>(oy) * ow;
          T* drow = dst + static_cast<std::size_t>(iy) * dx.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < dx.width) drow[ix] += row[ox];
          }
        }
      }
  }
}

}  // namespace detail_conv

template <class T>
Planes<T> conv2d(const Planes<T>& x, const ConvParam<T>& p) {
  const ConvShape& s = p.shape;
  detail::require_dims(x.channels == s.in, "conv2d: expected " + std::to_string(s.in) +
                                               " input channels, got " +
                                               std::to_string(x.channels));
  const int oh = s.out_extent(x.height), ow = s.out_extent(x.width);
  detail::require_dims(oh >= 1 && ow >= 1, "conv2d: input too small for kernel");
  std::vector<T> col;
  detail_conv::im2col(x, s, oh, ow, col);
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in) * s.kernel * s.kernel;
  const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
  using M = detail_conv::RowMat<T>;
  Eigen::Map<const M> W(p.weight.data(), s.out, kk);
  Eigen::Map<const M> C(col.data(), kk, n);
  Planes<T> y(s.out, oh, ow);
  Eigen::Map<M> Y(y.data.data(), s.out, n);
  Y.noalias() = W * C;
  for (int o = 0; o < s.out; ++o) Y.row(o).array() += p.bias[o];
  return y;
}

/// Accumulates dL/dW and dL/db into `grad`; returns dL/dx when requested.
template <class T>
Planes<T> conv2d_backward(const Planes<T>& x, const ConvParam<T>& p, const Planes<T>& dy,
                          ConvParam<T>& grad, bool want_dx = true) {
  const ConvShape& s = p.shape;
  const int oh = dy.height, ow = dy.width;
  std::vector<T> col;
  detail_conv::im2col(x, s, oh, ow, col);
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in) * s.kernel * s.kernel;
  const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
  using M = detail_conv::RowMat<T>;
  Eigen::Map<const M> W(p.weight.data(), s.out, kk);
  Eigen::Map<const M> C(col.data(), kk, n);
  Eigen::Map<const M> dY(dy.data.data(), s.out, n);
  Eigen::Map<M> dW(grad.weight.data(), s.out, kk);
  dW.noalias() += dY * C.transpose();
  // scalar sum: Eigen's vectorised reduction order depends on the buffer's alignment
  for (int o = 0; o < s.out; ++o) {
    double acc = 0.0;
    const T* row = dy.data.data() + static_cast<std::size_t>(o) * n;
    for (Eigen::Index i = 0; i < n; ++i) acc += row[i];
    grad.bias[o] += static_cast<T>(acc);
  }
  Planes<T> dx;
  if (!want_dx) return dx;
  dx = Planes<T>(x.channels, x.height, x.width);
  std::vector<T> dcol(static_cast<std::size_t>(kk * n));
  Eigen::Map<M>(dcol.data(), kk, n).noalias() = W.transpose() * dY;
  detail_conv::col2im(dcol, s, oh, ow, dx);
  return dx;
}

/// dL/dx only, for frozen layers.
template <class T>
Planes<T> conv2d_backward_input(const ConvParam<T>& p, const Planes<T>& dy, int in_h, int in_w) {
  const ConvShape& s = p.shape;
  const Eigen::Index kk = static_cast<Eigen::Index>(s.in) * s.kernel * s.kernel;
  const Eigen::Index n = static_cast<Eigen::Index>(dy.height) * dy.width;
  using M = detail_conv::RowMat<T>;
  Eigen::Map<const M> W(p.weight.data(), s.out, kk);
  Eigen::Map<const M> dY(dy.data.data(), s.out, n);
  std::vector<T> dcol(static_cast<std::size_t>(kk * n));
  Eigen::Map<M>(dcol.data(), kk, n).noalias() = W.transpose() * dY;
  Planes<T> dx(s.in, in_h, in_w);
  detail_conv::col2im(dcol, s, dy.height, dy.width, dx);
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise and resampling layers

template <class T>
void relu_inplace(Planes<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

/// Gradient of ReLU given its output (derivative taken as 0 at the kink).
template <class T>
void relu_backward_inplace(const Planes<T>& y, Planes<T>& dy) {
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

namespace detail_up {

/// Half-pixel bilinear taps for a x2 upsample along one axis.
struct Tap {
  int i0, i1;
  double w0, w1;
};

inline std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double f = src - i0;
    t[o] = {i0, i1, 1.0 - f, f};
  }
  return t;
}

}  // namespace detail_up

template <class T>
Planes<T> upsample2x(const Planes<T>& x) {
  const int oh = x.height * 2, ow = x.width * 2;
  const auto ty = detail_up::taps(x.height, oh), tx = detail_up::taps(x.width, ow);
  Planes<T> y(x.channels, oh, ow);
  for (int c = 0; c < x.channels; ++c) {
    const T* src = x.plane(c);
    T* dst = y.plane(c);
    for (int oy = 0; oy < oh; ++oy) {
      const auto& a = ty[oy];
      const T* r0 = src + static_cast<std::size_t>(a.i0) * x.width;
      const T* r1 = src + static_cast<std::size_t>(a.i1) * x.width;
      const T wy0 = static_cast<T>(a.w0), wy1 = static_cast<T>(a.w1);
      for (int ox = 0; ox < ow; ++ox) {
        const auto& b = tx[ox];
        const T wx0 = static_cast<T>(b.w0), wx1 = static_cast<T>(b.w1);
        dst[static_cast<std::size_t>(oy) * ow + ox] =
            wy0 * (wx0 * r0[b.i0] + wx1 * r0[b.i1]) + wy1 * (wx0 * r1[b.i0] + wx1 * r1[b.i1]);
      }
    }
  }
  return y;
}

template <class T>
Planes<T> upsample2x_backward(const Planes<T>& dy, int in_h, int in_w) {
  const auto ty = detail_up::taps(in_h, dy.height), tx = detail_up::taps(in_w, dy.width);
  Planes<T> dx(dy.channels, in_h, in_w);
  for (int c = 0; c < dy.channels; ++c) {
    const T* src = dy.plane(c);
    T* dst = dx.plane(c);
    for (int oy = 0; oy < dy.height; ++oy) {
      const auto& a = ty[oy];
      T* r0 = dst + static_cast<std::size_t>(a.i0) * in_w;
      T* r1 = dst + static_cast<std::size_t>(a.i1) * in_w;
      const T wy0 = static_cast<T>(a.w0), wy1 = static_cast<T>(a.w1);
      for (int ox = 0; ox < dy.width; ++ox) {
        const auto& b = tx[ox];
        const T g = src[static_cast<std::size_t>(oy) * dy.width + ox];
        const T wx0 = static_cast<T>(b.w0), wx1 = static_cast<T>(b.w1);
        r0[b.i0] += wy0 * wx0 * g;
        r0[b.i1] += wy0 * wx1 * g;
        r1[b.i0] += wy1 * wx0 * g;
        r1[b.i1] += wy1 * wx1 * g;
      }
    }
  }
  return dx;
}

/// 2x2 max pooling in ceil mode (odd extents keep their last row/column, a 1x1
/// map stays 1x1). `argmax` records the winning input offset for backward.
template <class T>
Planes<T> maxpool2(const Planes<T>& x, std::vector<std::uint32_t>* argmax = nullptr) {
  const int oh = (x.height + 1) / 2, ow = (x.width + 1) / 2;
  Planes<T> y(x.channels, oh, ow);
  if (argmax) argmax->assign(y.data.size(), 0);
  for (int c = 0; c < x.channels; ++c)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        T best = x.at(c, 2 * oy, 2 * ox);
        std::uint32_t best_i = static_cast<std::uint32_t>(2 * oy * x.width + 2 * ox);
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const int iy = 2 * oy + dy, ix = 2 * ox + dx;
            if (iy >= x.height || ix >= x.width) continue;
            const T v = x.at(c, iy, ix);
            if (v > best) {
              best = v;
              best_i = static_cast<std::uint32_t>(iy * x.width + ix);
            }
          }
        y.at(c, oy, ox) = best;
        if (argmax) (*argmax)[(c * y.plane_size()) + static_cast<std::size_t>(oy) * ow + ox] = best_i;
      }
  return y;
}

template <class T>
Planes<T> maxpool2_backward(const Planes<T>& dy, const std::vector<std::uint32_t>& argmax,
                            int in_h, int in_w) {
  Planes<T> dx(dy.channels, in_h, in_w);
  for (int c = 0; c < dy.channels; ++c) {
    const T* g = dy.plane(c);
    T* dst = dx.plane(c);
    const std::uint32_t* am = argmax.data() + c * dy.plane_size();
    for (std::size_t i = 0; i < dy.plane_size(); ++i) dst[am[i]] += g[i];
  }
  return dx;
}

template <class T>
Planes<T> concat(const Planes<T>& a, const Planes<T>& b) {
  detail::require_dims(a.height == b.height && a.width == b.width,
                       "concat: spatial sizes differ (" + std::to_string(a.height) + "x" +
                           std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" +
                           std::to_string(b.width) + ")");
  Planes<T> y(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), y.data.begin());
  std::copy(b.data.begin(), b.data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()));
  return y;
}

/// Splits a concat gradient back into its two parts.
template <class T>
std::pair<Planes<T>, Planes<T>> split_channels(const Planes<T>& dy, int first_channels) {
  Planes<T> a(first_channels, dy.height, dy.width), b(dy.channels - first_channels, dy.height, dy.width);
  std::copy(dy.data.begin(), dy.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), a.data.begin());
  std::copy(dy.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), dy.data.end(), b.data.begin());
  return {std::move(a), std::move(b)};
}

template <class T>
void add_inplace(Planes<T>& acc, const Planes<T>& g) {
  if (acc.data.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

/// FNV-1a over the raw bytes of a value sequence.
template <class T>
std::uint64_t hash_values(std::span<const T> v, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  for (std::size_t i = 0; i < v.size_bytes(); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace nrr::nn
