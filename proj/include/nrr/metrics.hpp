#pragma once

// Image quality metrics on [0,1] images.

#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"

namespace nrr {

struct Psnr {
  double db = 0.0;
  bool identical = false;  // MSE exactly 0; db is +inf
};

template <class T>
double mean_squared_error(const Image<T>& a, const Image<T>& b) {
  detail::require_dims(a.same_shape(b), "metric inputs differ in shape");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// Mean absolute difference per element.
template <class T>
double photometric_l1(const Image<T>& a, const Image<T>& b) {
  detail::require_dims(a.same_shape(b), "metric inputs differ in shape");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    s += std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]));
  return s / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE) for a peak value of 1.
template <class T>
Psnr psnr(const Image<T>& a, const Image<T>& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {10.0 * std::log10(1.0 / mse), false};
}

namespace detail_ssim {

constexpr std::array<double, 5> kScaleWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline std::array<double, 11> gaussian_taps() {
  std::array<double, 11> g{};
  double s = 0;
  for (int i = 0; i < 11; ++i) {
    const double d = i - 5;
    g[i] = std::exp(-d * d / (2 * 1.5 * 1.5));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

/// Separable Gaussian blur with the kernel renormalised over in-bounds taps,
/// so images smaller than the window still get a full-size statistics map.
inline Plane blur(const Plane& p) {
  static const auto g = gaussian_taps();
  Plane tmp{p.h, p.w, std::vector<double>(p.v.size())}, out = tmp;
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      double s = 0, ws = 0;
      for (int k = -5; k <= 5; ++k) {
        const int xx = x + k;
        if (xx < 0 || xx >= p.w) continue;
        s += g[k + 5] * p.at(y, xx);
        ws += g[k + 5];
      }
      tmp.at(y, x) = s / ws;
    }
  for (int y = 0; y < p.h; ++y)
    for (int x = 0; x < p.w; ++x) {
      double s = 0, ws = 0;
      for (int k = -5; k <= 5; ++k) {
        const int yy = y + k;
        if (yy < 0 || yy >= p.h) continue;
        s += g[k + 5] * tmp.at(yy, x);
        ws += g[k + 5];
      }
      out.at(y, x) = s / ws;
    }
  return out;
}

inline Plane halve(const Plane& p) {
  Plane o{p.h / 2, p.w / 2, {}};
  o.v.resize(static_cast<std::size_t>(o.h) * o.w);
  for (int y = 0; y < o.h; ++y)
    for (int x = 0; x < o.w; ++x)
      o.at(y, x) = 0.25 * (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                           p.at(2 * y + 1, 2 * x + 1));
  return o;
}

struct ScaleTerms {
  double cs = 0;    // mean contrast-structure term
  double ssim = 0;  // mean of luminance * contrast-structure
};

inline ScaleTerms ssim_terms(const Plane& a, const Plane& b) {
  Plane aa = a, bb = b, ab = a;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    aa.v[i] = a.v[i] * a.v[i];
    bb.v[i] = b.v[i] * b.v[i];
    ab.v[i] = a.v[i] * b.v[i];
  }
  const Plane ma = blur(a), mb = blur(b), saa = blur(aa), sbb = blur(bb), sab = blur(ab);
  double ssim = 0, cs = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const double va = std::max(0.0, saa.v[i] - ma.v[i] * ma.v[i]);
    const double vb = std::max(0.0, sbb.v[i] - mb.v[i] * mb.v[i]);
    const double cov = sab.v[i] - ma.v[i] * mb.v[i];
    const double l = (2 * ma.v[i] * mb.v[i] + kC1) / (ma.v[i] * ma.v[i] + mb.v[i] * mb.v[i] + kC1);
    const double k = (2 * cov + kC2) / (va + vb + kC2);
    cs += k;
    ssim += l * k;
  }
  const double n = static_cast<double>(a.v.size());
  return {cs / n, ssim / n};
}

}  // namespace detail_ssim

/// Five-scale structural similarity (11-tap Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03, scale weights 0.0448/0.2856/0.3001/0.2363/0.1333),
/// averaged over channels. Needs at least 16x16 input.
template <class T>
double ms_ssim(const Image<T>& a, const Image<T>& b) {
  using namespace detail_ssim;
  detail::require_dims(a.same_shape(b), "ms_ssim: inputs differ in shape");
  detail::require_dims(a.height() >= 16 && a.width() >= 16, "ms_ssim: needs at least 16x16 input");
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    Plane pa{a.height(), a.width(), {}}, pb = pa;
    pa.v.resize(a.pixels());
    pb.v.resize(a.pixels());
    for (int y = 0; y < a.height(); ++y)
      for (int x = 0; x < a.width(); ++x) {
        pa.at(y, x) = a(y, x, c);
        pb.at(y, x) = b(y, x, c);
      }
    double score = 1.0;
    for (int s = 0; s < 5; ++s) {
      const ScaleTerms t = ssim_terms(pa, pb);
      if (s < 4) {
        score *= std::pow(std::max(t.cs, 0.0), kScaleWeights[s]);
        pa = halve(pa);
        pb = halve(pb);
      } else {
        score *= std::pow(std::max(t.ssim, 0.0), kScaleWeights[s]);
      }
    }
    total += score;
  }
  return total / a.channels();
}

}  // namespace nrr
