#pragma once

// Synthetic degradation of clean frames into render-like network inputs.
//
// Fixed order: resolution loss -> colour distortion -> noise -> holes.
// Colour, noise and holes touch foreground pixels only (a volumetric render
// has no background to distort); the resolution loss blurs the whole frame,
// silhouette included. Every draw is keyed by (sequence_seed, stream,
// frame_index[, view]) so frames can be produced in any order.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/rng.hpp"
#include "nrr/stereowarp.hpp"

namespace nrr {

struct DegradationConfig {
  double hole_fraction = 0.10;
  double hole_blob_scale = 3.0;
  double noise_sigma = 0.05;
  int downsample_factor = 2;
  double color_gain_min = 0.9;
  double color_gain_max = 1.1;
  double color_bias_min = -0.05;
  double color_bias_max = 0.05;
  double flicker_amplitude = 0.0;
  std::uint64_t sequence_seed = 1;

  /// Every knob at its no-op value.
  static DegradationConfig neutral() {
    DegradationConfig c;
    c.hole_fraction = 0.0;
    c.noise_sigma = 0.0;
    c.downsample_factor = 1;
    c.color_gain_min = c.color_gain_max = 1.0;
    c.color_bias_min = c.color_bias_max = 0.0;
    c.flicker_amplitude = 0.0;
    return c;
  }

  void validate() const {
    detail::require(hole_fraction >= 0.0 && hole_fraction <= 1.0, "degrade.hole_fraction must be in [0,1]");
    detail::require(hole_blob_scale > 0.0, "degrade.hole_blob_scale must be positive");
    detail::require(noise_sigma >= 0.0 && noise_sigma <= 1.0, "degrade.noise_sigma must be in [0,1]");
    detail::require(downsample_factor == 1 || downsample_factor == 2 || downsample_factor == 4 ||
                        downsample_factor == 8,
                    "degrade.downsample_factor must be one of 1, 2, 4, 8");
    detail::require(color_gain_min > 0.0 && color_gain_min <= color_gain_max,
                    "degrade.color_gain range must satisfy 0 < min <= max");
    detail::require(color_bias_min <= color_bias_max && color_bias_min >= -1.0 && color_bias_max <= 1.0,
                    "degrade.color_bias range must satisfy -1 <= min <= max <= 1");
    detail::require(flicker_amplitude >= 0.0 && flicker_amplitude <= 1.0,
                    "degrade.flicker_amplitude must be in [0,1]");
  }
};

/// Identifies the random stream of one rendered view of one sequence.
struct DegradeKey {
  std::uint64_t stream = 0;  // typically hash of subject/sequence
  int view = 0;              // 0 = left eye, 1 = right eye
};

template <class T>
struct DegradedFrame {
  Image<T> image;
  Mask<T> holes;  // 1 where a hole was carved
};

struct ColorTransform {
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  std::array<double, 3> bias{0.0, 0.0, 0.0};
  bool operator==(const ColorTransform&) const = default;
};

/// Per-frame colour transform: a per-sequence draw from the gain/bias ranges
/// plus a per-frame jitter of +-flicker (gain) and +-flicker/4 (bias). The
/// transform is shared by both eyes of the same frame.
inline ColorTransform color_transform(const DegradationConfig& cfg, std::uint64_t stream, int frame_index) {
  ColorTransform t;
  auto seq_rng = make_rng({cfg.sequence_seed, stream, 0xC0102ULL});
  for (int c = 0; c < 3; ++c) {
    t.gain[c] = cfg.color_gain_min == cfg.color_gain_max
                    ? cfg.color_gain_min
                    : uniform(seq_rng, cfg.color_gain_min, cfg.color_gain_max);
    t.bias[c] = cfg.color_bias_min == cfg.color_bias_max
                    ? cfg.color_bias_min
                    : uniform(seq_rng, cfg.color_bias_min, cfg.color_bias_max);
  }
  if (cfg.flicker_amplitude > 0.0) {
    auto frame_rng = make_rng({cfg.sequence_seed, stream, 0xF11CULL, static_cast<std::uint64_t>(frame_index)});
    for (int c = 0; c < 3; ++c) {
      t.gain[c] = std::max(0.0, t.gain[c] + cfg.flicker_amplitude * uniform(frame_rng, -1.0, 1.0));
      t.bias[c] += 0.25 * cfg.flicker_amplitude * uniform(frame_rng, -1.0, 1.0);
    }
  }
  return t;
}

namespace detail_degrade {

template <class T>
Image<T> resample_to(const Image<T>& im, int out_h, int out_w) {
  return sample(im, resize_field(Rect{0, 0, im.width(), im.height()}, im.height(), im.width(), out_h, out_w));
}

inline bool is_boundary(const SegmentationMap& seg, int y, int x) {
  if (seg(y, x) == Label::background) return false;
  constexpr int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  for (int k = 0; k < 4; ++k) {
    const int nx = x + dx[k], ny = y + dy[k];
    if (nx < 0 || ny < 0 || nx >= seg.width() || ny >= seg.height()) return true;
    if (seg(ny, nx) == Label::background) return true;
  }
  return false;
}

/// Marks round(fraction * foreground) pixels as holes using elliptical blobs
/// grown from seed pixels, seeds drawn from the silhouette boundary 70% of
/// the time.
inline std::vector<std::uint8_t> carve_holes(const SegmentationMap& seg, double fraction, double scale, Rng& rng) {
  const int h = seg.height(), w = seg.width();
  std::vector<std::uint8_t> hole(static_cast<std::size_t>(h) * w, 0);
  std::vector<int> fg, boundary;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (seg(y, x) == Label::background) continue;
      fg.push_back(y * w + x);
      if (is_boundary(seg, y, x)) boundary.push_back(y * w + x);
    }
  const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(fg.size())));
  std::size_t carved = 0;
  int stalls = 0;
  while (carved < target && stalls < 1000) {
    const bool from_boundary = !boundary.empty() && uniform(rng, 0.0, 1.0) < 0.7;
    const auto& pool = from_boundary ? boundary : fg;
    const int seed = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
    const double cy = seed / w, cx = seed % w;
    const double ra = scale * uniform(rng, 0.5, 1.5), rb = scale * uniform(rng, 0.5, 1.5);
    const double th = uniform(rng, 0.0, std::numbers::pi);
    const double ct = std::cos(th), st = std::sin(th);
    const int r = static_cast<int>(std::ceil(std::max(ra, rb)));
    std::vector<std::pair<double, int>> cand;
    for (int y = std::max(0, static_cast<int>(cy) - r); y <= std::min(h - 1, static_cast<int>(cy) + r); ++y)
      for (int x = std::max(0, static_cast<int>(cx) - r); x <= std::min(w - 1, static_cast<int>(cx) + r); ++x) {
        const int i = y * w + x;
        if (hole[i] || seg(y, x) == Label::background) continue;
        const double u = (x - cx) * ct + (y - cy) * st, v = -(x - cx) * st + (y - cy) * ct;
        const double e = (u * u) / (ra * ra) + (v * v) / (rb * rb);
        if (e <= 1.0) cand.emplace_back(e, i);
      }
    if (cand.empty()) {
      ++stalls;
      continue;
    }
    std::sort(cand.begin(), cand.end());
    for (const auto& [e, i] : cand) {
      if (carved == target) break;
      hole[i] = 1;
      ++carved;
    }
  }
  // Tiny foregrounds can starve the blob sampler; finish pixel by pixel.
  for (std::size_t k = 0; carved < target && k < fg.size(); ++k)
    if (!hole[fg[k]]) {
      hole[fg[k]] = 1;
      ++carved;
    }
  return hole;
}

}  // namespace detail_degrade

/// Degrades one clean frame. Deterministic in (cfg.sequence_seed, key, frame_index).
template <class T>
DegradedFrame<T> degrade_frame(const Image<T>& clean, const SegmentationMap& seg, const DegradationConfig& cfg,
                               int frame_index, DegradeKey key = {}) {
  cfg.validate();
  detail::require_dims(clean.same_extent(seg.height(), seg.width()), "degrade_frame: image/segmentation size mismatch");
  detail::require_dims(clean.channels() == 3, "degrade_frame: expected an RGB image");
  const int h = clean.height(), w = clean.width();

  Image<T> im = clean;
  if (cfg.downsample_factor > 1) {
    const int lh = std::max(1, (h + cfg.downsample_factor - 1) / cfg.downsample_factor);
    const int lw = std::max(1, (w + cfg.downsample_factor - 1) / cfg.downsample_factor);
    im = detail_degrade::resample_to(detail_degrade::resample_to(im, lh, lw), h, w);
  }

  const ColorTransform ct = color_transform(cfg, key.stream, frame_index);
  if (ct != ColorTransform{}) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (seg(y, x) == Label::background) continue;
        for (int c = 0; c < 3; ++c)
          im(y, x, c) = static_cast<T>(std::clamp(ct.gain[c] * im(y, x, c) + ct.bias[c], 0.0, 1.0));
      }
  }

  if (cfg.noise_sigma > 0.0) {
    auto rng = make_rng({cfg.sequence_seed, key.stream, 0x9015EULL, static_cast<std::uint64_t>(frame_index),
                         static_cast<std::uint64_t>(key.view)});
    std::normal_distribution<double> n(0.0, cfg.noise_sigma);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (seg(y, x) == Label::background) continue;
        for (int c = 0; c < 3; ++c) im(y, x, c) = static_cast<T>(std::clamp(im(y, x, c) + n(rng), 0.0, 1.0));
      }
  }

  Mask<T> holes(h, w);
  if (cfg.hole_fraction > 0.0) {
    auto rng = make_rng({cfg.sequence_seed, key.stream, 0x4013ULL, static_cast<std::uint64_t>(frame_index),
                         static_cast<std::uint64_t>(key.view)});
    const auto carved = detail_degrade::carve_holes(seg, cfg.hole_fraction, cfg.hole_blob_scale, rng);
    // Holes are the only all-zero foreground pixels once written as 8-bit.
    constexpr double kZero = 0.5 / 255.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (carved[i]) {
          for (int c = 0; c < 3; ++c) im(y, x, c) = T(0);
          holes(y, x) = T(1);
        } else if (seg(y, x) != Label::background && im(y, x, 0) < kZero && im(y, x, 1) < kZero &&
                   im(y, x, 2) < kZero) {
          for (int c = 0; c < 3; ++c) im(y, x, c) = static_cast<T>(1.0 / 255.0);
        }
      }
  }
  return {std::move(im), std::move(holes)};
}

template <class T>
struct StereoView {
  Image<T> image;
  DepthMap depth;
  std::optional<SegmentationMap> seg;
};

/// Synthesises the right-eye view by forward-splatting every left pixel to
/// column x + round(focal * baseline / Z) with a z-buffer. Pixels without
/// geometry (Z = 0) keep their column and lose against any surface. Right
/// pixels nothing lands on are holes (zero colour, zero depth, background).
template <class T>
StereoView<T> build_stereo_pair(const Image<T>& left, const DepthMap& depth_left, double baseline, double focal,
                                const SegmentationMap* seg_left = nullptr) {
  const int h = left.height(), w = left.width(), ch = left.channels();
  detail::require_dims(depth_left.height() == h && depth_left.width() == w, "build_stereo_pair: depth size mismatch");
  for (float z : depth_left.data())
    detail::require(std::isfinite(z) && z >= 0.0f, "build_stereo_pair: depth must be positive where defined");
  detail::require(std::isfinite(baseline) && std::isfinite(focal) && focal > 0.0,
                  "build_stereo_pair: invalid camera parameters");

  StereoView<T> out{Image<T>(h, w, ch), DepthMap(h, w), std::nullopt};
  if (seg_left) out.seg = SegmentationMap(h, w);
  std::vector<float> zbuf(static_cast<std::size_t>(h) * w, std::numeric_limits<float>::infinity());
  std::vector<std::uint8_t> written(zbuf.size(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float z = depth_left(y, x);
      const double d = z > 0.0f ? focal * baseline / z : 0.0;
      const long xr = x + std::lround(d);
      if (xr < 0 || xr >= w) continue;
      const std::size_t i = static_cast<std::size_t>(y) * w + xr;
      const float key = z > 0.0f ? z : std::numeric_limits<float>::max();
      if (written[i] && key >= zbuf[i]) continue;
      written[i] = 1;
      zbuf[i] = key;
      for (int c = 0; c < ch; ++c) out.image(y, static_cast<int>(xr), c) = left(y, x, c);
      out.depth(y, static_cast<int>(xr)) = z;
      if (seg_left) (*out.seg)(y, static_cast<int>(xr)) = (*seg_left)(y, x);
    }
  return out;
}

}  // namespace nrr
