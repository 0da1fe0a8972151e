#pragma once

// Bilinear image warping with fixed per-pixel source coordinates.
//
// Disparity convention: a surface point at depth Z that appears at column x
// in the left view appears at column x + focal * baseline / Z in the right
// view. A WarpField on the left grid therefore points into the right image.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/png_io.hpp"

namespace nrr {

struct WarpField {
  int height = 0;
  int width = 0;
  std::vector<double> src_x;
  std::vector<double> src_y;
  std::vector<std::uint8_t> valid;

  WarpField() = default;
  WarpField(int h, int w) : height(h), width(w) {
    const std::size_t n = static_cast<std::size_t>(h) * w;
    src_x.assign(n, 0.0);
    src_y.assign(n, 0.0);
    valid.assign(n, 0);
  }

  std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }

  static WarpField identity(int h, int w) {
    WarpField f(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        f.src_x[f.index(y, x)] = x;
        f.src_y[f.index(y, x)] = y;
        f.valid[f.index(y, x)] = 1;
      }
    return f;
  }

  /// Constant displacement (dx, dy) everywhere.
  static WarpField shift(int h, int w, double dx, double dy) {
    WarpField f = identity(h, w);
    for (std::size_t i = 0; i < f.src_x.size(); ++i) {
      f.src_x[i] += dx;
      f.src_y[i] += dy;
    }
    return f;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }

  /// Field restricted to a window of the target grid, with coordinates
  /// re-expressed relative to the same window of the source image.
  WarpField cropped(const Rect& r) const {
    WarpField f(r.height, r.width);
    for (int y = 0; y < r.height; ++y)
      for (int x = 0; x < r.width; ++x) {
        const std::size_t s = index(r.y + y, r.x + x), d = f.index(y, x);
        f.src_x[d] = src_x[s] - r.x;
        f.src_y[d] = src_y[s] - r.y;
        f.valid[d] = valid[s];
      }
    return f;
  }

  bool operator==(const WarpField&) const = default;
};

namespace detail_warp {

struct Taps {
  int x0, y0, x1, y1;
  double fx, fy;
};

/// In-bounds means every tap with a non-zero weight lies inside the image.
inline bool taps_for(double sx, double sy, int w, int h, Taps& t) {
  if (!(sx >= 0.0 && sy >= 0.0 && sx <= w - 1 && sy <= h - 1)) return false;
  t.x0 = std::min(static_cast<int>(std::floor(sx)), std::max(w - 2, 0));
  t.y0 = std::min(static_cast<int>(std::floor(sy)), std::max(h - 2, 0));
  t.x1 = std::min(t.x0 + 1, w - 1);
  t.y1 = std::min(t.y0 + 1, h - 1);
  t.fx = sx - t.x0;
  t.fy = sy - t.y0;
  return true;
}

}  // namespace detail_warp

/// Samples `image` (any size) at the coordinates of `field` (any size).
/// Used for crop-and-resize where source and target grids differ.
template <class T>
Image<T> sample(const Image<T>& image, const WarpField& field) {
  const int c = image.channels();
  Image<T> out(field.height, field.width, c);
  detail_warp::Taps t{};
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const std::size_t i = field.index(y, x);
      if (!field.valid[i] ||
          !detail_warp::taps_for(field.src_x[i], field.src_y[i], image.width(), image.height(), t))
        continue;
      const T w00 = static_cast<T>((1 - t.fx) * (1 - t.fy)), w01 = static_cast<T>(t.fx * (1 - t.fy));
      const T w10 = static_cast<T>((1 - t.fx) * t.fy), w11 = static_cast<T>(t.fx * t.fy);
      for (int k = 0; k < c; ++k)
        out(y, x, k) = w00 * image(t.y0, t.x0, k) + w01 * image(t.y0, t.x1, k) +
                       w10 * image(t.y1, t.x0, k) + w11 * image(t.y1, t.x1, k);
    }
  return out;
}

template <class T>
Image<T> sample_backward(const Image<T>& grad_out, const WarpField& field, int src_h, int src_w) {
  const int c = grad_out.channels();
  Image<T> g(src_h, src_w, c);
  detail_warp::Taps t{};
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const std::size_t i = field.index(y, x);
      if (!field.valid[i] || !detail_warp::taps_for(field.src_x[i], field.src_y[i], src_w, src_h, t))
        continue;
      const T w00 = static_cast<T>((1 - t.fx) * (1 - t.fy)), w01 = static_cast<T>(t.fx * (1 - t.fy));
      const T w10 = static_cast<T>((1 - t.fx) * t.fy), w11 = static_cast<T>(t.fx * t.fy);
      for (int k = 0; k < c; ++k) {
        const T v = grad_out(y, x, k);
        g(t.y0, t.x0, k) += w00 * v;
        g(t.y0, t.x1, k) += w01 * v;
        g(t.y1, t.x0, k) += w10 * v;
        g(t.y1, t.x1, k) += w11 * v;
      }
    }
  return g;
}

template <class T>
struct WarpResult {
  Image<T> image;
  Mask<T> valid;
};

/// Samples `image` at the field coordinates (four-neighbour bilinear).
/// Pixels whose field entry is invalid or whose coordinates fall outside the
/// image are zero in the output and zero in the validity mask.
template <class T>
WarpResult<T> warp(const Image<T>& image, const WarpField& field) {
  detail::require_dims(image.same_extent(field.height, field.width),
                       "warp: field and image differ in size");
  WarpResult<T> r{sample(image, field), Mask<T>(image.height(), image.width())};
  detail_warp::Taps t{};
  for (int y = 0; y < field.height; ++y)
    for (int x = 0; x < field.width; ++x) {
      const std::size_t i = field.index(y, x);
      if (field.valid[i] &&
          detail_warp::taps_for(field.src_x[i], field.src_y[i], field.width, field.height, t))
        r.valid(y, x) = T(1);
    }
  return r;
}

/// Adjoint of warp with respect to the image values: scatters `grad_out`
/// back onto the source grid. The coordinates receive no gradient.
template <class T>
Image<T> warp_backward(const Image<T>& grad_out, const WarpField& field) {
  return sample_backward(grad_out, field, grad_out.height(), grad_out.width());
}

/// Builds the left-grid field that pulls right-view content into the left
/// view. Every right pixel with depth Z lands on left column
/// round(x_r - d), d = focal * baseline / Z, and sets that left pixel's
/// source coordinate to x_l + d. Nearer surfaces win; left pixels that no
/// right pixel reaches stay invalid.
inline WarpField warp_field_from_depth(const DepthMap& depth_right, double focal, double baseline) {
  const int h = depth_right.height(), w = depth_right.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float z = depth_right(y, x);
      detail::require(std::isfinite(z) && z >= 0.0f, "warp_field_from_depth: negative or non-finite depth");
    }
  WarpField f(h, w);
  std::vector<float> zbuf(static_cast<std::size_t>(h) * w, std::numeric_limits<float>::infinity());
  for (int y = 0; y < h; ++y)
    for (int xr = 0; xr < w; ++xr) {
      const float z = depth_right(y, xr);
      if (!(z > 0.0f)) continue;
      const double d = focal * baseline / z;
      const long xl = std::lround(xr - d);
      if (xl < 0 || xl >= w) continue;
      const std::size_t i = f.index(y, static_cast<int>(xl));
      if (z < zbuf[i]) {
        zbuf[i] = z;
        f.src_x[i] = static_cast<double>(xl) + d;
        f.src_y[i] = y;
        f.valid[i] = 1;
      }
    }
  return f;
}

/// Per-pixel horizontal disparity focal * baseline / Z (0 where Z is 0).
inline std::vector<double> disparity_from_depth(const DepthMap& depth, double focal, double baseline) {
  std::vector<double> d(depth.data().size(), 0.0);
  auto z = depth.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (z[i] > 0.0f) d[i] = focal * baseline / z[i];
  return d;
}

/// Field that resamples `window` of a (src_h x src_w) image onto an
/// out_h x out_w grid, half-pixel aligned. Coordinates are clamped to the
/// window (itself clipped to the image), so no pixel outside it is read.
inline WarpField resize_field(const Rect& window, int src_h, int src_w, int out_h, int out_w) {
  WarpField f(out_h, out_w);
  const double sx = static_cast<double>(window.width) / out_w;
  const double sy = static_cast<double>(window.height) / out_h;
  const double x_lo = std::max(0, window.x), y_lo = std::max(0, window.y);
  const double x_hi = std::min(src_w, window.x + window.width) - 1.0;
  const double y_hi = std::min(src_h, window.y + window.height) - 1.0;
  detail::require_dims(x_hi >= x_lo && y_hi >= y_lo, "resize_field: window lies outside the image");
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const std::size_t i = f.index(y, x);
      f.src_x[i] = std::clamp(window.x + (x + 0.5) * sx - 0.5, x_lo, x_hi);
      f.src_y[i] = std::clamp(window.y + (y + 0.5) * sy - 0.5, y_lo, y_hi);
      f.valid[i] = 1;
    }
  return f;
}

// ---------------------------------------------------------------------------
// Fixture serialisation: coordinates as a raw little-endian float32 file
// ("NRRF", u32 height, u32 width, u32 channels=2, then x,y pairs) and the
// validity as an 8-bit PNG.

inline void save_warp_field(const std::filesystem::path& coords_path,
                            const std::filesystem::path& validity_png, const WarpField& f) {
  if (coords_path.has_parent_path()) std::filesystem::create_directories(coords_path.parent_path());
  std::ofstream out(coords_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + coords_path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(f.height),
                                   static_cast<std::uint32_t>(f.width), 2u};
  out.write("NRRF", 4);
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  for (std::size_t i = 0; i < f.src_x.size(); ++i) {
    const float xy[2] = {static_cast<float>(f.src_x[i]), static_cast<float>(f.src_y[i])};
    out.write(reinterpret_cast<const char*>(xy), sizeof xy);
  }
  Mask<float> v(f.height, f.width);
  for (std::size_t i = 0; i < f.valid.size(); ++i) v.data()[i] = f.valid[i] ? 1.0f : 0.0f;
  io::write_png(validity_png, v);
}

inline WarpField load_warp_field(const std::filesystem::path& coords_path,
                                 const std::filesystem::path& validity_png) {
  std::ifstream in(coords_path, std::ios::binary);
  if (!in) throw IoError("cannot read " + coords_path.string());
  char magic[4];
  std::uint32_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof header);
  if (!in || std::memcmp(magic, "NRRF", 4) != 0 || header[2] != 2u)
    throw IoError("not a warp-field coordinate file: " + coords_path.string());
  WarpField f(static_cast<int>(header[0]), static_cast<int>(header[1]));
  for (std::size_t i = 0; i < f.src_x.size(); ++i) {
    float xy[2];
    in.read(reinterpret_cast<char*>(xy), sizeof xy);
    f.src_x[i] = xy[0];
    f.src_y[i] = xy[1];
  }
  if (!in) throw IoError("truncated warp-field file: " + coords_path.string());
  auto v = io::read_mask_png<float>(validity_png);
  detail::require_dims(v.height() == f.height && v.width() == f.width, "validity PNG size mismatch");
  for (std::size_t i = 0; i < f.valid.size(); ++i) f.valid[i] = v.data()[i] > 0.5f ? 1 : 0;
  return f;
}

}  // namespace nrr
