#pragma once

// PNG persistence for the raster types.
//
//   colour images   8-bit gray/RGB/RGBA, linear map [0,255] <-> [0,1]
//   masks           8-bit gray
//   depth maps      16-bit gray, millimeters (0 = no geometry)
//   segmentation    8-bit paletted, index 0=background 1=body 2=head

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"

namespace nrr::io {

namespace detail_png {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open(const std::filesystem::path& p, const char* mode) {
  FilePtr f(std::fopen(p.string().c_str(), mode));
  if (!f) throw IoError("cannot open " + p.string());
  return f;
}

[[noreturn]] inline void on_error(png_structp, png_const_charp msg) {
  throw IoError(std::string("libpng: ") + msg);
}
inline void on_warning(png_structp, png_const_charp) {}

struct Raw {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  bool paletted = false;
  std::vector<std::uint16_t> samples;  // row-major interleaved
};

inline Raw read_raw(const std::filesystem::path& path, bool keep_palette_indices) {
  auto f = open(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, f.get());
  png_read_info(png, info);
  Raw raw;
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  raw.paletted = color == PNG_COLOR_TYPE_PALETTE;

  if (raw.paletted && keep_palette_indices) {
    if (depth < 8) png_set_packing(png);
    depth = 8;
  } else {
    if (raw.paletted) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (depth < 8) depth = 8;
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<png_byte> buf(row_bytes * raw.height);
  std::vector<png_bytep> rows(raw.height);
  for (int y = 0; y < raw.height; ++y) rows[y] = buf.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  const std::size_t n = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  raw.samples.resize(n);
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      raw.samples[i] = static_cast<std::uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) raw.samples[i] = buf[i];
  }
  return raw;
}

inline void write_raw(const std::filesystem::path& path, int width, int height, int color_type,
                      int bit_depth, const std::vector<png_byte>& bytes,
                      const std::vector<png_color>* palette = nullptr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto f = open(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, on_error, on_warning);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, f.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (palette)
    png_set_PLTE(png, info, palette->data(), static_cast<int>(palette->size()));
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  const std::size_t row_bytes = bytes.size() / height;
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + y * row_bytes));
  png_write_end(png, nullptr);
}

inline std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also maps NaN to 0
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace detail_png

/// Writes 1, 3 or 4 channel images as 8-bit PNG; values are clamped to [0,1].
template <class T>
void write_png(const std::filesystem::path& path, const Image<T>& im) {
  int color = 0;
  switch (im.channels()) {
    case 1: color = PNG_COLOR_TYPE_GRAY; break;
    case 3: color = PNG_COLOR_TYPE_RGB; break;
    case 4: color = PNG_COLOR_TYPE_RGBA; break;
    default: throw DimensionError("write_png: unsupported channel count");
  }
  std::vector<png_byte> bytes(im.size());
  auto src = im.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = detail_png::to_byte(src[i]);
  detail_png::write_raw(path, im.width(), im.height(), color, 8, bytes);
}

template <class T>
void write_png(const std::filesystem::path& path, const Mask<T>& m) {
  write_png(path, m.image());
}

/// Reads an 8- or 16-bit PNG into [0,1]; palettes are expanded to RGB.
template <class T = float>
Image<T> read_png(const std::filesystem::path& path) {
  auto raw = detail_png::read_raw(path, false);
  Image<T> im(raw.height, raw.width, raw.channels);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  auto dst = im.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(raw.samples[i] / scale);
  return im;
}

template <class T = float>
Mask<T> read_mask_png(const std::filesystem::path& path) {
  auto im = read_png<T>(path);
  if (im.channels() != 1) throw DimensionError("mask PNG must be grayscale: " + path.string());
  return Mask<T>(std::move(im));
}

inline void write_depth_png(const std::filesystem::path& path, const DepthMap& d) {
  std::vector<png_byte> bytes(static_cast<std::size_t>(d.width()) * d.height() * 2);
  auto z = d.data();
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double mm = std::round(static_cast<double>(z[i]) * 1000.0);
    const auto v = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
    // little-endian pairs; png_set_swap turns them into PNG's big-endian order
    bytes[2 * i] = static_cast<png_byte>(v & 0xff);
    bytes[2 * i + 1] = static_cast<png_byte>(v >> 8);
  }
  detail_png::write_raw(path, d.width(), d.height(), PNG_COLOR_TYPE_GRAY, 16, bytes);
}

inline DepthMap read_depth_png(const std::filesystem::path& path) {
  auto raw = detail_png::read_raw(path, false);
  if (raw.channels != 1 || raw.bit_depth != 16)
    throw IoError("depth PNG must be 16-bit grayscale: " + path.string());
  DepthMap d(raw.height, raw.width);
  auto z = d.data();
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = static_cast<float>(raw.samples[i]) / 1000.0f;
  return d;
}

inline void write_segmentation_png(const std::filesystem::path& path, const SegmentationMap& s) {
  static const std::vector<png_color> palette = {{0, 0, 0}, {0, 160, 255}, {255, 200, 0}};
  std::vector<png_byte> bytes(s.pixels());
  auto lab = s.labels();
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<png_byte>(lab[i]);
  detail_png::write_raw(path, s.width(), s.height(), PNG_COLOR_TYPE_PALETTE, 8, bytes, &palette);
}

/// Accepts a paletted PNG (index = label) or an 8-bit gray PNG holding 0/1/2.
inline SegmentationMap read_segmentation_png(const std::filesystem::path& path) {
  auto raw = detail_png::read_raw(path, true);
  if (raw.channels != 1) throw IoError("segmentation PNG must be single-channel: " + path.string());
  SegmentationMap s(raw.height, raw.width);
  auto lab = s.labels();
  for (std::size_t i = 0; i < lab.size(); ++i) {
    if (raw.samples[i] > 2) throw IoError("segmentation label out of range in " + path.string());
    lab[i] = static_cast<Label>(raw.samples[i]);
  }
  return s;
}

}  // namespace nrr::io
