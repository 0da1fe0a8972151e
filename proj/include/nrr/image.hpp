#pragma once

// Shared raster types: interleaved images, soft masks, label maps and depth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nrr/errors.hpp"

namespace nrr {

/// H x W x C raster with interleaved channels (RGB(A) order, grayscale = 1).
template <class T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(int height, int width, int channels, T fill = T(0))
      : height_(height), width_(width), channels_(channels) {
    detail::require_dims(height >= 1 && width >= 1, "image must be at least 1x1");
    detail::require_dims(channels >= 1, "image needs at least one channel");
    data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x, int c = 0) { return data_[index(y, x, c)]; }
  const T& operator()(int y, int x, int c = 0) const { return data_[index(y, x, c)]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const Image& o) const {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }
  bool same_extent(int h, int w) const { return height_ == h && width_ == w; }

  bool operator==(const Image& o) const = default;

  template <class U>
  Image<U> cast() const {
    Image<U> out(height_, width_, channels_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<T> data_;
};

/// Single-channel soft mask in [0,1]. Ground-truth masks hold exactly {0,1}.
template <class T>
class Mask {
 public:
  static constexpr double kThreshold = 0.5;

  Mask() = default;
  Mask(int height, int width, T fill = T(0)) : values_(height, width, 1, fill) {}
  explicit Mask(Image<T> single_channel) : values_(std::move(single_channel)) {
    detail::require_dims(values_.channels() == 1, "mask image must have one channel");
  }

  int height() const { return values_.height(); }
  int width() const { return values_.width(); }
  std::size_t pixels() const { return values_.pixels(); }

  T& operator()(int y, int x) { return values_(y, x, 0); }
  const T& operator()(int y, int x) const { return values_(y, x, 0); }

  std::span<T> data() { return values_.data(); }
  std::span<const T> data() const { return values_.data(); }
  const Image<T>& image() const { return values_; }
  Image<T>& image() { return values_; }

  /// Hard {0,1} mask; used for compositing and mask-quality metrics only.
  Mask binarized(double threshold = kThreshold) const {
    Mask out(height(), width());
    auto src = data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= threshold ? T(1) : T(0);
    return out;
  }

  /// Soft values clamped into [0,1].
  Mask clamped() const {
    Mask out = *this;
    for (auto& v : out.data()) v = std::clamp(v, T(0), T(1));
    return out;
  }

  std::size_t count_foreground() const {
    return static_cast<std::size_t>(
        std::count_if(data().begin(), data().end(), [](T v) { return v >= T(kThreshold); }));
  }

  bool operator==(const Mask& o) const = default;

 private:
  Image<T> values_;
};

enum class Label : std::uint8_t { background = 0, body = 1, head = 2 };

/// Per-pixel semantic labels.
class SegmentationMap {
 public:
  SegmentationMap() = default;
  SegmentationMap(int height, int width, Label fill = Label::background)
      : height_(height), width_(width) {
    detail::require_dims(height >= 1 && width >= 1, "segmentation must be at least 1x1");
    labels_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t pixels() const { return labels_.size(); }

  Label& operator()(int y, int x) { return labels_[static_cast<std::size_t>(y) * width_ + x]; }
  Label operator()(int y, int x) const { return labels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<Label> labels() { return labels_; }
  std::span<const Label> labels() const { return labels_; }

  std::size_t count(Label l) const {
    return static_cast<std::size_t>(std::count(labels_.begin(), labels_.end(), l));
  }
  bool has_head() const { return count(Label::head) > 0; }

  bool operator==(const SegmentationMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<Label> labels_;
};

/// Metric depth in meters; 0 marks pixels without geometry.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int height, int width, float fill = 0.0f) : height_(height), width_(width) {
    detail::require_dims(height >= 1 && width >= 1, "depth map must be at least 1x1");
    z_.assign(static_cast<std::size_t>(height) * width, fill);
  }

  int height() const { return height_; }
  int width() const { return width_; }

  float& operator()(int y, int x) { return z_[static_cast<std::size_t>(y) * width_ + x]; }
  float operator()(int y, int x) const { return z_[static_cast<std::size_t>(y) * width_ + x]; }
  bool valid(int y, int x) const { return (*this)(y, x) > 0.0f; }

  std::span<float> data() { return z_; }
  std::span<const float> data() const { return z_; }

  bool operator==(const DepthMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> z_;
};

/// One training example: degraded stereo renders, the witness target and its
/// labels, plus an optional link to the previous frame of the same sequence.
template <class T>
struct TrainingSample {
  Image<T> input_left;
  std::optional<Image<T>> input_right;
  Image<T> gt_left;
  SegmentationMap seg_left;
  std::optional<DepthMap> depth_right;
  std::shared_ptr<const TrainingSample> prev;
  std::string subject;
  std::string sequence_id;
  int frame_index = 0;

  bool has_stereo() const { return input_right.has_value() && depth_right.has_value(); }

  void validate() const {
    const int h = gt_left.height(), w = gt_left.width();
    detail::require_dims(input_left.same_extent(h, w), "input_left/gt_left size mismatch");
    detail::require_dims(seg_left.height() == h && seg_left.width() == w,
                         "seg_left/gt_left size mismatch");
    detail::require(input_right.has_value() == depth_right.has_value(),
                    "input_right present iff depth_right present");
    if (input_right) {
      detail::require_dims(input_right->same_extent(h, w), "input_right size mismatch");
      detail::require_dims(depth_right->height() == h && depth_right->width() == w,
                           "depth_right size mismatch");
    }
    if (prev) {
      detail::require(prev->sequence_id == sequence_id && prev->subject == subject,
                      "prev sample belongs to another sequence");
      detail::require(prev->frame_index == frame_index - 1, "prev sample is not frame t-1");
    }
  }
};

// ---------------------------------------------------------------------------
// Operations

/// I_e = I_pred * M (elementwise, mask broadcast over channels).
template <class T>
Image<T> compose(const Image<T>& pred, const Mask<T>& mask) {
  detail::require_dims(pred.same_extent(mask.height(), mask.width()),
                       "compose: image and mask differ in size");
  Image<T> out(pred.height(), pred.width(), pred.channels());
  const int c = pred.channels();
  auto m = mask.data();
  auto src = pred.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < m.size(); ++p)
    for (int k = 0; k < c; ++k) dst[p * c + k] = src[p * c + k] * m[p];
  return out;
}

/// M_gt = (labels != background).
template <class T = float>
Mask<T> mask_from_segmentation(const SegmentationMap& seg) {
  Mask<T> out(seg.height(), seg.width());
  auto lab = seg.labels();
  auto dst = out.data();
  for (std::size_t i = 0; i < lab.size(); ++i)
    dst[i] = lab[i] != Label::background ? T(1) : T(0);
  return out;
}

// ---------------------------------------------------------------------------
// Small helpers shared across modules

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  int right() const { return x + width; }
  int bottom() const { return y + height; }
  bool contains(const Rect& o) const {
    return o.x >= x && o.y >= y && o.right() <= right() && o.bottom() <= bottom();
  }
  bool operator==(const Rect&) const = default;
};

template <class T>
Image<T> crop(const Image<T>& im, const Rect& r) {
  detail::require_dims(r.x >= 0 && r.y >= 0 && r.right() <= im.width() &&
                           r.bottom() <= im.height() && r.width > 0 && r.height > 0,
                       "crop window outside image");
  Image<T> out(r.height, r.width, im.channels());
  const int c = im.channels();
  for (int y = 0; y < r.height; ++y) {
    const T* src = &im(r.y + y, r.x, 0);
    std::copy(src, src + static_cast<std::ptrdiff_t>(r.width) * c, &out(y, 0, 0));
  }
  return out;
}

template <class T>
Mask<T> crop(const Mask<T>& m, const Rect& r) {
  return Mask<T>(crop(m.image(), r));
}

inline SegmentationMap crop(const SegmentationMap& s, const Rect& r) {
  detail::require_dims(r.x >= 0 && r.y >= 0 && r.right() <= s.width() && r.bottom() <= s.height(),
                       "crop window outside segmentation");
  SegmentationMap out(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out(y, x) = s(r.y + y, r.x + x);
  return out;
}

inline DepthMap crop(const DepthMap& d, const Rect& r) {
  detail::require_dims(r.x >= 0 && r.y >= 0 && r.right() <= d.width() && r.bottom() <= d.height(),
                       "crop window outside depth map");
  DepthMap out(r.height, r.width);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) out(y, x) = d(r.y + y, r.x + x);
  return out;
}

/// Bounding box of all pixels carrying `label`; nullopt when there are none.
inline std::optional<Rect> label_bbox(const SegmentationMap& seg, Label label) {
  int x0 = seg.width(), y0 = seg.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < seg.height(); ++y)
    for (int x = 0; x < seg.width(); ++x)
      if (seg(y, x) == label) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return Rect{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

template <class T>
void clamp_unit(Image<T>& im) {
  for (auto& v : im.data()) v = std::clamp(v, T(0), T(1));
}

template <class T>
bool all_finite(std::span<const T> v) {
  return std::all_of(v.begin(), v.end(), [](T x) { return std::isfinite(x); });
}

/// Splits a 4-channel network output into the RGB prediction and the mask.
template <class T>
std::pair<Image<T>, Mask<T>> split_rgbm(const Image<T>& rgbm) {
  detail::require_dims(rgbm.channels() == 4, "expected 4-channel output");
  Image<T> rgb(rgbm.height(), rgbm.width(), 3);
  Mask<T> m(rgbm.height(), rgbm.width());
  for (int y = 0; y < rgbm.height(); ++y)
    for (int x = 0; x < rgbm.width(); ++x) {
      for (int c = 0; c < 3; ++c) rgb(y, x, c) = rgbm(y, x, c);
      m(y, x) = rgbm(y, x, 3);
    }
  return {std::move(rgb), std::move(m)};
}

}  // namespace nrr
