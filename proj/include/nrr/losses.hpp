#pragma once

// Training losses with hand-written gradients.
//
// Saliency: y is the per-pixel L1 norm of a residual across channels. Pixels
// whose y lies in the closed band [G(p_min), G(p_max)] (nearest-rank
// percentiles over all pixels) keep weight 1, the rest 0. The weights are
// data: no gradient flows through them. A SaliencyState lets callers read
// the weights a call used and replay them (frozen) in later calls.
//
// With LossConfig::mean_normalize each term is divided by the element count
// of its residual (feature stages by C*H*W, the mask by H*W, images by
// 3*H*W, stereo by 3 * valid pixels); otherwise raw sums are returned.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/nn.hpp"
#include "nrr/percept.hpp"
#include "nrr/stereowarp.hpp"

namespace nrr {

struct SaliencyConfig {
  double p_min = 50.0;
  double p_max = 98.0;

  void validate() const {
    detail::require(p_min >= 0.0 && p_max <= 100.0 && p_min < p_max,
                    "saliency band needs 0 <= p_min < p_max <= 100");
  }
  bool operator==(const SaliencyConfig&) const = default;
};

struct LossConfig {
  double w_rec = 1.0;
  double w_mask = 1.0;
  double w_head = 1.0;
  double w_temporal = 1.0;
  double w_stereo = 1.0;
  double rec_l1_fraction = 0.1;
  int head_crop_size = 128;
  SaliencyConfig saliency_rec{50.0, 98.0};
  SaliencyConfig saliency_mask{50.0, 98.0};
  SaliencyConfig saliency_head{25.0, 98.0};
  bool saliency_enabled = true;
  bool mean_normalize = true;

  void validate() const {
    for (double w : {w_rec, w_mask, w_head, w_temporal, w_stereo})
      detail::require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and non-negative");
    detail::require(std::isfinite(rec_l1_fraction) && rec_l1_fraction >= 0.0,
                    "loss.rec_l1_fraction must be non-negative");
    detail::require(head_crop_size >= 16 && head_crop_size % 16 == 0,
                    "loss.head_crop_size must be a positive multiple of 16");
    saliency_rec.validate();
    saliency_mask.validate();
    saliency_head.validate();
  }
  bool operator==(const LossConfig&) const = default;
};

struct LossBreakdown {
  double rec = 0, mask = 0, head = 0, temporal = 0, stereo = 0, total = 0;
  bool head_active = false;
  bool temporal_present = false;
  bool stereo_present = false;
  bool stereo_empty = false;  // stereo inputs given but no valid warp pixel
};

// ---------------------------------------------------------------------------
// Saliency reweighing

/// Nearest-rank percentile of an ascending sequence: sorted[ceil(p/100 N) - 1].
template <class T>
T percentile_sorted(std::span<const T> sorted, double p) {
  detail::require(!sorted.empty(), "percentile of an empty set");
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::ptrdiff_t>(std::ceil(p / 100.0 * n - 1e-9)) - 1;
  rank = std::clamp<std::ptrdiff_t>(rank, 0, static_cast<std::ptrdiff_t>(sorted.size()) - 1);
  return sorted[static_cast<std::size_t>(rank)];
}

/// Band indicator for per-pixel norms y.
template <class T>
std::vector<std::uint8_t> saliency_band(std::span<const T> y, const SaliencyConfig& cfg) {
  cfg.validate();
  detail::require(!y.empty(), "saliency of an empty residual");
  std::vector<T> sorted(y.begin(), y.end());
  std::sort(sorted.begin(), sorted.end());
  const T lo = percentile_sorted<T>(sorted, cfg.p_min), hi = percentile_sorted<T>(sorted, cfg.p_max);
  std::vector<std::uint8_t> w(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) w[i] = y[i] >= lo && y[i] <= hi;
  return w;
}

/// Per-pixel L1 across channels of an interleaved image.
template <class T>
std::vector<T> channel_l1(const Image<T>& r) {
  std::vector<T> y(r.pixels(), T(0));
  const int c = r.channels();
  auto d = r.data();
  for (std::size_t p = 0; p < y.size(); ++p)
    for (int k = 0; k < c; ++k) y[p] += std::abs(d[p * c + k]);
  return y;
}

/// Per-pixel L1 across channels of planar features.
template <class T>
std::vector<T> channel_l1(const nn::Planes<T>& r) {
  std::vector<T> y(r.plane_size(), T(0));
  for (int c = 0; c < r.channels; ++c) {
    const T* p = r.plane(c);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += std::abs(p[i]);
  }
  return y;
}

template <class T>
Mask<T> saliency_weights(const Image<T>& residual, const SaliencyConfig& cfg) {
  detail::require(residual.size() > 0, "saliency of an empty residual");
  const auto y = channel_l1(residual);
  const auto band = saliency_band<T>(y, cfg);
  Mask<T> m(residual.height(), residual.width());
  for (std::size_t i = 0; i < band.size(); ++i) m.data()[i] = band[i] ? T(1) : T(0);
  return m;
}

/// || band(y) * y ||_1, a raw (unnormalised) sum.
template <class T>
T reweighted_norm(const Image<T>& residual, const SaliencyConfig& cfg) {
  const auto y = channel_l1(residual);
  const auto band = saliency_band<T>(y, cfg);
  T s = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (band[i]) s += y[i];
  return s;
}

/// Saliency bands used by one loss evaluation, in call order. When `frozen`
/// is set the stored bands are used instead of recomputing them.
struct SaliencyState {
  std::vector<std::vector<std::uint8_t>> bands;
  bool frozen = false;
  std::size_t cursor = 0;

  void rewind() { cursor = 0; }
};

namespace detail_loss {

inline std::vector<std::uint8_t> all_ones(std::size_t n) { return std::vector<std::uint8_t>(n, 1); }

/// Band for the next residual, honouring enabled/frozen state.
template <class T>
std::vector<std::uint8_t> next_band(std::span<const T> y, const SaliencyConfig& cfg, bool enabled, SaliencyState* st) {
  if (st && st->frozen) {
    detail::require(st->cursor < st->bands.size(), "frozen saliency state exhausted");
    auto b = st->bands[st->cursor++];
    detail::require_dims(b.size() == y.size(), "frozen saliency band has the wrong size");
    return b;
  }
  auto b = enabled ? saliency_band<T>(y, cfg) : all_ones(y.size());
  if (st) {
    st->bands.push_back(b);
    ++st->cursor;
  }
  return b;
}

template <class T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

/// Feature-space part shared by the reconstruction and head terms:
/// sum over stages of the reweighted L1 between extract(a) and extract(b).
/// Writes dL/db into `grad_b` when non-null.
template <class T>
T perceptual_term(const Image<T>& a, const Image<T>& b, const FeatureExtractor<T>& fx, const SaliencyConfig& band_cfg,
                  const LossConfig& cfg, Image<T>* grad_b, SaliencyState* st) {
  const FeatureStack<T> fa = fx.extract(a);
  typename FeatureExtractor<T>::Cache cache;
  const FeatureStack<T> fb = grad_b ? fx.extract(b, cache) : fx.extract(b);
  FeatureStack<T> gf;
  T total = 0;
  for (int s = 0; s < kFeatureStages; ++s) {
    detail::require_dims(fa[s].same_shape(fb[s]), "feature stage mismatch");
    nn::Planes<T> r = fa[s];
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] -= fb[s].data[i];
    const auto y = channel_l1(r);
    const auto band = next_band<T>(y, band_cfg, cfg.saliency_enabled, st);
    const T norm = cfg.mean_normalize ? static_cast<T>(r.data.size()) : T(1);
    T s_sum = 0;
    for (std::size_t p = 0; p < y.size(); ++p)
      if (band[p]) s_sum += y[p];
    total += s_sum / norm;
    if (grad_b) {
      gf[s] = nn::Planes<T>(r.channels, r.height, r.width);
      for (int c = 0; c < r.channels; ++c) {
        const T* rp = r.plane(c);
        T* gp = gf[s].plane(c);
        for (std::size_t p = 0; p < r.plane_size(); ++p)
          if (band[p]) gp[p] = -sign(rp[p]) / norm;
      }
    }
  }
  if (grad_b) *grad_b = fx.backward(cache, gf);
  return total;
}

/// Chain rule through b = pred * mask.
template <class T>
void compose_backward(const Image<T>& pred, const Mask<T>& mask, const Image<T>& grad_b, Image<T>& d_pred,
                      Mask<T>& d_mask) {
  const int c = pred.channels();
  for (std::size_t p = 0; p < mask.pixels(); ++p) {
    T gm = 0;
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      d_pred.data()[i] += grad_b.data()[i] * mask.data()[p];
      gm += grad_b.data()[i] * pred.data()[i];
    }
    d_mask.data()[p] += gm;
  }
}

}  // namespace detail_loss

/// Gradients with respect to one eye's prediction.
template <class T>
struct PredGrad {
  Image<T> rgb;
  Mask<T> mask;

  PredGrad() = default;
  PredGrad(int h, int w) : rgb(h, w, 3), mask(h, w) {}
};

// ---------------------------------------------------------------------------
// Terms

/// Perceptual reconstruction between M_gt*I_gt and M_pred*I_pred over all
/// feature stages, plus rec_l1_fraction times the pixel L1 between I_gt and
/// I_pred. Gradients are accumulated into `grad`.
template <class T>
T loss_rec(const Image<T>& pred, const Mask<T>& mask_pred, const Image<T>& gt, const Mask<T>& mask_gt,
           const FeatureExtractor<T>& fx, const LossConfig& cfg, std::type_identity_t<PredGrad<T>>* grad = nullptr,
           SaliencyState* st = nullptr) {
  detail::require_dims(pred.same_shape(gt) && pred.channels() == 3, "loss_rec: prediction/target shape mismatch");
  detail::require_dims(mask_pred.height() == pred.height() && mask_pred.width() == pred.width() &&
                           mask_gt.height() == pred.height() && mask_gt.width() == pred.width(),
                       "loss_rec: mask size mismatch");
  const Image<T> a = compose(gt, mask_gt), b = compose(pred, mask_pred);
  Image<T> gb;
  T total = detail_loss::perceptual_term(a, b, fx, cfg.saliency_rec, cfg, grad ? &gb : nullptr, st);
  if (grad) detail_loss::compose_backward(pred, mask_pred, gb, grad->rgb, grad->mask);

  if (cfg.rec_l1_fraction > 0.0) {
    const T norm = cfg.mean_normalize ? static_cast<T>(pred.size()) : T(1);
    const T f = static_cast<T>(cfg.rec_l1_fraction);
    T s = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const T r = gt.data()[i] - pred.data()[i];
      s += std::abs(r);
      if (grad) grad->rgb.data()[i] -= f * detail_loss::sign(r) / norm;
    }
    total += f * s / norm;
  }
  return total;
}

/// Reweighted L1 between the soft predicted mask and the ground-truth mask.
template <class T>
T loss_mask(const Mask<T>& mask_pred, const Mask<T>& mask_gt, const LossConfig& cfg, std::type_identity_t<Mask<T>>* grad = nullptr,
            SaliencyState* st = nullptr) {
  detail::require_dims(mask_pred.height() == mask_gt.height() && mask_pred.width() == mask_gt.width(),
                       "loss_mask: size mismatch");
  const std::size_t n = mask_pred.pixels();
  std::vector<T> r(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = mask_gt.data()[i] - mask_pred.data()[i];
    y[i] = std::abs(r[i]);
  }
  const auto band = detail_loss::next_band<T>(y, cfg.saliency_mask, cfg.saliency_enabled, st);
  const T norm = cfg.mean_normalize ? static_cast<T>(n) : T(1);
  T s = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (band[i]) {
      s += y[i];
      if (grad) grad->data()[i] -= detail_loss::sign(r[i]) / norm;
    }
  return s / norm;
}

/// Head bounding box and the padded square window cut around it.
struct HeadWindow {
  Rect bbox;
  Rect window;
};

/// Square around the head bounding box (side = the larger bbox extent,
/// centred on the bbox), grown by round(0.1 * side) on every side, clipped
/// to the image. nullopt when the map has no head pixels.
inline std::optional<HeadWindow> head_window(const SegmentationMap& seg) {
  const auto bb = label_bbox(seg, Label::head);
  if (!bb) return std::nullopt;
  const int side = std::max(bb->width, bb->height);
  const int pad = static_cast<int>(std::lround(0.1 * side));
  const int full = side + 2 * pad;
  const int x0 = bb->x + (bb->width - side) / 2 - pad, y0 = bb->y + (bb->height - side) / 2 - pad;
  const int cx0 = std::max(0, x0), cy0 = std::max(0, y0);
  const int cx1 = std::min(seg.width(), x0 + full), cy1 = std::min(seg.height(), y0 + full);
  return HeadWindow{*bb, Rect{cx0, cy0, cx1 - cx0, cy1 - cy0}};
}

/// Head window resampled (bilinear) to crop_size x crop_size.
template <class T>
std::optional<Image<T>> head_crop(const Image<T>& image, const SegmentationMap& seg, int crop_size) {
  detail::require_dims(image.same_extent(seg.height(), seg.width()), "head_crop: image/segmentation size mismatch");
  const auto hw = head_window(seg);
  if (!hw) return std::nullopt;
  return sample(image, resize_field(hw->window, image.height(), image.width(), crop_size, crop_size));
}

/// Perceptual term on head crops with the head saliency band (no pixel
/// term). Returns nullopt, contributing nothing, when there is no head.
template <class T>
std::optional<T> loss_head(const Image<T>& pred, const Mask<T>& mask_pred, const Image<T>& gt, const Mask<T>& mask_gt,
                           const SegmentationMap& seg, const FeatureExtractor<T>& fx, const LossConfig& cfg,
                           std::type_identity_t<PredGrad<T>>* grad = nullptr, SaliencyState* st = nullptr) {
  detail::require_dims(pred.same_shape(gt) && pred.same_extent(seg.height(), seg.width()),
                       "loss_head: input sizes differ");
  const auto hw = head_window(seg);
  if (!hw) return std::nullopt;
  const int h = pred.height(), w = pred.width(), s = cfg.head_crop_size;
  const WarpField field = resize_field(hw->window, h, w, s, s);
  const Image<T> pc = sample(pred, field), gc = sample(gt, field);
  const Mask<T> mpc(sample(mask_pred.image(), field)), mgc(sample(mask_gt.image(), field));
  const Image<T> a = compose(gc, mgc), b = compose(pc, mpc);
  Image<T> gb;
  const T v = detail_loss::perceptual_term(a, b, fx, cfg.saliency_head, cfg, grad ? &gb : nullptr, st);
  if (grad) {
    Image<T> dpc(s, s, 3);
    Mask<T> dmc(s, s);
    detail_loss::compose_backward(pc, mpc, gb, dpc, dmc);
    const Image<T> dp = sample_backward(dpc, field, h, w);
    const Image<T> dm = sample_backward(dmc.image(), field, h, w);
    for (std::size_t i = 0; i < dp.size(); ++i) grad->rgb.data()[i] += dp.data()[i];
    for (std::size_t i = 0; i < dm.size(); ++i) grad->mask.data()[i] += dm.data()[i];
  }
  return v;
}

/// Plain L1 between the predicted and ground-truth temporal differences.
template <class T>
T loss_temporal(const Image<T>& pred_t, const Image<T>& pred_tm1, const Image<T>& gt_t, const Image<T>& gt_tm1,
                const LossConfig& cfg, std::type_identity_t<Image<T>>* grad_t = nullptr,
                std::type_identity_t<Image<T>>* grad_tm1 = nullptr) {
  detail::require_dims(pred_t.same_shape(pred_tm1) && pred_t.same_shape(gt_t) && pred_t.same_shape(gt_tm1),
                       "loss_temporal: shape mismatch");
  const T norm = cfg.mean_normalize ? static_cast<T>(pred_t.size()) : T(1);
  T s = 0;
  for (std::size_t i = 0; i < pred_t.size(); ++i) {
    const T r = (pred_t.data()[i] - pred_tm1.data()[i]) - (gt_t.data()[i] - gt_tm1.data()[i]);
    s += std::abs(r);
    const T g = detail_loss::sign(r) / norm;
    if (grad_t) grad_t->data()[i] += g;
    if (grad_tm1) grad_tm1->data()[i] -= g;
  }
  return s / norm;
}

struct StereoTerm {
  double value = 0;
  std::size_t valid_pixels = 0;
  bool empty = true;
};

/// L1 between the left prediction and the right prediction warped into the
/// left view, over valid warp pixels only.
template <class T>
StereoTerm loss_stereo(const Image<T>& pred_left, const Image<T>& pred_right, const WarpField& field,
                       const LossConfig& cfg, std::type_identity_t<Image<T>>* grad_left = nullptr,
                       std::type_identity_t<Image<T>>* grad_right = nullptr) {
  detail::require_dims(pred_left.same_shape(pred_right), "loss_stereo: eyes differ in shape");
  const auto wr = warp(pred_right, field);
  const std::size_t valid = wr.valid.count_foreground();
  StereoTerm out{0.0, valid, valid == 0};
  if (valid == 0) return out;
  const int c = pred_left.channels();
  const T norm = cfg.mean_normalize ? static_cast<T>(valid * c) : T(1);
  Image<T> gw(pred_left.height(), pred_left.width(), c);
  T s = 0;
  for (std::size_t p = 0; p < pred_left.pixels(); ++p) {
    if (!(wr.valid.data()[p] > T(0))) continue;
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      const T r = pred_left.data()[i] - wr.image.data()[i];
      s += std::abs(r);
      const T g = detail_loss::sign(r) / norm;
      if (grad_left) grad_left->data()[i] += g;
      gw.data()[i] = -g;
    }
  }
  if (grad_right) {
    const Image<T> gr = warp_backward(gw, field);
    for (std::size_t i = 0; i < gr.size(); ++i) grad_right->data()[i] += gr.data()[i];
  }
  out.value = static_cast<double>(s / norm);
  return out;
}

/// Terms entering combine(); absent optional terms contribute 0 and are flagged.
struct LossTerms {
  double rec = 0;
  double mask = 0;
  std::optional<double> head;
  std::optional<double> temporal;
  std::optional<double> stereo;
  bool stereo_empty = false;
};

inline LossBreakdown combine(const LossTerms& t, const LossConfig& cfg) {
  LossBreakdown b;
  b.rec = t.rec;
  b.mask = t.mask;
  b.head_active = t.head.has_value();
  b.head = t.head.value_or(0.0);
  b.temporal_present = t.temporal.has_value();
  b.temporal = t.temporal.value_or(0.0);
  b.stereo_present = t.stereo.has_value();
  b.stereo = t.stereo.value_or(0.0);
  b.stereo_empty = t.stereo_empty;
  b.total = cfg.w_rec * b.rec + cfg.w_mask * b.mask + cfg.w_head * (b.head_active ? b.head : 0.0) +
            cfg.w_temporal * b.temporal + cfg.w_stereo * b.stereo;
  return b;
}

}  // namespace nrr
