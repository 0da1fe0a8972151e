#pragma once

// Training loop: head-biased random crops, loss-weight calibration, AdamW
// updates, CSV loss log and checkpoints.
//
// Every random draw is keyed by (seed, step, batch slot), so a run is a pure
// function of its configuration and dataset.
//
// Output layout under out_dir:
//   train_log.csv                      step,rec,mask,head,temporal,stereo,total
//   checkpoints/step_<NNNNNNNN>.nrrt
//   checkpoints/latest                 file name of the newest checkpoint

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrr/dataset.hpp"
#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/losses.hpp"
#include "nrr/optim.hpp"
#include "nrr/percept.hpp"
#include "nrr/rng.hpp"
#include "nrr/stereowarp.hpp"
#include "nrr/unet.hpp"

namespace nrr {

struct TrainConfig {
  int crop_min_h = 128, crop_min_w = 128;
  int crop_max_h = 192, crop_max_w = 160;
  double head_crop_probability = 0.75;
  AdamWConfig optim;
  long max_steps = 1000;
  std::uint64_t seed = 1;
  int batch_size = 1;
  long checkpoint_interval = 0;  // 0: initial and final checkpoints only
  int calibrate_batches = 0;     // 0: keep the configured loss weights

  void validate() const {
    for (int v : {crop_min_h, crop_min_w, crop_max_h, crop_max_w})
      detail::require(v >= 16 && v % 16 == 0, "train crop sizes must be positive multiples of 16");
    detail::require(crop_min_h <= crop_max_h && crop_min_w <= crop_max_w, "train.crop_min must not exceed crop_max");
    detail::require(head_crop_probability >= 0.0 && head_crop_probability <= 1.0,
                    "train.head_crop_probability must be in [0,1]");
    detail::require(max_steps >= 0, "train.max_steps must be >= 0");
    detail::require(batch_size >= 1, "train.batch_size must be >= 1");
    detail::require(checkpoint_interval >= 0, "train.checkpoint_interval must be >= 0");
    detail::require(calibrate_batches >= 0, "train.calibrate_batches must be >= 0");
    optim.validate();
  }
};

// ---------------------------------------------------------------------------
// Crops

template <class T>
struct CropResult {
  TrainingSample<T> sample;
  Rect window;
  bool head_active = false;
  bool fallback = false;  // head did not fit in crop_max
};

/// The same window applied to every companion of a sample (one prev level).
template <class T>
TrainingSample<T> crop_sample(const TrainingSample<T>& s, const Rect& r) {
  TrainingSample<T> out;
  out.input_left = crop(s.input_left, r);
  if (s.input_right) out.input_right = crop(*s.input_right, r);
  out.gt_left = crop(s.gt_left, r);
  out.seg_left = crop(s.seg_left, r);
  if (s.depth_right) out.depth_right = crop(*s.depth_right, r);
  out.subject = s.subject;
  out.sequence_id = s.sequence_id;
  out.frame_index = s.frame_index;
  if (s.prev) {
    auto p = std::make_shared<TrainingSample<T>>(crop_sample(*s.prev, r));
    p->prev.reset();
    out.prev = std::move(p);
  }
  return out;
}

namespace detail_train {

inline int pick_multiple_of_16(Rng& rng, int lo, int hi) {
  return 16 * uniform_int(rng, lo / 16, hi / 16);
}

inline int round_up_16(int v) { return (v + 15) / 16 * 16; }

}  // namespace detail_train

/// Random crop window. With probability head_crop_probability (and a head
/// present) the window contains the whole head bounding box.
template <class T>
CropResult<T> sample_crop(const TrainingSample<T>& s, const TrainConfig& cfg, Rng& rng) {
  const int h = s.gt_left.height(), w = s.gt_left.width();
  detail::require_dims(h >= cfg.crop_min_h && w >= cfg.crop_min_w,
                       "sample_crop: image " + std::to_string(h) + "x" + std::to_string(w) +
                           " is smaller than crop_min " + std::to_string(cfg.crop_min_h) + "x" +
                           std::to_string(cfg.crop_min_w));
  const int max_h = std::min(cfg.crop_max_h, h / 16 * 16), max_w = std::min(cfg.crop_max_w, w / 16 * 16);
  int ch = detail_train::pick_multiple_of_16(rng, cfg.crop_min_h, max_h);
  int cw = detail_train::pick_multiple_of_16(rng, cfg.crop_min_w, max_w);
  const bool want_head = uniform(rng, 0.0, 1.0) < cfg.head_crop_probability;
  const auto bb = label_bbox(s.seg_left, Label::head);

  CropResult<T> r;
  if (want_head && bb) {
    ch = std::max(ch, detail_train::round_up_16(bb->height));
    cw = std::max(cw, detail_train::round_up_16(bb->width));
    r.head_active = true;
    if (ch > max_h || cw > max_w) {
      ch = max_h;
      cw = max_w;
      r.fallback = true;
      const int cx = bb->x + bb->width / 2, cy = bb->y + bb->height / 2;
      r.window = Rect{std::clamp(cx - cw / 2, 0, w - cw), std::clamp(cy - ch / 2, 0, h - ch), cw, ch};
    } else {
      const int x = uniform_int(rng, std::max(0, bb->x + bb->width - cw), std::min(bb->x, w - cw));
      const int y = uniform_int(rng, std::max(0, bb->y + bb->height - ch), std::min(bb->y, h - ch));
      r.window = Rect{x, y, cw, ch};
    }
  } else {
    r.window = Rect{uniform_int(rng, 0, w - cw), uniform_int(rng, 0, h - ch), cw, ch};
  }
  r.sample = crop_sample(s, r.window);
  return r;
}

// ---------------------------------------------------------------------------
// One loss evaluation

template <class T>
struct StepTerms {
  LossBreakdown breakdown;
  bool head_fallback = false;
};

namespace detail_train {

template <class T>
void axpy(std::span<T> dst, std::span<const T> src, double a) {
  const T s = static_cast<T>(a);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace detail_train

/// Forward passes, all applicable terms, and (when `grads` is non-null)
/// the weighted backward pass accumulated into `grads`. Terms with zero
/// weight are not evaluated.
template <class T>
LossBreakdown loss_step(const Model<T>& model, const FeatureExtractor<T>& fx, const TrainingSample<T>& s,
                        bool head_active, const LossConfig& cfg, double focal, double baseline,
                        Model<T>* grads = nullptr) {
  using detail_train::axpy;
  const int h = s.gt_left.height(), w = s.gt_left.width();
  const Mask<T> mask_gt = mask_from_segmentation<T>(s.seg_left);
  const bool want_grad = grads != nullptr;

  ForwardCache<T> cache_l;
  const auto pl = to_prediction(forward_planes(model, s.input_left, want_grad ? &cache_l : nullptr));
  PredGrad<T> gl(h, w);
  LossTerms terms;

  if (cfg.w_rec > 0.0) {
    PredGrad<T> g(h, w);
    terms.rec = loss_rec(pl.rgb, pl.mask, s.gt_left, mask_gt, fx, cfg, want_grad ? &g : nullptr);
    axpy(gl.rgb.data(), std::span<const T>(g.rgb.data()), cfg.w_rec);
    axpy(gl.mask.data(), std::span<const T>(g.mask.data()), cfg.w_rec);
  }
  if (cfg.w_mask > 0.0) {
    Mask<T> g(h, w);
    terms.mask = loss_mask(pl.mask, mask_gt, cfg, want_grad ? &g : nullptr);
    axpy(gl.mask.data(), std::span<const T>(g.data()), cfg.w_mask);
  }
  if (cfg.w_head > 0.0 && head_active) {
    PredGrad<T> g(h, w);
    const auto v = loss_head(pl.rgb, pl.mask, s.gt_left, mask_gt, s.seg_left, fx, cfg, want_grad ? &g : nullptr);
    if (v) {
      terms.head = *v;
      axpy(gl.rgb.data(), std::span<const T>(g.rgb.data()), cfg.w_head);
      axpy(gl.mask.data(), std::span<const T>(g.mask.data()), cfg.w_head);
    }
  }

  ForwardCache<T> cache_p, cache_r;
  Image<T> g_prev, g_right;
  if (cfg.w_temporal > 0.0 && s.prev) {
    const auto pp = to_prediction(forward_planes(model, s.prev->input_left, want_grad ? &cache_p : nullptr));
    Image<T> gt(h, w, 3), gtm1(h, w, 3);
    terms.temporal =
        loss_temporal(pl.rgb, pp.rgb, s.gt_left, s.prev->gt_left, cfg, want_grad ? &gt : nullptr, &gtm1);
    axpy(gl.rgb.data(), std::span<const T>(gt.data()), cfg.w_temporal);
    g_prev = Image<T>(h, w, 3);
    axpy(g_prev.data(), std::span<const T>(gtm1.data()), cfg.w_temporal);
  }
  if (cfg.w_stereo > 0.0 && s.has_stereo()) {
    const auto pr = to_prediction(forward_planes(model, *s.input_right, want_grad ? &cache_r : nullptr));
    const WarpField field = warp_field_from_depth(*s.depth_right, focal, baseline);
    Image<T> gsl(h, w, 3), gsr(h, w, 3);
    const StereoTerm st = loss_stereo(pl.rgb, pr.rgb, field, cfg, &gsl, &gsr);
    terms.stereo = st.value;
    terms.stereo_empty = st.empty;
    axpy(gl.rgb.data(), std::span<const T>(gsl.data()), cfg.w_stereo);
    g_right = Image<T>(h, w, 3);
    axpy(g_right.data(), std::span<const T>(gsr.data()), cfg.w_stereo);
  }

  const LossBreakdown b = combine(terms, cfg);
  if (want_grad) {
    backward(model, cache_l, output_gradient(gl.rgb, gl.mask), *grads);
    if (g_prev.size() > 0) backward(model, cache_p, output_gradient(g_prev, Mask<T>(h, w)), *grads);
    if (g_right.size() > 0) backward(model, cache_r, output_gradient(g_right, Mask<T>(h, w)), *grads);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Calibration

struct Calibration {
  LossConfig loss;
  std::array<double, 5> medians{};      // rec, mask, head, temporal, stereo
  std::array<bool, 5> kept_unit{};      // zero or never-observed magnitude
  double reference = 0.0;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Weights from observed term magnitudes: w_i = reference / median_i where
/// the reference is the median of the non-zero term medians. Terms whose
/// weight is 0 in `base` stay disabled.
inline Calibration calibrate_from_samples(const std::array<std::vector<double>, 5>& samples, const LossConfig& base) {
  Calibration c;
  c.loss = base;
  std::array<double*, 5> w = {&c.loss.w_rec, &c.loss.w_mask, &c.loss.w_head, &c.loss.w_temporal, &c.loss.w_stereo};
  std::vector<double> nonzero;
  for (int i = 0; i < 5; ++i) {
    c.medians[i] = median_of(samples[i]);
    if (*w[i] > 0.0 && c.medians[i] > 0.0) nonzero.push_back(c.medians[i]);
  }
  c.reference = median_of(nonzero);
  for (int i = 0; i < 5; ++i) {
    if (*w[i] == 0.0) continue;
    if (c.medians[i] > 0.0) {
      *w[i] = c.reference / c.medians[i];
    } else {
      *w[i] = 1.0;
      c.kept_unit[i] = true;
    }
  }
  return c;
}

/// Runs `batches` crops through the model with unit weights and derives
/// balanced weights from the per-term medians.
template <class T>
Calibration calibrate_weights(const Model<T>& model, const Dataset<T>& ds, const FeatureExtractor<T>& fx,
                              const LossConfig& base, const TrainConfig& tc, int batches) {
  detail::require(!ds.samples.empty(), "calibrate_weights: empty dataset");
  detail::require(batches >= 1, "calibrate_weights: need at least one batch");
  LossConfig unit = base;
  for (double* w : {&unit.w_rec, &unit.w_mask, &unit.w_head, &unit.w_temporal, &unit.w_stereo})
    if (*w > 0.0) *w = 1.0;
  std::array<std::vector<double>, 5> seen;
  for (int k = 0; k < batches; ++k) {
    auto rng = make_rng({tc.seed, 0xCA11ULL, static_cast<std::uint64_t>(k)});
    const auto& s = *ds.samples[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ds.size()) - 1))];
    const auto c = sample_crop(s, tc, rng);
    const auto b = loss_step(model, fx, c.sample, c.head_active, unit, ds.focal, ds.baseline);
    seen[0].push_back(b.rec);
    seen[1].push_back(b.mask);
    if (b.head_active) seen[2].push_back(b.head);
    if (b.temporal_present) seen[3].push_back(b.temporal);
    if (b.stereo_present && !b.stereo_empty) seen[4].push_back(b.stereo);
  }
  return calibrate_from_samples(seen, base);
}

// ---------------------------------------------------------------------------
// Training

inline std::string format_log_row(long step, const LossBreakdown& b) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", step, b.rec, b.mask, b.head, b.temporal,
                b.stereo, b.total);
  return buf;
}

inline constexpr const char* kLogHeader = "step,rec,mask,head,temporal,stereo,total";

struct TrainResult {
  Model<float> model;
  LossConfig loss;  // weights actually used (after calibration)
  std::optional<Calibration> calibration;
  std::vector<LossBreakdown> log;
  std::filesystem::path last_checkpoint;
  long head_fallbacks = 0;
};

inline std::string checkpoint_name(long step) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step_%08ld.nrrt", step);
  return buf;
}

/// Resolves the newest checkpoint of a training directory (or returns the
/// path itself when it names a file).
inline std::filesystem::path resolve_checkpoint(const std::filesystem::path& p) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(p)) return p;
  for (const fs::path dir : {p / "checkpoints", p}) {
    std::ifstream in(dir / "latest");
    std::string name;
    if (in && std::getline(in, name) && !name.empty()) return dir / name;
  }
  throw IoError("no checkpoint found at " + p.string());
}

struct TrainHooks {
  std::function<void(long, const LossBreakdown&)> on_step;
};

/// Trains a model from scratch. With an empty out_dir nothing is written.
inline TrainResult train(const Dataset<float>& ds, const ArchConfig& arch, const LossConfig& loss_cfg,
                         const TrainConfig& tc, const FeatureExtractor<float>& fx,
                         const std::filesystem::path& out_dir = {}, const TrainHooks& hooks = {}) {
  namespace fs = std::filesystem;
  arch.validate();
  loss_cfg.validate();
  tc.validate();
  detail::require(!ds.samples.empty(), "train: dataset has no samples");
  const std::uint64_t fx_hash = fx.parameter_hash();

  TrainResult r;
  r.model = build<float>(arch);
  r.loss = loss_cfg;
  if (tc.calibrate_batches > 0) {
    r.calibration = calibrate_weights(r.model, ds, fx, loss_cfg, tc, tc.calibrate_batches);
    r.loss = r.calibration->loss;
  }

  const bool write = !out_dir.empty();
  std::ofstream log;
  const fs::path ckdir = out_dir / "checkpoints";
  auto save = [&](long step) {
    if (!write) return;
    nlohmann::json extra = {{"step", step},
                            {"seed", tc.seed},
                            {"loss_weights",
                             {r.loss.w_rec, r.loss.w_mask, r.loss.w_head, r.loss.w_temporal, r.loss.w_stereo}}};
    const fs::path path = ckdir / checkpoint_name(step);
    save_checkpoint(path, r.model, extra);
    const fs::path tmp = ckdir / "latest.tmp";
    {
      std::ofstream m(tmp, std::ios::trunc);
      m << path.filename().string() << "\n";
      if (!m) throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, ckdir / "latest");
    r.last_checkpoint = path;
  };
  if (write) {
    fs::create_directories(ckdir);
    log.open(out_dir / "train_log.csv", std::ios::trunc);
    if (!log) throw IoError("cannot write " + (out_dir / "train_log.csv").string());
    log << kLogHeader << "\n";
  }
  save(0);

  AdamW<float> opt(r.model, tc.optim);
  Model<float> grads = r.model.zeros_like();
  for (long step = 1; step <= tc.max_steps; ++step) {
    for (auto& l : grads.layers) l.zero();
    LossTerms mean;
    mean.temporal = 0.0;
    mean.stereo = 0.0;
    bool any_head = false, any_temporal = false, any_stereo = false, all_empty = true;
    double head_sum = 0;
    for (int b = 0; b < tc.batch_size; ++b) {
      auto rng = make_rng({tc.seed, 0x57E9ULL, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)});
      const auto& s = *ds.samples[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ds.size()) - 1))];
      const auto c = sample_crop(s, tc, rng);
      r.head_fallbacks += c.fallback;
      const auto bd = loss_step(r.model, fx, c.sample, c.head_active, r.loss, ds.focal, ds.baseline, &grads);
      mean.rec += bd.rec;
      mean.mask += bd.mask;
      head_sum += bd.head_active ? bd.head : 0.0;
      any_head |= bd.head_active;
      *mean.temporal += bd.temporal;
      any_temporal |= bd.temporal_present;
      *mean.stereo += bd.stereo;
      any_stereo |= bd.stereo_present;
      all_empty &= !bd.stereo_present || bd.stereo_empty;
    }
    const double inv = 1.0 / tc.batch_size;
    mean.rec *= inv;
    mean.mask *= inv;
    if (any_head) mean.head = head_sum * inv;
    if (any_temporal) *mean.temporal *= inv; else mean.temporal.reset();
    if (any_stereo) *mean.stereo *= inv; else mean.stereo.reset();
    mean.stereo_empty = any_stereo && all_empty;
    const LossBreakdown bd = combine(mean, r.loss);

    bool finite = std::isfinite(bd.total);
    for (auto& l : grads.layers) {
      for (auto& v : l.weight) {
        v *= static_cast<float>(inv);
        finite &= std::isfinite(v);
      }
      for (auto& v : l.bias) {
        v *= static_cast<float>(inv);
        finite &= std::isfinite(v);
      }
    }
    if (!finite)
      throw NumericError("non-finite loss or gradient at step " + std::to_string(step) + "; last good checkpoint: " +
                         (r.last_checkpoint.empty() ? std::string("none") : r.last_checkpoint.string()));
    opt.step(r.model, grads);
    r.log.push_back(bd);
    if (write) log << format_log_row(step, bd) << "\n";
    if (hooks.on_step) hooks.on_step(step, bd);
    if (tc.checkpoint_interval > 0 && step % tc.checkpoint_interval == 0 && step != tc.max_steps) save(step);
  }
  if (tc.max_steps > 0) save(tc.max_steps);
  if (write) {
    log.flush();
    if (!log) throw IoError("failed writing the training log");
  }
  if (fx.parameter_hash() != fx_hash) throw NumericError("feature extractor parameters changed during training");
  return r;
}

}  // namespace nrr
