#pragma once

// Masked evaluation, ablation table and forward-pass timing.
//
// Every image metric compares M_gt * I_gt against either the prediction
// composed with its own clamped soft mask or, for the rendered_input
// column, the degraded input itself (its background is already zero).
//
// Report CSV (long format, one row per sample plus one "mean" row per
// split and variant):
//   split,variant,sample,photometric_l1,psnr_db,ms_ssim,perceptual,
//   boundary_l1,temporal_residual,stereo_residual
// Not-applicable values are written as nan.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrr/dataset.hpp"
#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/losses.hpp"
#include "nrr/metrics.hpp"
#include "nrr/percept.hpp"
#include "nrr/stereowarp.hpp"
#include "nrr/trainkit.hpp"
#include "nrr/unet.hpp"

namespace nrr {

inline constexpr const char* kRenderedInput = "rendered_input";

/// Ablation variants in table order.
enum class Variant { proposed, no_head, no_mask, no_saliency, no_stereo, no_temporal };

inline const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::proposed,    Variant::no_head,   Variant::no_mask,
                                         Variant::no_saliency, Variant::no_stereo, Variant::no_temporal};
  return v;
}

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::proposed: return "proposed";
    case Variant::no_head: return "-head";
    case Variant::no_mask: return "-mask";
    case Variant::no_saliency: return "-saliency";
    case Variant::no_stereo: return "-stereo";
    case Variant::no_temporal: return "-temporal";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : all_variants())
    if (to_string(v) == s) return v;
  throw ValidationError("unknown variant '" + s + "'");
}

/// The full loss with exactly one component switched off.
inline LossConfig apply_variant(LossConfig c, Variant v) {
  switch (v) {
    case Variant::proposed: break;
    case Variant::no_head: c.w_head = 0.0; break;
    case Variant::no_mask: c.w_mask = 0.0; break;
    case Variant::no_saliency: c.saliency_enabled = false; break;
    case Variant::no_stereo: c.w_stereo = 0.0; break;
    case Variant::no_temporal: c.w_temporal = 0.0; break;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Report

struct SampleMetrics {
  std::string id;
  double photometric_l1 = 0, psnr_db = 0, ms_ssim = 0, perceptual = 0, boundary_l1 = 0;
  double temporal_residual = std::numeric_limits<double>::quiet_NaN();
  double stereo_residual = std::numeric_limits<double>::quiet_NaN();
};

namespace detail_eval {

inline bool same_value(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline bool same(const SampleMetrics& a, const SampleMetrics& b) {
  return a.id == b.id && same_value(a.photometric_l1, b.photometric_l1) && same_value(a.psnr_db, b.psnr_db) &&
         same_value(a.ms_ssim, b.ms_ssim) && same_value(a.perceptual, b.perceptual) &&
         same_value(a.boundary_l1, b.boundary_l1) && same_value(a.temporal_residual, b.temporal_residual) &&
         same_value(a.stereo_residual, b.stereo_residual);
}

/// Mean over non-nan values; nan when there are none.
inline double mean_defined(const std::vector<double>& v) {
  double s = 0;
  std::size_t n = 0;
  for (double x : v)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail_eval

/// One variant evaluated on one split.
struct MetricsColumn {
  std::string variant;
  std::string split;
  std::vector<SampleMetrics> samples;

  /// Per-metric means over samples (psnr is +inf if any sample is identical).
  SampleMetrics aggregate() const {
    using detail_eval::mean_defined;
    SampleMetrics m;
    m.id = "mean";
    std::vector<double> v[8];
    for (const auto& s : samples) {
      v[0].push_back(s.photometric_l1);
      v[1].push_back(s.psnr_db);
      v[2].push_back(s.ms_ssim);
      v[3].push_back(s.perceptual);
      v[4].push_back(s.boundary_l1);
      v[5].push_back(s.temporal_residual);
      v[6].push_back(s.stereo_residual);
    }
    m.photometric_l1 = mean_defined(v[0]);
    m.psnr_db = mean_defined(v[1]);
    m.ms_ssim = mean_defined(v[2]);
    m.perceptual = mean_defined(v[3]);
    m.boundary_l1 = mean_defined(v[4]);
    m.temporal_residual = mean_defined(v[5]);
    m.stereo_residual = mean_defined(v[6]);
    return m;
  }

  bool operator==(const MetricsColumn& o) const {
    if (variant != o.variant || split != o.split || samples.size() != o.samples.size()) return false;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (!detail_eval::same(samples[i], o.samples[i])) return false;
    return true;
  }
};

struct MetricsReport {
  std::string percept_profile = "test";
  std::vector<MetricsColumn> columns;

  const MetricsColumn* find(const std::string& variant, const std::string& split) const {
    for (const auto& c : columns)
      if (c.variant == variant && c.split == split) return &c;
    return nullptr;
  }

  std::vector<std::string> variants() const {
    std::vector<std::string> v;
    for (const auto& c : columns)
      if (std::find(v.begin(), v.end(), c.variant) == v.end()) v.push_back(c.variant);
    return v;
  }

  bool operator==(const MetricsReport&) const = default;
};

namespace detail_eval {

inline constexpr const char* kCsvHeader =
    "split,variant,sample,photometric_l1,psnr_db,ms_ssim,perceptual,boundary_l1,temporal_residual,stereo_residual";

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_num(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError("bad number '" + s + "' in metrics CSV");
  }
  if (used != s.size()) throw IoError("bad number '" + s + "' in metrics CSV");
  return v;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string row(const std::string& split, const std::string& variant, const SampleMetrics& m) {
  return split + "," + variant + "," + m.id + "," + num(m.photometric_l1) + "," + num(m.psnr_db) + "," +
         num(m.ms_ssim) + "," + num(m.perceptual) + "," + num(m.boundary_l1) + "," + num(m.temporal_residual) + "," +
         num(m.stereo_residual);
}

inline nlohmann::json metrics_json(const SampleMetrics& m) {
  auto j = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(num(v)); };
  return {{"id", m.id},
          {"photometric_l1", j(m.photometric_l1)},
          {"psnr_db", j(m.psnr_db)},
          {"ms_ssim", j(m.ms_ssim)},
          {"perceptual", j(m.perceptual)},
          {"boundary_l1", j(m.boundary_l1)},
          {"temporal_residual", j(m.temporal_residual)},
          {"stereo_residual", j(m.stereo_residual)}};
}

inline SampleMetrics metrics_from_json(const nlohmann::json& j) {
  auto v = [&](const char* k) {
    const auto& x = j.at(k);
    return x.is_string() ? parse_num(x.get<std::string>()) : x.get<double>();
  };
  SampleMetrics m;
  m.id = j.at("id").get<std::string>();
  m.photometric_l1 = v("photometric_l1");
  m.psnr_db = v("psnr_db");
  m.ms_ssim = v("ms_ssim");
  m.perceptual = v("perceptual");
  m.boundary_l1 = v("boundary_l1");
  m.temporal_residual = v("temporal_residual");
  m.stereo_residual = v("stereo_residual");
  return m;
}

}  // namespace detail_eval

/// Per-sample rows followed by the aggregate row of each column. The
/// percept profile travels in a leading comment line.
inline std::string to_csv(const MetricsReport& r) {
  std::string out = "# percept_profile=" + r.percept_profile + "\n" + detail_eval::kCsvHeader + "\n";
  for (const auto& c : r.columns) {
    for (const auto& s : c.samples) out += detail_eval::row(c.split, c.variant, s) + "\n";
    out += detail_eval::row(c.split, c.variant, c.aggregate()) + "\n";
  }
  return out;
}

inline MetricsReport report_from_csv(const std::string& text) {
  using detail_eval::parse_num;
  MetricsReport r;
  std::stringstream ss(text);
  std::string line;
  bool header = false;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    if (line.rfind("# percept_profile=", 0) == 0) {
      r.percept_profile = line.substr(18);
      continue;
    }
    if (!header) {
      if (line != detail_eval::kCsvHeader) throw IoError("metrics CSV: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto cells = detail_eval::split_csv(line);
    if (cells.size() != 10) throw IoError("metrics CSV: expected 10 cells, got " + std::to_string(cells.size()));
    MetricsColumn* col = nullptr;
    for (auto& c : r.columns)
      if (c.split == cells[0] && c.variant == cells[1]) col = &c;
    if (!col) {
      r.columns.push_back(MetricsColumn{cells[1], cells[0], {}});
      col = &r.columns.back();
    }
    if (cells[2] == "mean") continue;  // derived
    SampleMetrics m;
    m.id = cells[2];
    m.photometric_l1 = parse_num(cells[3]);
    m.psnr_db = parse_num(cells[4]);
    m.ms_ssim = parse_num(cells[5]);
    m.perceptual = parse_num(cells[6]);
    m.boundary_l1 = parse_num(cells[7]);
    m.temporal_residual = parse_num(cells[8]);
    m.stereo_residual = parse_num(cells[9]);
    col->samples.push_back(std::move(m));
  }
  if (!header) throw IoError("metrics CSV: missing header");
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : r.columns) {
    nlohmann::json s = nlohmann::json::array();
    for (const auto& m : c.samples) s.push_back(detail_eval::metrics_json(m));
    cols.push_back({{"variant", c.variant},
                    {"split", c.split},
                    {"aggregate", detail_eval::metrics_json(c.aggregate())},
                    {"samples", s}});
  }
  return {{"percept_profile", r.percept_profile}, {"columns", cols}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.percept_profile = j.at("percept_profile").get<std::string>();
  for (const auto& c : j.at("columns")) {
    MetricsColumn col{c.at("variant").get<std::string>(), c.at("split").get<std::string>(), {}};
    for (const auto& s : c.at("samples")) col.samples.push_back(detail_eval::metrics_from_json(s));
    r.columns.push_back(std::move(col));
  }
  return r;
}

/// Table 1 layout: one row per (split, metric), one column per variant.
inline std::string to_table_csv(const MetricsReport& r) {
  const auto variants = r.variants();
  std::vector<std::string> splits;
  for (const auto& c : r.columns)
    if (std::find(splits.begin(), splits.end(), c.split) == splits.end()) splits.push_back(c.split);
  std::string out = "split,metric";
  for (const auto& v : variants) out += "," + v;
  out += "\n";
  const char* names[] = {"photometric_l1", "psnr_db", "ms_ssim", "perceptual", "boundary_l1", "temporal_residual",
                         "stereo_residual"};
  for (const auto& sp : splits)
    for (int k = 0; k < 7; ++k) {
      out += sp + "," + names[k];
      for (const auto& v : variants) {
        const auto* c = r.find(v, sp);
        double x = std::numeric_limits<double>::quiet_NaN();
        if (c) {
          const auto a = c->aggregate();
          const double vals[] = {a.photometric_l1, a.psnr_db,           a.ms_ssim,        a.perceptual,
                                 a.boundary_l1,    a.temporal_residual, a.stereo_residual};
          x = vals[k];
        }
        out += "," + detail_eval::num(x);
      }
      out += "\n";
    }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  int boundary_radius = 2;  // Chebyshev radius of the mask boundary band
};

/// Pixels within `radius` of a change in the binary ground-truth mask.
template <class T>
std::vector<std::uint8_t> boundary_band(const Mask<T>& m, int radius) {
  const int h = m.height(), w = m.width();
  std::vector<std::uint8_t> band(m.pixels(), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool fg = m(y, x) >= T(0.5);
      bool edge = false;
      for (int dy = -radius; dy <= radius && !edge; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          if ((m(yy, xx) >= T(0.5)) != fg) {
            edge = true;
            break;
          }
        }
      band[static_cast<std::size_t>(y) * w + x] = edge;
    }
  return band;
}

/// Mean absolute error over the band pixels (all channels); nan if empty.
template <class T>
double band_l1(const Image<T>& a, const Image<T>& b, const std::vector<std::uint8_t>& band) {
  double s = 0;
  std::size_t n = 0;
  const int c = a.channels();
  for (std::size_t p = 0; p < band.size(); ++p) {
    if (!band[p]) continue;
    for (int k = 0; k < c; ++k) s += std::abs(static_cast<double>(a.data()[p * c + k]) - b.data()[p * c + k]);
    n += static_cast<std::size_t>(c);
  }
  return n ? s / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

/// Sum over stages of the per-element mean absolute feature difference.
template <class T>
double perceptual_distance(const Image<T>& a, const Image<T>& b, const FeatureExtractor<T>& fx) {
  const auto fa = fx.extract(a), fb = fx.extract(b);
  double total = 0;
  for (int s = 0; s < kFeatureStages; ++s) {
    double acc = 0;
    for (std::size_t i = 0; i < fa[s].data.size(); ++i) acc += std::abs(static_cast<double>(fa[s].data[i]) - fb[s].data[i]);
    total += acc / static_cast<double>(fa[s].data.size());
  }
  return total;
}

template <class T>
Image<T> clamp01(Image<T> im) {
  for (auto& v : im.data()) v = std::clamp(v, T(0), T(1));
  return im;
}

namespace detail_eval {

/// Images scored for one sample.
template <class T>
struct Views {
  Image<T> left, right;  // raw predictions (or inputs)
  Image<T> shown;        // what a viewer sees: composite or rendered input
};

template <class T>
SampleMetrics score(const TrainingSample<T>& s, const Views<T>& v, const Views<T>* prev, const Dataset<T>& ds,
                    const FeatureExtractor<T>& fx, const EvalOptions& opt, const std::string& id) {
  const Mask<T> m_gt = mask_from_segmentation<T>(s.seg_left);
  const Image<T> target = compose(s.gt_left, m_gt);
  SampleMetrics m;
  m.id = id;
  m.photometric_l1 = photometric_l1(v.shown, target);
  m.psnr_db = psnr(v.shown, target).db;
  m.ms_ssim = ms_ssim(v.shown, target);
  m.perceptual = perceptual_distance(v.shown, target, fx);
  m.boundary_l1 = band_l1(v.shown, target, boundary_band(m_gt, opt.boundary_radius));
  LossConfig plain;
  plain.mean_normalize = true;
  if (prev && s.prev) m.temporal_residual = loss_temporal(v.left, prev->left, s.gt_left, s.prev->gt_left, plain);
  if (s.has_stereo() && v.right.size() > 0) {
    const auto st = loss_stereo(v.left, v.right, warp_field_from_depth(*s.depth_right, ds.focal, ds.baseline), plain);
    if (!st.empty) m.stereo_residual = st.value;
  }
  return m;
}

template <class T>
std::string sample_id(const TrainingSample<T>& s) {
  return s.subject + "/" + s.sequence_id + "/" + std::to_string(s.frame_index);
}

template <class T>
MetricsColumn run_column(const Dataset<T>& ds, const std::string& split, const std::string& variant,
                         const FeatureExtractor<T>& fx, const EvalOptions& opt,
                         const std::function<Views<T>(const TrainingSample<T>&)>& view_of) {
  MetricsColumn col{variant, split, {}};
  std::map<const TrainingSample<T>*, Views<T>> views;
  for (const auto& sp : ds.samples) views.emplace(sp.get(), view_of(*sp));
  for (const auto& sp : ds.samples) {
    const Views<T>* prev = nullptr;
    if (sp->prev) {
      auto it = views.find(sp->prev.get());
      if (it != views.end()) prev = &it->second;
    }
    col.samples.push_back(score(*sp, views.at(sp.get()), prev, ds, fx, opt, sample_id(*sp)));
  }
  return col;
}

}  // namespace detail_eval

/// Metrics of a model's composites on a split.
template <class T>
MetricsColumn evaluate(const Model<T>& model, const Dataset<T>& ds, const FeatureExtractor<T>& fx,
                       const std::string& split, const std::string& variant = "proposed",
                       const EvalOptions& opt = {}) {
  return detail_eval::run_column<T>(ds, split, variant, fx, opt, [&](const TrainingSample<T>& s) {
    detail_eval::Views<T> v;
    const auto p = forward(model, s.input_left);
    v.left = p.rgb;
    v.shown = compose(clamp01(p.rgb), Mask<T>(clamp01(p.mask.image())));
    if (s.input_right) v.right = forward(model, *s.input_right).rgb;
    return v;
  });
}

/// The rendered_input column: the degraded inputs scored as they are.
template <class T>
MetricsColumn evaluate_inputs(const Dataset<T>& ds, const FeatureExtractor<T>& fx, const std::string& split,
                              const EvalOptions& opt = {}) {
  return detail_eval::run_column<T>(ds, split, kRenderedInput, fx, opt, [&](const TrainingSample<T>& s) {
    detail_eval::Views<T> v;
    v.left = s.input_left;
    v.shown = s.input_left;
    if (s.input_right) v.right = *s.input_right;
    return v;
  });
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationSetup {
  ArchConfig arch;
  LossConfig loss;
  TrainConfig train;
  EvalOptions eval;
};

struct NamedSplit {
  std::string name;
  const Dataset<float>* data;
};

/// Trains one model per variant from the same seed and scores each on the
/// evaluation splits, followed by the rendered_input column.
inline MetricsReport ablation_run(const Dataset<float>& train_ds, const std::vector<NamedSplit>& eval_splits,
                                  const AblationSetup& setup, const std::vector<Variant>& variants,
                                  const FeatureExtractor<float>& fx, const std::filesystem::path& out_dir = {},
                                  const std::function<void(const std::string&)>& progress = {}) {
  MetricsReport r;
  r.percept_profile = fx.config().profile;
  for (Variant v : variants) {
    if (progress) progress("training variant " + to_string(v));
    const LossConfig lc = apply_variant(setup.loss, v);
    const auto dir = out_dir.empty() ? out_dir : out_dir / ("variant_" + to_string(v));
    const TrainResult tr = train(train_ds, setup.arch, lc, setup.train, fx, dir);
    for (const auto& sp : eval_splits) r.columns.push_back(evaluate(tr.model, *sp.data, fx, sp.name, to_string(v), setup.eval));
  }
  for (const auto& sp : eval_splits) r.columns.push_back(evaluate_inputs(*sp.data, fx, sp.name, setup.eval));
  return r;
}

// ---------------------------------------------------------------------------
// Timing

struct BlockTiming {
  std::string block;
  double ms = 0;       // mean per forward pass
  double percent = 0;  // share of the summed block time
};

struct BenchReport {
  int height = 0, width = 0, repetitions = 0;
  std::vector<BlockTiming> blocks;
  double total_ms = 0;      // mean wall time of one forward pass
  double stereo_pair_ms = 0;
  double encoder_percent = 0, bottleneck_percent = 0, decoder_percent = 0;
};

inline std::string block_of(const std::string& layer) { return layer.substr(0, layer.find('.')); }

/// Times `repetitions` forward passes after `warmup` untimed ones.
template <class T>
BenchReport bench_forward(const Model<T>& model, int height, int width, int repetitions, int warmup = 1) {
  detail::require(repetitions >= 1, "bench: repetitions must be >= 1");
  Image<T> input(height, width, 3, T(0.5));
  for (int i = 0; i < warmup; ++i) forward_planes(model, input);
  LayerTimes times;
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();
  for (int i = 0; i < repetitions; ++i) forward_planes(model, input, nullptr, &times);
  const double wall = std::chrono::duration<double, std::milli>(clock::now() - t0).count() / repetitions;

  BenchReport r{height, width, repetitions, {}, wall, 2 * wall, 0, 0, 0};
  double sum = 0;
  for (std::size_t li = 0; li < model.names.size(); ++li) {
    const std::string b = block_of(model.names[li]);
    const double ms = 1000.0 * times.seconds[li] / repetitions;
    if (r.blocks.empty() || r.blocks.back().block != b) r.blocks.push_back({b, 0, 0});
    r.blocks.back().ms += ms;
    sum += ms;
  }
  for (auto& b : r.blocks) {
    b.percent = sum > 0 ? 100.0 * b.ms / sum : 0.0;
    if (b.block == "enc0" || b.block.rfind("down", 0) == 0)
      r.encoder_percent += b.percent;
    else if (b.block == "bottleneck")
      r.bottleneck_percent += b.percent;
    else
      r.decoder_percent += b.percent;
  }
  return r;
}

inline nlohmann::json to_json(const BenchReport& r) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : r.blocks) blocks.push_back({{"block", b.block}, {"ms", b.ms}, {"percent", b.percent}});
  return {{"height", r.height},
          {"width", r.width},
          {"repetitions", r.repetitions},
          {"forward_ms", r.total_ms},
          {"stereo_pair_ms", r.stereo_pair_ms},
          {"encoder_percent", r.encoder_percent},
          {"bottleneck_percent", r.bottleneck_percent},
          {"decoder_percent", r.decoder_percent},
          {"blocks", blocks}};
}

}  // namespace nrr
