#pragma once

// Procedural "performer" frames used as clean sources when no captured data
// is available: a torso with arms and a head in front of a textured backdrop,
// swaying over time, with per-pixel labels and metric depth.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>

#include "nrr/image.hpp"
#include "nrr/png_io.hpp"
#include "nrr/rng.hpp"

namespace nrr::synth {

struct SceneConfig {
  int subjects = 2;
  int sequences = 2;
  int frames = 5;
  int height = 64;
  int width = 64;
  std::uint64_t seed = 7;
  /// Probability that a silhouette pixel's label is flipped, imitating the
  /// ragged boundaries of an automatic segmenter.
  double label_noise = 0.0;

  void validate() const {
    detail::require(subjects >= 1 && sequences >= 1 && frames >= 1, "synth counts must be >= 1");
    detail::require(height >= 16 && width >= 16, "synth frames must be at least 16x16");
    detail::require(label_noise >= 0.0 && label_noise <= 1.0, "synth.label_noise must be in [0,1]");
  }
};

struct Frame {
  Image<float> rgb;
  SegmentationMap seg;
  DepthMap depth;
};

namespace detail_synth {

struct Style {
  std::array<double, 3> shirt, shirt2, skin, hair, backdrop_a, backdrop_b;
  double stripe_freq, stripe_angle, head_scale, torso_scale;
};

inline std::array<double, 3> random_color(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline Style subject_style(std::uint64_t seed, int subject) {
  auto rng = make_rng({seed, 0x5B1ECULL, static_cast<std::uint64_t>(subject)});
  Style s{};
  s.shirt = random_color(rng, 0.15, 0.9);
  s.shirt2 = random_color(rng, 0.15, 0.9);
  const double tone = uniform(rng, 0.35, 0.85);
  s.skin = {tone, tone * 0.78, tone * 0.62};
  s.hair = random_color(rng, 0.08, 0.35);
  s.stripe_freq = uniform(rng, 0.25, 0.7);
  s.stripe_angle = uniform(rng, 0.0, std::numbers::pi);
  s.head_scale = uniform(rng, 0.9, 1.1);
  s.torso_scale = uniform(rng, 0.9, 1.1);
  return s;
}

inline double ellipse(double x, double y, double cx, double cy, double rx, double ry) {
  const double u = (x - cx) / rx, v = (y - cy) / ry;
  return u * u + v * v;
}

}  // namespace detail_synth

inline Frame render_frame(const SceneConfig& cfg, int subject, int sequence, int frame) {
  using namespace detail_synth;
  const int h = cfg.height, w = cfg.width;
  const Style st = subject_style(cfg.seed, subject);
  auto seq_rng = make_rng({cfg.seed, 0x5E0ULL, static_cast<std::uint64_t>(subject), static_cast<std::uint64_t>(sequence)});
  const std::array<double, 3> back_a = random_color(seq_rng, 0.3, 0.8), back_b = random_color(seq_rng, 0.2, 0.7);
  const double sway_amp = uniform(seq_rng, 0.02, 0.08) * w, sway_speed = uniform(seq_rng, 0.25, 0.6);
  const double phase = uniform(seq_rng, 0.0, 2 * std::numbers::pi);
  const double nod = uniform(seq_rng, 0.01, 0.03) * h;
  const double back_freq = uniform(seq_rng, 0.1, 0.3);

  const double t = frame * sway_speed + phase;
  const double cx = 0.5 * w + sway_amp * std::sin(t);
  const double head_r = 0.12 * std::min(h, w) * st.head_scale;
  const double head_cx = cx + 0.3 * sway_amp * std::sin(t + 0.7);
  const double head_cy = 0.30 * h + nod * std::sin(1.3 * t);
  const double torso_cy = 0.78 * h, torso_rx = 0.22 * w * st.torso_scale, torso_ry = 0.32 * h;
  const double arm_rx = 0.06 * w, arm_ry = 0.26 * h;
  const double ca = std::cos(st.stripe_angle), sa = std::sin(st.stripe_angle);

  Frame f{Image<float>(h, w, 3), SegmentationMap(h, w), DepthMap(h, w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      // backdrop: two-colour gradient with soft checker texture at 3 m
      const double g = 0.5 + 0.5 * std::sin(back_freq * px) * std::cos(back_freq * py);
      std::array<double, 3> col{};
      for (int c = 0; c < 3; ++c) col[c] = back_a[c] * (1 - g) + back_b[c] * g;
      Label lab = Label::background;
      double z = 3.0;

      const bool torso = ellipse(px, py, cx, torso_cy, torso_rx, torso_ry) <= 1.0;
      const bool arm_l = ellipse(px, py, cx - torso_rx * 0.95, torso_cy + 0.02 * h, arm_rx, arm_ry) <= 1.0;
      const bool arm_r = ellipse(px, py, cx + torso_rx * 0.95, torso_cy + 0.02 * h, arm_rx, arm_ry) <= 1.0;
      const bool neck = std::abs(px - 0.5 * (cx + head_cx)) < 0.35 * head_r && py > head_cy && py < torso_cy - torso_ry + 2;
      if (torso || neck || arm_l || arm_r) {
        lab = Label::body;
        if (neck) {
          col = st.skin;
          z = 1.48;
        } else {
          const double s = std::sin(st.stripe_freq * (px * ca + py * sa) * 2.0);
          for (int c = 0; c < 3; ++c) col[c] = s > 0 ? st.shirt[c] : st.shirt2[c];
          z = (arm_l || arm_r) && !torso ? 1.42 : 1.5 - 0.05 * (1.0 - ellipse(px, py, cx, torso_cy, torso_rx, torso_ry));
        }
      }
      const double hd = ellipse(px, py, head_cx, head_cy, head_r * 0.9, head_r);
      if (hd <= 1.0) {
        lab = Label::head;
        z = 1.45 - 0.04 * (1.0 - hd);
        col = st.skin;
        if (py < head_cy - 0.35 * head_r) col = st.hair;  // hairline
        const double eye_y = head_cy - 0.1 * head_r;
        if (ellipse(px, py, head_cx - 0.35 * head_r, eye_y, 0.14 * head_r, 0.1 * head_r) <= 1.0 ||
            ellipse(px, py, head_cx + 0.35 * head_r, eye_y, 0.14 * head_r, 0.1 * head_r) <= 1.0)
          col = {0.1, 0.08, 0.07};
        if (ellipse(px, py, head_cx, head_cy + 0.45 * head_r, 0.3 * head_r, 0.08 * head_r) <= 1.0)
          col = {0.6, 0.2, 0.2};
      }
      for (int c = 0; c < 3; ++c) f.rgb(y, x, c) = static_cast<float>(std::clamp(col[c], 0.0, 1.0));
      f.seg(y, x) = lab;
      f.depth(y, x) = static_cast<float>(z);
    }

  if (cfg.label_noise > 0.0) {
    // flip labels on both sides of the silhouette; the image stays clean
    auto rng = make_rng({cfg.seed, 0x1AB1ULL, static_cast<std::uint64_t>(subject),
                         static_cast<std::uint64_t>(sequence), static_cast<std::uint64_t>(frame)});
    SegmentationMap noisy = f.seg;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        bool edge = false;
        const bool fg = f.seg(y, x) != Label::background;
        for (int dy = -1; dy <= 1 && !edge; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            if ((f.seg(ny, nx) != Label::background) != fg) {
              edge = true;
              break;
            }
          }
        if (edge && uniform(rng, 0.0, 1.0) < cfg.label_noise)
          noisy(y, x) = fg ? Label::background : Label::body;
      }
    f.seg = std::move(noisy);
  }
  return f;
}

inline std::string subject_name(int s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "subject%02d", s);
  return buf;
}
inline std::string sequence_name(int q) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq%02d", q);
  return buf;
}
inline std::string frame_name(int f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d", f);
  return buf;
}

/// Writes a clean source tree: <dir>/<subject>/<sequence>/<frame>.png plus
/// <frame>.seg.png and <frame>.depth.png.
inline void write_source_tree(const std::filesystem::path& dir, const SceneConfig& cfg) {
  cfg.validate();
  for (int s = 0; s < cfg.subjects; ++s)
    for (int q = 0; q < cfg.sequences; ++q)
      for (int fi = 0; fi < cfg.frames; ++fi) {
        const Frame f = render_frame(cfg, s, q, fi);
        const auto base = dir / subject_name(s) / sequence_name(q);
        io::write_png(base / (frame_name(fi) + ".png"), f.rgb);
        io::write_segmentation_png(base / (frame_name(fi) + ".seg.png"), f.seg);
        io::write_depth_png(base / (frame_name(fi) + ".depth.png"), f.depth);
      }
}

}  // namespace nrr::synth
