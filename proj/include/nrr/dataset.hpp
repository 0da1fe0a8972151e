#pragma once

// Dataset layout on disk:
//
//   <root>/manifest.json
//   <root>/<split>/<subject>/<sequence>/<frame>.{input_l,input_r,gt,seg,depth_r}.png
//
// Source layout consumed by build_dataset:
//
//   <source>/<subject>/<sequence>/<frame>.png          clean witness frame
//   <source>/<subject>/<sequence>/<frame>.seg.png      optional labels
//   <source>/<subject>/<sequence>/<frame>.depth.png    optional depth (mm)
//
// Without labels a chroma-key heuristic labels the frame and the sample is
// flagged low-confidence. Without depth the sample has no right eye.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nrr/degrade.hpp"
#include "nrr/errors.hpp"
#include "nrr/image.hpp"
#include "nrr/png_io.hpp"
#include "nrr/rng.hpp"
#include "nrr/stereowarp.hpp"

namespace nrr {

namespace fs = std::filesystem;
using json = nlohmann::json;

enum class Split { train, test_seen, test_unseen };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test_seen: return "test_seen";
    case Split::test_unseen: return "test_unseen";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test_seen") return Split::test_seen;
  if (s == "test_unseen") return Split::test_unseen;
  throw ValidationError("unknown split '" + s + "' (train|test_seen|test_unseen)");
}

struct DatasetConfig {
  DegradationConfig degradation;
  /// The last N subjects (sorted by name) form test_unseen.
  int holdout_subjects = 1;
  /// For every other subject the last N sequences form test_seen; at least
  /// one sequence per subject always stays in train.
  int holdout_sequences = 1;
  double focal = 60.0;      // pixels
  double baseline = 0.065;  // meters
  bool stereo = true;
  std::vector<Split> splits = {Split::train, Split::test_seen, Split::test_unseen};

  void validate() const {
    degradation.validate();
    detail::require(holdout_subjects >= 0, "data.holdout_subjects must be >= 0");
    detail::require(holdout_sequences >= 0, "data.holdout_sequences must be >= 0");
    detail::require(focal > 0.0, "data.focal must be positive");
    detail::require(baseline >= 0.0, "data.baseline must be non-negative");
  }
};

/// Run-length encoding (start, length) of the set pixels of a mask.
template <class T>
std::vector<std::pair<std::size_t, std::size_t>> run_lengths(const Mask<T>& m) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  auto v = m.data();
  for (std::size_t i = 0; i < v.size();) {
    if (v[i] < T(0.5)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < v.size() && v[j] >= T(0.5)) ++j;
    runs.emplace_back(i, j - i);
    i = j;
  }
  return runs;
}

/// Chroma-key fallback segmentation: the background colour is the per-channel
/// median of the border pixels and anything farther than 0.15 (L1) from it is
/// labelled body. There is no head label, so head losses stay disabled.
inline SegmentationMap chroma_key_segmentation(const Image<float>& rgb) {
  const int h = rgb.height(), w = rgb.width();
  std::array<std::vector<float>, 3> border;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1)
        for (int c = 0; c < 3; ++c) border[c].push_back(rgb(y, x, c));
  std::array<float, 3> bg{};
  for (int c = 0; c < 3; ++c) {
    auto& b = border[c];
    std::nth_element(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(b.size() / 2), b.end());
    bg[c] = b[b.size() / 2];
  }
  SegmentationMap seg(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float d = 0;
      for (int c = 0; c < 3; ++c) d += std::abs(rgb(y, x, c) - bg[c]);
      if (d > 0.15f) seg(y, x) = Label::body;
    }
  return seg;
}

namespace detail_dataset {

inline std::vector<std::string> sorted_subdirs(const fs::path& p) {
  std::vector<std::string> out;
  if (!fs::is_directory(p)) return out;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

/// Frame stems ("0000", "0001", ...) of clean frames in a sequence directory.
inline std::vector<std::string> frame_stems(const fs::path& seq_dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(seq_dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() < 5 || name.substr(name.size() - 4) != ".png") continue;
    const std::string stem = name.substr(0, name.size() - 4);
    if (stem.find('.') != std::string::npos) continue;  // companions like 0000.seg
    out.push_back(stem);
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline json runs_to_json(const std::vector<std::pair<std::size_t, std::size_t>>& runs) {
  json a = json::array();
  for (const auto& [s, n] : runs) a.push_back({s, n});
  return a;
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
}

}  // namespace detail_dataset

inline json degradation_to_json(const DegradationConfig& c) {
  return json{{"hole_fraction", c.hole_fraction},     {"hole_blob_scale", c.hole_blob_scale},
              {"noise_sigma", c.noise_sigma},         {"downsample_factor", c.downsample_factor},
              {"color_gain_min", c.color_gain_min},   {"color_gain_max", c.color_gain_max},
              {"color_bias_min", c.color_bias_min},   {"color_bias_max", c.color_bias_max},
              {"flicker_amplitude", c.flicker_amplitude}, {"sequence_seed", c.sequence_seed}};
}

/// Degrades a source tree into the three splits and writes manifest.json.
/// Returns the manifest. Output is byte-identical for identical inputs.
inline json build_dataset(const fs::path& source_dir, const fs::path& out_dir, const DatasetConfig& cfg) {
  cfg.validate();
  using namespace detail_dataset;
  if (!fs::is_directory(source_dir)) throw IoError("source directory not found: " + source_dir.string());
  const auto subjects = sorted_subdirs(source_dir);
  if (subjects.empty()) throw IoError("source directory has no subject folders: " + source_dir.string());

  const int n_unseen = std::min<int>(cfg.holdout_subjects, static_cast<int>(subjects.size()));
  std::set<std::string> unseen(subjects.end() - n_unseen, subjects.end());
  const std::set<Split> wanted(cfg.splits.begin(), cfg.splits.end());

  json manifest;
  manifest["format"] = "nrr-dataset";
  manifest["version"] = 1;
  manifest["degradation"] = degradation_to_json(cfg.degradation);
  manifest["seeds"] = {{"sequence_seed", cfg.degradation.sequence_seed}};
  manifest["camera"] = {{"focal_px", cfg.focal}, {"baseline_m", cfg.baseline}, {"stereo", cfg.stereo}};
  manifest["holdout"] = {{"subjects", json(std::vector<std::string>(unseen.begin(), unseen.end()))},
                         {"sequences_per_subject", cfg.holdout_sequences}};
  json splits = {{"train", json::array()}, {"test_seen", json::array()}, {"test_unseen", json::array()}};

  for (const auto& subject : subjects) {
    const auto sequences = sorted_subdirs(source_dir / subject);
    if (sequences.empty()) throw IoError("subject has no sequences: " + subject);
    const bool is_unseen = unseen.count(subject) > 0;
    const int n_hold = is_unseen ? 0 : std::min<int>(cfg.holdout_sequences, static_cast<int>(sequences.size()) - 1);
    for (std::size_t qi = 0; qi < sequences.size(); ++qi) {
      const auto& sequence = sequences[qi];
      const Split split = is_unseen ? Split::test_unseen
                          : static_cast<int>(qi) >= static_cast<int>(sequences.size()) - n_hold ? Split::test_seen
                                                                                                  : Split::train;
      if (!wanted.count(split)) continue;
      const fs::path seq_src = source_dir / subject / sequence;
      const auto stems = frame_stems(seq_src);
      if (stems.empty()) throw IoError("empty sequence: " + seq_src.string());
      const std::uint64_t stream = mix_keys({hash_string(subject), hash_string(sequence)});
      const fs::path seq_out = out_dir / to_string(split) / subject / sequence;

      for (std::size_t fi = 0; fi < stems.size(); ++fi) {
        const int frame_index = static_cast<int>(fi);
        const auto& stem = stems[fi];
        Image<float> clean = io::read_png<float>(seq_src / (stem + ".png"));
        if (clean.channels() == 4 || clean.channels() == 1) {
          Image<float> rgb(clean.height(), clean.width(), 3);
          for (int y = 0; y < clean.height(); ++y)
            for (int x = 0; x < clean.width(); ++x)
              for (int c = 0; c < 3; ++c) rgb(y, x, c) = clean(y, x, clean.channels() == 1 ? 0 : c);
          clean = std::move(rgb);
        }
        bool low_confidence = false;
        SegmentationMap seg;
        if (fs::exists(seq_src / (stem + ".seg.png"))) {
          seg = io::read_segmentation_png(seq_src / (stem + ".seg.png"));
        } else {
          seg = chroma_key_segmentation(clean);
          low_confidence = true;
        }
        detail::require_dims(seg.height() == clean.height() && seg.width() == clean.width(),
                             "segmentation size mismatch for " + (seq_src / stem).string());
        std::optional<DepthMap> depth;
        if (fs::exists(seq_src / (stem + ".depth.png"))) depth = io::read_depth_png(seq_src / (stem + ".depth.png"));

        const Mask<float> m_gt = mask_from_segmentation<float>(seg);
        const auto left = degrade_frame(compose(clean, m_gt), seg, cfg.degradation, frame_index, {stream, 0});
        const fs::path base = seq_out / stem;
        io::write_png(base.string() + ".input_l.png", left.image);
        io::write_png(base.string() + ".gt.png", clean);
        io::write_segmentation_png(base.string() + ".seg.png", seg);

        json files = {{"input_l", stem + ".input_l.png"}, {"gt", stem + ".gt.png"}, {"seg", stem + ".seg.png"}};
        json entry;
        if (cfg.stereo && depth) {
          const auto right = build_stereo_pair(clean, *depth, cfg.baseline, cfg.focal, &seg);
          const Mask<float> m_r = mask_from_segmentation<float>(*right.seg);
          const auto right_deg = degrade_frame(compose(right.image, m_r), *right.seg, cfg.degradation, frame_index, {stream, 1});
          DepthMap depth_r = right.depth;
          for (int y = 0; y < depth_r.height(); ++y)
            for (int x = 0; x < depth_r.width(); ++x)
              if ((*right.seg)(y, x) == Label::background) depth_r(y, x) = 0.0f;
          io::write_png(base.string() + ".input_r.png", right_deg.image);
          io::write_depth_png(base.string() + ".depth_r.png", depth_r);
          files["input_r"] = stem + ".input_r.png";
          files["depth_r"] = stem + ".depth_r.png";
          entry["holes_r"] = runs_to_json(run_lengths(right_deg.holes));
        }
        const std::string id = to_string(split) + "/" + subject + "/" + sequence + "/" + stem;
        entry["id"] = id;
        entry["dir"] = to_string(split) + "/" + subject + "/" + sequence;
        entry["subject"] = subject;
        entry["sequence"] = sequence;
        entry["frame_index"] = frame_index;
        entry["prev"] = fi > 0 ? json(to_string(split) + "/" + subject + "/" + sequence + "/" + stems[fi - 1]) : json(nullptr);
        entry["files"] = files;
        entry["seg_low_confidence"] = low_confidence;
        entry["holes_l"] = runs_to_json(run_lengths(left.holes));
        entry["height"] = clean.height();
        entry["width"] = clean.width();
        splits[to_string(split)].push_back(std::move(entry));
      }
    }
  }
  manifest["splits"] = std::move(splits);
  detail_dataset::write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

inline json read_manifest(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw IoError("cannot read " + (root / "manifest.json").string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "nrr-dataset") throw IoError("not a dataset manifest: " + root.string());
  return j;
}

/// In-memory split with prev links resolved and the stereo camera echoed.
template <class T>
struct Dataset {
  std::vector<std::shared_ptr<const TrainingSample<T>>> samples;
  double focal = 60.0;
  double baseline = 0.065;

  std::size_t size() const { return samples.size(); }
};

template <class T>
Dataset<T> load_split(const fs::path& root, Split split) {
  const json manifest = read_manifest(root);
  Dataset<T> ds;
  ds.focal = manifest.at("camera").at("focal_px").get<double>();
  ds.baseline = manifest.at("camera").at("baseline_m").get<double>();
  std::map<std::string, std::shared_ptr<const TrainingSample<T>>> by_id;
  for (const auto& e : manifest.at("splits").at(to_string(split))) {
    auto s = std::make_shared<TrainingSample<T>>();
    const fs::path dir = root / e.at("dir").get<std::string>();
    const auto& files = e.at("files");
    s->input_left = io::read_png<float>(dir / files.at("input_l").get<std::string>()).template cast<T>();
    s->gt_left = io::read_png<float>(dir / files.at("gt").get<std::string>()).template cast<T>();
    s->seg_left = io::read_segmentation_png(dir / files.at("seg").get<std::string>());
    if (files.contains("input_r")) {
      s->input_right = io::read_png<float>(dir / files.at("input_r").get<std::string>()).template cast<T>();
      s->depth_right = io::read_depth_png(dir / files.at("depth_r").get<std::string>());
    }
    s->subject = e.at("subject").get<std::string>();
    s->sequence_id = e.at("sequence").get<std::string>();
    s->frame_index = e.at("frame_index").get<int>();
    if (!e.at("prev").is_null()) {
      auto it = by_id.find(e.at("prev").get<std::string>());
      if (it == by_id.end()) throw IoError("manifest lists a frame before its predecessor: " + e.at("id").get<std::string>());
      s->prev = it->second;
    }
    s->validate();
    by_id[e.at("id").get<std::string>()] = s;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace nrr
