#pragma once

// In-memory datasets rendered by the procedural scene generator.

#include <memory>

#include "nrr/dataset.hpp"
#include "nrr/degrade.hpp"
#include "nrr/synth.hpp"

namespace test_support {

struct SceneSet {
  int subjects = 1;
  int sequences = 2;
  int frames = 5;
  int size = 64;
  bool stereo = true;
  bool degrade = true;
  std::uint64_t seed = 7;
};

inline nrr::Dataset<float> synthetic_dataset(const SceneSet& s) {
  nrr::synth::SceneConfig sc;
  sc.subjects = s.subjects;
  sc.sequences = s.sequences;
  sc.frames = s.frames;
  sc.height = sc.width = s.size;
  sc.seed = s.seed;
  nrr::Dataset<float> ds;
  const nrr::DegradationConfig dc = s.degrade ? nrr::DegradationConfig{} : nrr::DegradationConfig::neutral();
  for (int subj = 0; subj < s.subjects; ++subj)
    for (int q = 0; q < s.sequences; ++q) {
      std::shared_ptr<const nrr::TrainingSample<float>> prev;
      const std::uint64_t stream = nrr::mix_keys({static_cast<std::uint64_t>(subj), static_cast<std::uint64_t>(q)});
      for (int f = 0; f < s.frames; ++f) {
        const auto fr = nrr::synth::render_frame(sc, subj, q, f);
        auto t = std::make_shared<nrr::TrainingSample<float>>();
        const auto m = nrr::mask_from_segmentation<float>(fr.seg);
        t->input_left = nrr::degrade_frame(nrr::compose(fr.rgb, m), fr.seg, dc, f, {stream, 0}).image;
        t->gt_left = fr.rgb;
        t->seg_left = fr.seg;
        if (s.stereo) {
          const auto right = nrr::build_stereo_pair(fr.rgb, fr.depth, ds.baseline, ds.focal, &fr.seg);
          const auto mr = nrr::mask_from_segmentation<float>(*right.seg);
          t->input_right = nrr::degrade_frame(nrr::compose(right.image, mr), *right.seg, dc, f, {stream, 1}).image;
          nrr::DepthMap d = right.depth;
          for (int y = 0; y < d.height(); ++y)
            for (int x = 0; x < d.width(); ++x)
              if ((*right.seg)(y, x) == nrr::Label::background) d(y, x) = 0.0f;
          t->depth_right = d;
        }
        t->subject = nrr::synth::subject_name(subj);
        t->sequence_id = nrr::synth::sequence_name(q);
        t->frame_index = f;
        t->prev = prev;
        t->validate();
        prev = t;
        ds.samples.push_back(t);
      }
    }
  return ds;
}

}  // namespace test_support
