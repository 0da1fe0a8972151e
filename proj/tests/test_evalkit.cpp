#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "nrr/config.hpp"
#include "nrr/evalkit.hpp"
#include "support/fixtures.hpp"

using namespace nrr;
namespace fs = std::filesystem;

namespace {

Image<float> random_image(int h, int w, std::uint64_t seed) {
  Image<float> im(h, w, 3);
  auto rng = make_rng({seed});
  for (auto& v : im.data()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  return im;
}

std::map<std::string, std::string> parse_text(const std::string& t) {
  std::map<std::string, std::string> m;
  std::istringstream in(t);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    m[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// Metrics

TEST_CASE("psnr of a uniform 0.1 offset is 20 dB") {
  Image<double> a(16, 16, 3, 0.3), b(16, 16, 3, 0.4);
  CHECK(psnr(a, b).db == Catch::Approx(20.0).margin(1e-9));
  CHECK_FALSE(psnr(a, b).identical);
  CHECK(psnr(a, a).identical);
  CHECK(std::isinf(psnr(a, a).db));
}

TEST_CASE("psnr matches a direct mse computation") {
  const auto a = random_image(20, 24, 1), b = random_image(20, 24, 2);
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    se += d * d;
  }
  const double oracle = -10.0 * std::log10(se / static_cast<double>(a.size()));
  CHECK(std::abs(psnr(a, b).db - oracle) < 1e-9);
}

TEST_CASE("ms-ssim basic properties") {
  const auto a = random_image(128, 128, 3), b = random_image(128, 128, 4);
  CHECK(ms_ssim(a, a) == Catch::Approx(1.0).margin(1e-9));
  CHECK(ms_ssim(a, b) == Catch::Approx(ms_ssim(b, a)).margin(1e-12));
  CHECK(ms_ssim(a, b) < 0.5);
}

TEST_CASE("boundary band marks pixels near a mask change") {
  Mask<double> m(9, 9, 0.0);
  for (int y = 0; y < 9; ++y)
    for (int x = 4; x < 9; ++x) m(y, x) = 1.0;
  const auto band = boundary_band(m, 1);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) CHECK(band[y * 9 + x] == (x == 3 || x == 4));
  const auto wide = boundary_band(m, 2);
  for (int x = 0; x < 9; ++x) CHECK(wide[x] == (x >= 2 && x <= 5));
  CHECK(std::isnan(band_l1(Image<double>(9, 9, 3), Image<double>(9, 9, 3), boundary_band(Mask<double>(9, 9, 1.0), 1))));
}

TEST_CASE("ground truth scores perfectly against itself") {
  auto ds = test_support::synthetic_dataset({1, 1, 3});
  for (auto& sp : ds.samples) {
    auto s = std::make_shared<TrainingSample<float>>(*sp);
    s->input_left = compose(s->gt_left, mask_from_segmentation<float>(s->seg_left));
    s->input_right.reset();
    s->depth_right.reset();
    sp = s;
  }
  FeatureExtractor<float> fx;
  const auto col = evaluate_inputs(ds, fx, "test");
  for (const auto& m : col.samples) {
    CHECK(m.photometric_l1 == 0.0);
    CHECK(std::isinf(m.psnr_db));
    CHECK(m.ms_ssim == Catch::Approx(1.0).margin(1e-9));
    CHECK(m.perceptual == 0.0);
    CHECK(m.boundary_l1 == 0.0);
    CHECK(std::isnan(m.stereo_residual));
  }
}

TEST_CASE("rendered input psnr matches a float recomputation of the degradation") {
  const fs::path root = fs::temp_directory_path() / "nrr_eval_inputs";
  fs::remove_all(root);
  synth::SceneConfig sc;
  sc.subjects = 2;
  sc.sequences = 2;
  sc.frames = 3;
  synth::write_source_tree(root / "src", sc);
  DatasetConfig dc;
  dc.degradation = DegradationConfig::neutral();
  dc.degradation.noise_sigma = 0.05;
  dc.stereo = false;
  build_dataset(root / "src", root / "data", dc);
  const auto ds = load_split<float>(root / "data", Split::test_seen);
  REQUIRE(ds.size() == 3);
  FeatureExtractor<float> fx;
  const auto col = evaluate_inputs(ds, fx, "test_seen");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& s = *ds.samples[i];
    const auto clean = io::read_png<float>(root / "src" / s.subject / s.sequence_id / (synth::frame_name(s.frame_index) + ".png"));
    const auto m = mask_from_segmentation<float>(s.seg_left);
    const std::uint64_t stream = mix_keys({hash_string(s.subject), hash_string(s.sequence_id)});
    const auto deg = degrade_frame(compose(clean, m), s.seg_left, dc.degradation, s.frame_index, {stream, 0}).image;
    const double oracle = psnr(deg, compose(clean, m)).db;
    INFO(s.subject << "/" << s.sequence_id << "/" << s.frame_index);
    CHECK(std::abs(col.samples[i].psnr_db - oracle) < 0.01);
  }
}

// ---------------------------------------------------------------------------
// Ablation

TEST_CASE("each variant switches off exactly one setting") {
  RunConfig base;
  const auto before = parse_text(to_text(base));
  std::set<std::string> touched;
  for (Variant v : all_variants()) {
    RunConfig c = base;
    c.loss = apply_variant(base.loss, v);
    const auto after = parse_text(to_text(c));
    std::vector<std::string> diff;
    for (const auto& [k, val] : before)
      if (after.at(k) != val) diff.push_back(k);
    if (v == Variant::proposed) {
      CHECK(diff.empty());
      continue;
    }
    REQUIRE(diff.size() == 1);
    touched.insert(diff[0]);
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK(touched == std::set<std::string>{"loss.w_head", "loss.w_mask", "loss.saliency_enabled", "loss.w_stereo",
                                         "loss.w_temporal"});
  CHECK_THROWS_AS(parse_variant("nope"), ValidationError);
}

TEST_CASE("ablation with no variants reports only the rendered input") {
  const auto ds = test_support::synthetic_dataset({1, 1, 2});
  FeatureExtractor<float> fx;
  AblationSetup setup;
  const auto r = ablation_run(ds, {{"test_seen", &ds}}, setup, {}, fx);
  REQUIRE(r.columns.size() == 1);
  CHECK(r.columns[0].variant == kRenderedInput);
  CHECK(r.columns[0].samples.size() == 2);
}

TEST_CASE("ablation runs every requested variant") {
  const auto ds = test_support::synthetic_dataset({1, 1, 2});
  FeatureExtractor<float> fx;
  AblationSetup setup;
  setup.arch.n_init = 4;
  setup.loss.head_crop_size = 32;
  setup.train.crop_min_h = setup.train.crop_min_w = setup.train.crop_max_h = setup.train.crop_max_w = 32;
  setup.train.max_steps = 1;
  const auto r = ablation_run(ds, {{"a", &ds}, {"b", &ds}}, setup, {Variant::proposed, Variant::no_mask}, fx);
  CHECK(r.variants() == std::vector<std::string>{"proposed", "-mask", kRenderedInput});
  CHECK(r.columns.size() == 6);
  CHECK(r.find("-mask", "b") != nullptr);
  CHECK(r.find("proposed", "a")->samples[1].temporal_residual >= 0.0);
}

TEST_CASE("reports survive csv and json round trips") {
  MetricsReport r;
  r.percept_profile = "test";
  MetricsColumn c{"proposed", "test_seen", {}};
  SampleMetrics a;
  a.id = "s/q/0";
  a.photometric_l1 = 0.1234567890123;
  a.psnr_db = 21.5;
  a.ms_ssim = 0.9;
  a.perceptual = 1.0 / 3.0;
  a.boundary_l1 = 0.25;
  SampleMetrics b = a;
  b.id = "s/q/1";
  b.psnr_db = std::numeric_limits<double>::infinity();
  b.temporal_residual = 0.01;
  b.stereo_residual = 2e-7;
  c.samples = {a, b};
  r.columns = {c, MetricsColumn{kRenderedInput, "test_seen", {a}}};

  CHECK(report_from_csv(to_csv(r)) == r);
  CHECK(report_from_json(nlohmann::json::parse(to_json(r).dump())) == r);

  const auto agg = c.aggregate();
  CHECK(agg.temporal_residual == 0.01);
  CHECK(agg.perceptual == Catch::Approx(1.0 / 3.0).epsilon(1e-15));

  const std::string table = to_table_csv(r);
  CHECK(table.find("proposed") != std::string::npos);
  CHECK(table.find(kRenderedInput) != std::string::npos);
}

// ---------------------------------------------------------------------------
// Timing

TEST_CASE("bench shares cover the whole network") {
  ArchConfig a;
  a.n_init = 8;
  const auto m = build<float>(a);
  const auto r = bench_forward(m, 64, 64, 3);
  double sum = 0;
  for (const auto& b : r.blocks) sum += b.percent;
  CHECK(sum == Catch::Approx(100.0).margin(0.1));
  CHECK(r.encoder_percent + r.bottleneck_percent + r.decoder_percent == Catch::Approx(100.0).margin(0.1));
  CHECK(r.stereo_pair_ms == 2 * r.total_ms);
  CHECK(r.blocks.front().block == "enc0");
  const auto j = to_json(r);
  CHECK(j.at("blocks").size() == r.blocks.size());
}

TEST_CASE("bench mean is stable when repetitions double") {
  ArchConfig a;
  a.n_init = 8;
  const auto m = build<float>(a);
  // the host's speed drifts over seconds, so each round pairs an N and a 2N run back to back
  // and the median ratio over rounds is compared
  std::vector<double> ratio;
  for (int round = 0; round < 7; ++round) {
    const double once = bench_forward(m, 64, 64, 20, 3).total_ms;
    ratio.push_back(bench_forward(m, 64, 64, 40, 3).total_ms / once);
  }
  std::sort(ratio.begin(), ratio.end());
  INFO("ratios " << ratio.front() << " .. " << ratio.back() << ", median " << ratio[3]);
  CHECK(std::abs(ratio[3] - 1.0) < 0.2);
}
