#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "nrr/image.hpp"
#include "nrr/png_io.hpp"

using namespace nrr;

namespace {

Image<float> random_image(int h, int w, int c, unsigned seed) {
  std::mt19937 g(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image<float> im(h, w, c);
  for (auto& v : im.data()) v = u(g);
  return im;
}

SegmentationMap random_labels(int h, int w, unsigned seed) {
  std::mt19937 g(seed);
  SegmentationMap s(h, w);
  for (auto& l : s.labels()) l = static_cast<Label>(g() % 3);
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nrr_imagecore_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("image construction validates extents") {
  CHECK_THROWS_AS(Image<float>(0, 4, 3), DimensionError);
  CHECK_THROWS_AS(Image<float>(4, 4, 0), DimensionError);
  Image<float> im(2, 3, 4, 0.25f);
  CHECK(im.size() == 24);
  CHECK(im(1, 2, 3) == 0.25f);
}

TEST_CASE("compose with identity and annihilator masks") {
  auto pred = random_image(5, 7, 3, 1);
  CHECK(compose(pred, Mask<float>(5, 7, 1.f)) == pred);
  auto zero = compose(pred, Mask<float>(5, 7, 0.f));
  for (float v : zero.data()) CHECK(v == 0.f);
}

TEST_CASE("compose with checkerboard matches a per-pixel product") {
  Image<float> pred(6, 6, 3, 0.5f);
  Mask<float> m(6, 6);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) m(y, x) = static_cast<float>((x + y) % 2);
  auto out = compose(pred, m);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) CHECK(out(y, x, c) == ((x + y) % 2 ? 0.5f : 0.f));
}

TEST_CASE("compose rejects size mismatch") {
  CHECK_THROWS_AS(compose(Image<float>(4, 4, 3), Mask<float>(4, 5)), DimensionError);
}

TEST_CASE("compose is idempotent for binary masks") {
  for (unsigned seed = 0; seed < 10; ++seed) {
    auto pred = random_image(8, 9, 3, seed);
    auto m = mask_from_segmentation(random_labels(8, 9, seed + 100));
    auto once = compose(pred, m);
    CHECK(compose(once, m) == once);
  }
}

TEST_CASE("mask_from_segmentation") {
  CHECK(mask_from_segmentation(SegmentationMap(4, 4)).count_foreground() == 0);
  SegmentationMap heads(4, 4, Label::head);
  CHECK(mask_from_segmentation(heads).count_foreground() == 16);

  for (unsigned seed = 0; seed < 10; ++seed) {
    auto seg = random_labels(11, 13, seed);
    auto m = mask_from_segmentation(seg);
    std::size_t expected = 0;
    for (int y = 0; y < 11; ++y)
      for (int x = 0; x < 13; ++x) {
        const bool fg = seg(y, x) != Label::background;
        expected += fg;
        CHECK(m(y, x) == (fg ? 1.f : 0.f));
      }
    CHECK(m.count_foreground() == expected);
    CHECK(m.count_foreground() == seg.pixels() - seg.count(Label::background));
  }
}

TEST_CASE("soft masks binarize at one half") {
  Mask<float> m(1, 4);
  m(0, 0) = 0.49f;
  m(0, 1) = 0.5f;
  m(0, 2) = 1.7f;
  m(0, 3) = -0.2f;
  auto b = m.binarized();
  CHECK(b(0, 0) == 0.f);
  CHECK(b(0, 1) == 1.f);
  CHECK(b(0, 2) == 1.f);
  CHECK(b(0, 3) == 0.f);
  auto c = m.clamped();
  CHECK(c(0, 2) == 1.f);
  CHECK(c(0, 3) == 0.f);
}

TEST_CASE("training sample invariants") {
  TrainingSample<float> s;
  s.input_left = Image<float>(4, 4, 3);
  s.gt_left = Image<float>(4, 4, 3);
  s.seg_left = SegmentationMap(4, 4);
  s.sequence_id = "a";
  s.frame_index = 3;
  CHECK_NOTHROW(s.validate());

  s.input_right = Image<float>(4, 4, 3);
  CHECK_THROWS_AS(s.validate(), ValidationError);
  s.depth_right = DepthMap(4, 4, 1.f);
  CHECK_NOTHROW(s.validate());

  auto prev = std::make_shared<TrainingSample<float>>(s);
  prev->frame_index = 1;
  s.prev = prev;
  CHECK_THROWS_AS(s.validate(), ValidationError);
  prev->frame_index = 2;
  prev->sequence_id = "b";
  CHECK_THROWS_AS(s.validate(), ValidationError);
  prev->sequence_id = "a";
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("label bounding box") {
  SegmentationMap s(10, 10);
  CHECK_FALSE(label_bbox(s, Label::head).has_value());
  s(2, 3) = Label::head;
  s(6, 1) = Label::head;
  auto r = label_bbox(s, Label::head);
  REQUIRE(r);
  CHECK(*r == Rect{1, 2, 3, 5});
}

TEST_CASE("png round trips") {
  auto dir = scratch("png");
  Image<float> im(5, 6, 3);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) im(y, x, c) = static_cast<float>((y * 6 + x) * 3 + c) / 255.f;
  io::write_png(dir / "rgb.png", im);
  auto back = io::read_png<float>(dir / "rgb.png");
  REQUIRE(back.same_shape(im));
  for (std::size_t i = 0; i < im.size(); ++i) CHECK(back.data()[i] == Catch::Approx(im.data()[i]).margin(1e-7));

  auto seg = random_labels(7, 5, 3);
  io::write_segmentation_png(dir / "seg.png", seg);
  CHECK(io::read_segmentation_png(dir / "seg.png").labels().size() == seg.labels().size());
  auto seg2 = io::read_segmentation_png(dir / "seg.png");
  CHECK(std::equal(seg.labels().begin(), seg.labels().end(), seg2.labels().begin()));

  DepthMap d(3, 4);
  d(0, 0) = 1.234f;
  d(2, 3) = 40.5f;
  io::write_depth_png(dir / "depth.png", d);
  auto d2 = io::read_depth_png(dir / "depth.png");
  CHECK(d2(0, 0) == Catch::Approx(1.234f).margin(1e-6));
  CHECK(d2(2, 3) == Catch::Approx(40.5f).margin(1e-6));
  CHECK(d2(1, 1) == 0.f);

  CHECK_THROWS_AS(io::read_png<float>(dir / "missing.png"), IoError);
}
