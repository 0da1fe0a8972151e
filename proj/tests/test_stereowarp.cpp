#include <catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "nrr/stereowarp.hpp"
#include "support/gradcheck.hpp"

using namespace nrr;

namespace {

template <class T = double>
Image<T> random_image(int h, int w, int c, unsigned seed) {
  std::mt19937 g(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image<T> im(h, w, c);
  for (auto& v : im.data()) v = static_cast<T>(u(g));
  return im;
}

}  // namespace

TEST_CASE("identity field reproduces the image") {
  auto im = random_image(9, 7, 3, 1);
  auto r = warp(im, WarpField::identity(9, 7));
  CHECK(r.image == im);
  CHECK(r.valid.count_foreground() == 63);
}

TEST_CASE("bilinear sample at the centre of a 2x2 image") {
  Image<double> im(2, 2, 1);
  im(0, 0) = 0;
  im(0, 1) = 1;
  im(1, 0) = 2;
  im(1, 1) = 3;
  WarpField f(2, 2);
  f.src_x[0] = 0.5;
  f.src_y[0] = 0.5;
  f.valid[0] = 1;
  auto r = warp(im, f);
  CHECK(r.image(0, 0) == 1.5);
  CHECK(r.valid(0, 0) == 1.0);
  CHECK(r.valid(1, 1) == 0.0);
}

TEST_CASE("integer shifts equal array shifting") {
  auto im = random_image(8, 10, 3, 2);
  for (int dx : {-3, -1, 0, 2, 4})
    for (int dy : {-2, 0, 1}) {
      auto r = warp(im, WarpField::shift(8, 10, dx, dy));
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x) {
          const int sx = x + dx, sy = y + dy;
          const bool in = sx >= 0 && sx < 10 && sy >= 0 && sy < 8;
          CHECK(r.valid(y, x) == (in ? 1.0 : 0.0));
          for (int c = 0; c < 3; ++c) CHECK(r.image(y, x, c) == (in ? im(sy, sx, c) : 0.0));
        }
    }
}

TEST_CASE("out-of-bounds samples are invalid, not clamped") {
  auto im = random_image(4, 4, 1, 3);
  auto r = warp(im, WarpField::shift(4, 4, 0.5, 0.0));
  for (int y = 0; y < 4; ++y) {
    CHECK(r.valid(y, 3) == 0.0);
    CHECK(r.valid(y, 2) == 1.0);
  }
}

TEST_CASE("warp of a constant image is constant on valid pixels") {
  Image<double> im(6, 6, 3, 0.375);
  auto f = WarpField::shift(6, 6, 1.3, -0.7);
  auto r = warp(im, f);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      if (r.valid(y, x) > 0)
        for (int c = 0; c < 3; ++c) CHECK(r.image(y, x, c) == Catch::Approx(0.375).epsilon(1e-14));
}

TEST_CASE("warp is linear in the image") {
  auto a = random_image(7, 7, 3, 4), b = random_image(7, 7, 3, 5);
  auto f = WarpField::shift(7, 7, 0.3, 1.6);
  Image<double> mix(7, 7, 3);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = 2.0 * a.data()[i] - 0.5 * b.data()[i];
  auto ra = warp(a, f), rb = warp(b, f), rm = warp(mix, f);
  for (std::size_t i = 0; i < mix.size(); ++i)
    CHECK(rm.image.data()[i] == Catch::Approx(2.0 * ra.image.data()[i] - 0.5 * rb.image.data()[i]).margin(1e-12));
}

TEST_CASE("warp gradient matches finite differences") {
  auto im = random_image(8, 8, 3, 6);
  std::mt19937 g(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  WarpField f = WarpField::identity(8, 8);
  for (std::size_t i = 0; i < f.src_x.size(); ++i) {
    f.src_x[i] += u(g);
    f.src_y[i] += u(g);
  }
  // weighted sum so the check is not blind to permutation errors
  auto weights = random_image(8, 8, 3, 8);
  auto loss = [&](const Image<double>& x) {
    auto r = warp(x, f);
    double s = 0;
    for (std::size_t i = 0; i < r.image.size(); ++i) s += weights.data()[i] * r.image.data()[i];
    return s;
  };
  auto analytic = warp_backward(weights, f);
  auto err = test_support::max_rel_error(im, loss, analytic);
  CHECK(err < 1e-4);

  Image<double> ones(8, 8, 3, 1.0);
  auto sum_grad = warp_backward(ones, f);
  auto sum_loss = [&](const Image<double>& x) {
    double s = 0;
    for (double v : warp(x, f).image.data()) s += v;
    return s;
  };
  CHECK(test_support::max_rel_error(im, sum_loss, sum_grad) < 1e-4);
}

TEST_CASE("warp rejects size mismatch") {
  CHECK_THROWS_AS(warp(Image<double>(4, 4, 3), WarpField::identity(4, 5)), DimensionError);
}

TEST_CASE("field from depth: hand-computed disparity") {
  // 500 px * 0.065 m / 1.3 m = 25 px
  DepthMap d(4, 64, 1.3f);
  auto f = warp_field_from_depth(d, 500.0, 0.065);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 64; ++x) {
      const auto i = f.index(y, x);
      if (x + 25 < 64) {
        REQUIRE(f.valid[i]);
        CHECK(f.src_x[i] - x == Catch::Approx(25.0).margin(1e-4));
        CHECK(f.src_y[i] == y);
      }
    }
}

TEST_CASE("field from depth: far surfaces give the identity") {
  DepthMap d(5, 6, 60000.0f);
  auto f = warp_field_from_depth(d, 500.0, 0.065);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 6; ++x) {
      REQUIRE(f.valid[f.index(y, x)]);
      CHECK(f.src_x[f.index(y, x)] == Catch::Approx(x).margin(1e-3));
    }
}

TEST_CASE("field from depth: disparity scales with inverse depth") {
  DepthMap d(2, 80, 1.3f);
  for (int x = 0; x < 80; ++x) d(1, x) = 2.6f;
  auto f = warp_field_from_depth(d, 500.0, 0.065);
  const double near = f.src_x[f.index(0, 10)] - 10, far = f.src_x[f.index(1, 10)] - 10;
  CHECK(near / far == Catch::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("field from depth: zero depth is invalid, negative depth throws") {
  DepthMap d(3, 3);
  auto f = warp_field_from_depth(d, 100.0, 0.065);
  CHECK(f.valid_count() == 0);
  d(1, 1) = -1.0f;
  CHECK_THROWS_AS(warp_field_from_depth(d, 100.0, 0.065), ValidationError);
}

TEST_CASE("warp field serialisation round trip") {
  auto dir = std::filesystem::temp_directory_path() / "nrr_stereowarp_io";
  std::filesystem::remove_all(dir);
  auto f = WarpField::shift(5, 7, 2.5, -0.25);
  f.valid[3] = 0;
  save_warp_field(dir / "f.bin", dir / "f_valid.png", f);
  auto g = load_warp_field(dir / "f.bin", dir / "f_valid.png");
  CHECK(g == f);
}
