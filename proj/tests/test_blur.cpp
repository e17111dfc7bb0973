#include <doctest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "visionsim/blur.hpp"
#include "visionsim/error.hpp"
#include "visionsim/image_io.hpp"
#include "visionsim/office_scene.hpp"
#include "visionsim/rng.hpp"

using namespace visionsim;
using testutil::TempDir;

namespace {

RgbImage noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.data()) v = static_cast<float>(rng.uniform());
  return img;
}

BlurField uniform_field(std::size_t w, std::size_t h, PixelBlur b) {
  BlurField f(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) f.at(x, y) = b;
  return f;
}

double channel_mean(const RgbImage& img, std::size_t margin) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t y = margin; y + margin < img.height(); ++y)
    for (std::size_t x = margin; x + margin < img.width(); ++x, ++n)
      for (std::size_t c = 0; c < 3; ++c) sum += img.at(x, y, c);
  return sum / static_cast<double>(3 * n);
}

double max_row_gradient(const RgbImage& img) {
  double g = 0.0;
  const std::size_t y = img.height() / 2;
  for (std::size_t x = 1; x < img.width(); ++x) {
    g = std::max(g, std::abs(static_cast<double>(img.at(x, y, 0)) - img.at(x - 1, y, 0)));
  }
  return g;
}

}  // namespace

TEST_SUITE("blur_render") {

TEST_CASE("pixel pitch") {
  CHECK(pixel_pitch({100.0, 2000, 10}) == doctest::Approx(3.0));
  CHECK(pixel_pitch({90.0, 5400, 10}) == doctest::Approx(1.0));
  CHECK(pixel_pitch({1.0, 60, 10}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(pixel_pitch({0.0, 60, 10}), DomainError);
  CHECK_THROWS_AS(pixel_pitch({180.0, 60, 10}), DomainError);
  CHECK_THROWS_AS(pixel_pitch({90.0, 0, 10}), DomainError);
}

TEST_CASE("blur field spot values") {
  const ViewGeometry g{100.0, 200, 50};  // 30 arcmin/px
  optics::RefractionProfile p;
  optics::FocusState focus;
  focus.pupil_diameter = 4.0;

  SUBCASE("in focus everywhere") {
    focus.lens_power = 1.0;
    const auto f = compute_blur_field(DepthMap(200, 50, 1.0f), p, focus, nullptr, g);
    for (std::size_t y = 0; y < 50; ++y)
      for (std::size_t x = 0; x < 200; ++x) CHECK(f.at(x, y).major == 0.0f);
  }
  SUBCASE("near screen with the lens focused at 6 m") {
    const ViewGeometry g3{100.0, 2000, 4};  // 3 arcmin/px
    focus.lens_power = 0.1667;
    const auto f = compute_blur_field(DepthMap(2000, 4, 0.3f), p, focus, nullptr, g3);
    const double oracle = (1.0 / 0.3f - 0.1667) * 0.004 * 3437.7468 / 3.0;
    CHECK(oracle == doctest::Approx(14.51).epsilon(1e-3));
    CHECK(f.at(0, 0).major == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(f.at(1999, 3).minor == doctest::Approx(oracle).epsilon(1e-6));
  }
  SUBCASE("invalid depth gives zero blur") {
    DepthMap d(200, 50, 0.3f);
    d.set(7, 9, DepthMap::kInvalid);
    const auto f = compute_blur_field(d, p, focus, nullptr, g);
    CHECK(f.at(7, 9) == PixelBlur{});
    CHECK(f.at(8, 9).major > 0.0f);
  }
  SUBCASE("sub-threshold blur is dropped") {
    // 1/0.98 - 1 D at 4 mm is about 0.28 arcmin.
    focus.lens_power = 1.0;
    const auto f = compute_blur_field(DepthMap(200, 50, 0.98f), p, focus, nullptr, g);
    CHECK(f.at(3, 3).major == 0.0f);
  }
  SUBCASE("blur is capped at a quarter of the width") {
    focus.pupil_diameter = 9.0;
    const ViewGeometry fine{10.0, 200, 50};
    const auto f = compute_blur_field(DepthMap(200, 50, 0.1f), p, focus, nullptr, fine);
    CHECK(f.at(0, 0).major == 50.0f);
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(compute_blur_field(DepthMap(100, 50, 1.0f), p, focus, nullptr, g), DomainError);
  }
}

TEST_CASE("uniform zero power map equals no power map") {
  const ViewGeometry g{100.0, 64, 48};
  auto [img, depth] = render_office_scene(task::SceneLayout::office(), g);
  optics::RefractionProfile p{-0.5, 0.75, 45.0, 0.5};
  optics::FocusState focus{0.8, 5.0, 0.0};
  const auto zero = optics::PowerMap::uniform(0.0);
  CHECK(compute_blur_field(depth, p, focus, nullptr, g) ==
        compute_blur_field(depth, p, focus, &zero, g));
  const optics::PowerMap ramp(2, 2, {0.0, 0.0, 2.0, 2.0});
  CHECK_FALSE(compute_blur_field(depth, p, focus, nullptr, g) ==
              compute_blur_field(depth, p, focus, &ramp, g));
}

TEST_CASE("zero field is the identity") {
  const auto img = noise_image(97, 61, 1);
  CHECK(apply_blur(img, BlurField(97, 61)) == img);
  // Below one pixel also passes through.
  CHECK(apply_blur(img, uniform_field(97, 61, {0.9f, 0.9f, 0.0f})) == img);
}

TEST_CASE("flat field is preserved") {
  Rng rng(2);
  RgbImage img(80, 60, {0.25f, 0.5f, 0.75f});
  BlurField f(80, 60);
  for (std::size_t y = 0; y < 60; ++y)
    for (std::size_t x = 0; x < 80; ++x) {
      const auto major = static_cast<float>(rng.uniform() * 30.0);
      f.at(x, y) = {major, static_cast<float>(rng.uniform()) * major,
                    static_cast<float>(rng.uniform() * 180.0)};
    }
  CHECK(apply_blur(img, f) == img);
}

TEST_CASE("point energy spreads over the disc") {
  const std::size_t n = 41;
  RgbImage img(n, n);
  img.set(20, 20, {1.f, 1.f, 1.f});
  const auto out = apply_blur(img, uniform_field(n, n, {5.0f, 5.0f, 0.0f}));
  // Reference rasterizer: integer offsets within radius 2.5.
  int in_disc = 0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx)
      if (dx * dx + dy * dy <= 6.25) ++in_disc;
  CHECK(in_disc == 21);
  double total = 0.0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      total += out.at(x, y, 0);
      const int dx = static_cast<int>(x) - 20;
      const int dy = static_cast<int>(y) - 20;
      const double expected = dx * dx + dy * dy <= 6.25 ? 1.0 / in_disc : 0.0;
      CHECK(out.at(x, y, 0) == doctest::Approx(expected).epsilon(1e-6));
    }
  CHECK(total == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("elliptical kernel follows orientation") {
  const std::size_t n = 41;
  RgbImage img(n, n);
  img.set(20, 20, {1.f, 1.f, 1.f});
  // Major 9 px horizontal, minor 1 px: a horizontal line segment.
  const auto h = apply_blur(img, uniform_field(n, n, {9.0f, 1.0f, 0.0f}));
  CHECK(h.at(24, 20, 0) > 0.0f);
  CHECK(h.at(20, 24, 0) == 0.0f);
  // At 90 degrees the segment is vertical.
  const auto v = apply_blur(img, uniform_field(n, n, {9.0f, 1.0f, 90.0f}));
  CHECK(v.at(20, 24, 0) > 0.0f);
  CHECK(v.at(24, 20, 0) == 0.0f);
  // At 45 degrees, counter-clockwise with y down: up and to the right.
  const auto d = apply_blur(img, uniform_field(n, n, {12.0f, 1.0f, 45.0f}));
  CHECK(d.at(23, 17, 0) > 0.0f);
  CHECK(d.at(23, 23, 0) == 0.0f);
}

TEST_CASE("interior mean luminance is preserved for random fields") {
  const std::size_t n = 128;
  const auto img = noise_image(n, n, 3);
  Rng rng(4);
  BlurField f(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const auto major = static_cast<float>(rng.uniform() * 16.0);
      f.at(x, y) = {major, major * static_cast<float>(rng.uniform()),
                    static_cast<float>(rng.uniform() * 180.0)};
    }
  const auto out = apply_blur(img, f);
  CHECK(channel_mean(out, 8) == doctest::Approx(channel_mean(img, 8)).epsilon(0.01));
}

TEST_CASE("edge gradient decreases with blur diameter") {
  RgbImage img(64, 16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 32; x < 64; ++x) img.set(x, y, {1.f, 1.f, 1.f});
  double last = 2.0;
  for (float d : {0.0f, 3.0f, 6.0f, 12.0f}) {
    const double g = max_row_gradient(apply_blur(img, uniform_field(64, 16, {d, d, 0.0f})));
    CHECK(g <= last);
    last = g;
  }
  CHECK(last < 0.2);
}

TEST_CASE("apply_blur dimension mismatch") {
  CHECK_THROWS_AS(apply_blur(RgbImage(4, 4), BlurField(4, 5)), DomainError);
}

TEST_CASE("office scene depths") {
  const ViewGeometry g{100.0, 320, 180};
  const auto layout = task::SceneLayout::office();
  const auto [img, depth] = render_office_scene(layout, g);
  std::set<float> values(depth.values().begin(), depth.values().end());
  CHECK(values == std::set<float>{0.3f, 1.0f, 6.0f, static_cast<float>(layout.background_distance)});

  const auto [img2, depth2] = render_office_scene(layout, g);
  CHECK(img == img2);
  CHECK(std::equal(depth.values().begin(), depth.values().end(), depth2.values().begin()));

  task::SceneLayout empty;
  const auto [bimg, bdepth] = render_office_scene(empty, g);
  for (float v : bdepth.values()) CHECK(v == 20.0f);
}

TEST_CASE("pfm round trip keeps invalid pixels") {
  TempDir dir;
  DepthMap d(5, 3, 1.5f);
  d.set(0, 0, DepthMap::kInvalid);
  d.set(4, 2, 0.3f);
  write_pfm(dir.path() / "d.pfm", d);
  const auto back = read_depth(dir.path() / "d.pfm");
  CHECK_FALSE(back.valid(0, 0));
  CHECK(back.at(4, 2) == 0.3f);
  CHECK(back.at(2, 1) == 1.5f);

  write_depth_png16(dir.path() / "d.png", d);
  const auto back16 = read_depth(dir.path() / "d.png");
  CHECK_FALSE(back16.valid(0, 0));
  CHECK(back16.at(4, 2) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("png round trip") {
  TempDir dir;
  RgbImage img(3, 2);
  img.set(1, 1, {1.f, 0.f, 0.5f});
  write_png(dir.path() / "i.png", img);
  const auto back = read_png(dir.path() / "i.png");
  CHECK(back.width() == 3);
  CHECK(back.at(1, 1, 0) == 1.0f);
  CHECK(back.at(1, 1, 2) == doctest::Approx(0.5).epsilon(0.01));
}

}  // TEST_SUITE
