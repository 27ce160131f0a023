#include <doctest.h>

#include <cmath>
#include <numbers>

#include "poco/error.hpp"
#include "poco/polar.hpp"
#include "poco/rng.hpp"
#include "poco/synth.hpp"

using namespace poco;
using polar::build_grid;

namespace {

Image radial_image(std::size_t s) {
  Image img(s, s, 3);
  const double c = (static_cast<double>(s) - 1) / 2;
  for (std::size_t y = 0; y < s; ++y) {
    for (std::size_t x = 0; x < s; ++x) {
      const double r = std::hypot(x - c, y - c) / static_cast<double>(s);
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = static_cast<float>(0.5 + 0.4 * std::cos(12 * r));
    }
  }
  return img;
}

}  // namespace

TEST_CASE("grid constants at 224") {
  const auto g = build_grid(224, 224, 224, 224);
  CHECK(g.r_max == 112.0);
  CHECK(g.d == 0.5);
  CHECK(g.omega_deg == 360.0 / 224.0);
  CHECK(g.x0 == 111.5);
  CHECK(g.y0 == 111.5);
}

TEST_CASE("grid samples follow the polar parameterization") {
  const auto g = build_grid(64, 48, 32, 40);
  const double w = 2 * std::numbers::pi / 40;
  for (std::size_t j = 0; j < 40; ++j) {
    CHECK(g.sample(0, j).x == g.x0);
    CHECK(g.sample(0, j).y == g.y0);
  }
  for (std::size_t i = 0; i < 32; ++i) {
    CHECK(g.sample(i, 0).x == doctest::Approx(g.x0 + i * g.d).epsilon(1e-15));
    CHECK(g.sample(i, 0).y == doctest::Approx(g.y0).epsilon(1e-15));
  }
  for (std::size_t i = 1; i < 32; ++i) {
    for (std::size_t j = 0; j < 40; ++j) {
      const auto& p = g.sample(i, j);
      const double r = std::hypot(p.x - g.x0, p.y - g.y0);
      double theta = std::atan2(p.y - g.y0, p.x - g.x0);
      if (theta < -1e-12) theta += 2 * std::numbers::pi;
      CHECK(std::abs(r - i * g.d) < 1e-9);
      CHECK(std::abs(theta - j * w) < 1e-9);
      CHECK(r <= g.r_max + 1e-9);
    }
  }
}

TEST_CASE("grid argument errors") {
  CHECK_THROWS_AS(build_grid(64, 64, 64, 64, 0.0), Error);
  CHECK_THROWS_AS(build_grid(64, 64, 64, 64, -3.0), Error);
  CHECK_THROWS_AS(build_grid(1, 64, 64, 64), Error);
  const auto g = build_grid(32, 32, 32, 32);
  CHECK_THROWS_AS(polar::warp_to_polar(Image(16, 16, 3), g), Error);
}

TEST_CASE("constant and radially symmetric inputs") {
  const auto g = build_grid(64, 64, 64, 64);
  const auto flat = polar::warp_to_polar(Image(64, 64, 3, 0.35f), g);
  for (float v : flat.pixels) CHECK(std::abs(v - 0.35f) < 1e-6);

  const auto warped = polar::warp_to_polar(radial_image(64), g);
  for (std::size_t i = 0; i < 64; ++i) {
    float lo = 1, hi = 0;
    for (std::size_t j = 0; j < 64; ++j) {
      lo = std::min(lo, warped.at(i, j, 0));
      hi = std::max(hi, warped.at(i, j, 0));
    }
    CHECK(hi - lo <= 1e-6 + 0.02);
  }
}

TEST_CASE("corner regions are never read with the default radius") {
  auto img = radial_image(64);
  auto marked = img;
  const double c = 31.5;
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      // bilinear taps lie within sqrt(2) of a sample, all samples within r_max of the center
      if (std::hypot(x - c, y - c) > 32 + 1.5) {
        for (std::size_t ch = 0; ch < 3; ++ch) marked.at(y, x, ch) = 1.0f;
      }
    }
  }
  const auto g = build_grid(64, 64, 64, 64);
  CHECK(polar::warp_to_polar(img, g) == polar::warp_to_polar(marked, g));
}

TEST_CASE("an oversized radius pads with zeros") {
  const auto g = build_grid(32, 32, 32, 32, 30.0);
  const auto out = polar::warp_to_polar(Image(32, 32, 3, 1.0f), g);
  CHECK(out.at(31, 0, 0) == 0.0f);
  CHECK(out.at(0, 0, 0) == 1.0f);
}

TEST_CASE("warp is linear in intensities") {
  RngStream rng(3, 1);
  const auto a = data::smooth_random_image(48, 3, rng);
  const auto b = data::smooth_random_image(48, 3, rng);
  Image mix(48, 48, 3);
  for (std::size_t k = 0; k < mix.pixels.size(); ++k) mix.pixels[k] = 0.3f * a.pixels[k] + 0.6f * b.pixels[k];
  const auto g = build_grid(48, 48, 40, 56);
  const auto wa = polar::warp_to_polar(a, g), wb = polar::warp_to_polar(b, g), wm = polar::warp_to_polar(mix, g);
  for (std::size_t k = 0; k < wm.pixels.size(); ++k) {
    CHECK(std::abs(wm.pixels[k] - (0.3f * wa.pixels[k] + 0.6f * wb.pixels[k])) < 1e-6);
  }
}

TEST_CASE("rotation becomes a cyclic column shift") {
  const auto g = build_grid(64, 64, 64, 64);
  for (std::uint64_t t = 0; t < 4; ++t) {
    RngStream rng(21, t);
    const auto img = data::smooth_random_image(64, 3, rng);
    const auto base = polar::warp_to_polar(img, g);
    for (long long k : {1LL, 16LL, 32LL}) {
      const auto rotated = polar::warp_to_polar(polar::rotate_image(img, static_cast<double>(k) * g.omega_deg), g);
      CHECK(mean_abs_difference(rotated, polar::cyclic_shift(base, k), 2) <= 0.02);
    }
  }
}

TEST_CASE("a bright blob moves only along the column axis") {
  Image img(64, 64, 1);
  for (std::size_t y = 0; y < 64; ++y) {
    for (std::size_t x = 0; x < 64; ++x) {
      const double dx = x - 47.0, dy = y - 31.5;
      img.at(y, x, 0) = static_cast<float>(std::exp(-(dx * dx + dy * dy) / 8.0));
    }
  }
  const auto g = build_grid(64, 64, 64, 64);
  const auto argmax = [](const Image& im) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < im.pixels.size(); ++k) {
      if (im.pixels[k] > im.pixels[best]) best = k;
    }
    return std::make_pair(best / im.width, best % im.width);
  };
  const auto [r0, c0] = argmax(polar::warp_to_polar(img, g));
  for (long long k : {8LL, 20LL}) {
    const auto [r, c] = argmax(polar::warp_to_polar(polar::rotate_image(img, k * g.omega_deg), g));
    CHECK(r == r0);
    CHECK(static_cast<long long>(c) == (static_cast<long long>(c0) + k) % 64);
  }
}

TEST_CASE("rotate_image special angles") {
  RngStream rng(4, 2);
  const auto img = data::smooth_random_image(32, 3, rng);
  CHECK(polar::rotate_image(img, 0) == img);
  const auto full = polar::rotate_image(img, 360);
  CHECK(mean_abs_difference(full, img) < 1e-6);
  const auto quarter = polar::rotate_image(img, 90);
  double worst = 0;
  for (std::size_t y = 0; y < 32; ++y) {
    for (std::size_t x = 0; x < 32; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        worst = std::max(worst, static_cast<double>(std::abs(quarter.at(y, x, c) - img.at(31 - x, y, c))));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("cyclic shift arithmetic") {
  RngStream rng(5, 3);
  const auto img = data::smooth_random_image(16, 2, rng);
  CHECK(polar::cyclic_shift(img, 0) == img);
  CHECK(polar::cyclic_shift(img, 16) == img);
  CHECK(polar::cyclic_shift(polar::cyclic_shift(img, 5), 13) == polar::cyclic_shift(img, 2));
  CHECK(polar::cyclic_shift(img, -3) == polar::cyclic_shift(img, 13));
  const auto s = polar::cyclic_shift(img, 3);
  CHECK(s.at(4, 3, 1) == img.at(4, 0, 1));
}
