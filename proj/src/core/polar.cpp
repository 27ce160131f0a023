#include "poco/polar.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "poco/error.hpp"

namespace poco::polar {

namespace {
constexpr const char* kModule = "polar_transform";
constexpr double kDegToRad = std::numbers::pi / 180.0;
}  // namespace

PolarGrid build_grid(std::size_t in_height, std::size_t in_width, std::size_t out_height,
                     std::size_t out_width, std::optional<double> r_max_override) {
  if (in_height < 2 || in_width < 2 || out_height < 2 || out_width < 2) {
    fail(ErrorKind::InvalidArgument, kModule, "grid extents must all be >= 2");
  }
  if (r_max_override && !(*r_max_override > 0)) {
    fail(ErrorKind::InvalidArgument, kModule,
         "r_max override must be positive, got " + std::to_string(*r_max_override));
  }
  PolarGrid g;
  g.in_height = in_height;
  g.in_width = in_width;
  g.out_height = out_height;
  g.out_width = out_width;
  g.x0 = (static_cast<double>(in_width) - 1.0) / 2.0;
  g.y0 = (static_cast<double>(in_height) - 1.0) / 2.0;
  g.r_max = r_max_override.value_or(static_cast<double>(in_width) / 2.0);
  g.d = g.r_max / static_cast<double>(out_height);
  g.omega_deg = 360.0 / static_cast<double>(out_width);
  g.samples.resize(out_height * out_width);
  for (std::size_t i = 0; i < out_height; ++i) {
    const double r = static_cast<double>(i) * g.d;
    for (std::size_t j = 0; j < out_width; ++j) {
      const double theta = static_cast<double>(j) * g.omega_deg * kDegToRad;
      auto& s = g.samples[i * out_width + j];
      if (i == 0) {
        s = {g.x0, g.y0};
      } else if (j == 0) {
        s = {g.x0 + r, g.y0};
      } else {
        s = {g.x0 + r * std::cos(theta), g.y0 + r * std::sin(theta)};
      }
    }
  }
  return g;
}

Image warp_to_polar(const Image& image, const PolarGrid& grid) {
  if (image.height != grid.in_height || image.width != grid.in_width) {
    fail(ErrorKind::Shape, kModule,
         "image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
             " but the grid expects " + std::to_string(grid.in_height) + "x" +
             std::to_string(grid.in_width));
  }
  Image out(grid.out_height, grid.out_width, image.channels);
  for (std::size_t i = 0; i < grid.out_height; ++i) {
    for (std::size_t j = 0; j < grid.out_width; ++j) {
      const auto& s = grid.sample(i, j);
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(i, j, c) = sample_bilinear(image, s.x, s.y, c, Border::Zero);
      }
    }
  }
  return out;
}

Image rotate_image(const Image& image, double angle_deg) {
  if (angle_deg == 0.0) return image;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double a = angle_deg * kDegToRad;
  const double ca = std::cos(a), sa = std::sin(a);
  Image out(image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      // Inverse map: source = R(-a) (p - c) + c.
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double sx = ca * dx + sa * dy + cx;
      const double sy = -sa * dx + ca * dy + cy;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = sample_bilinear(image, sx, sy, c, Border::Zero);
      }
    }
  }
  return out;
}

Image cyclic_shift(const Image& image, long long columns) {
  const auto W = static_cast<long long>(image.width);
  Image out(image.height, image.width, image.channels);
  if (W == 0) return out;
  const long long k = ((columns % W) + W) % W;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (long long j = 0; j < W; ++j) {
      const auto src = static_cast<std::size_t>((j - k + W) % W);
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, static_cast<std::size_t>(j), c) = image.at(y, src, c);
      }
    }
  }
  return out;
}

}  // namespace poco::polar
