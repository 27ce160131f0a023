#include "poco/image.hpp"

#include <algorithm>
#include <cmath>

#include "poco/error.hpp"

namespace poco {

float sample_bilinear(const Image& image, double x, double y, std::size_t channel, Border border) {
  const auto H = static_cast<std::ptrdiff_t>(image.height);
  const auto W = static_cast<std::ptrdiff_t>(image.width);
  const double fx = std::floor(x), fy = std::floor(y);
  const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
  const double ax = x - fx, ay = y - fy;
  const auto tap = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
    if (border == Border::Clamp) {
      yy = std::clamp<std::ptrdiff_t>(yy, 0, H - 1);
      xx = std::clamp<std::ptrdiff_t>(xx, 0, W - 1);
    } else if (yy < 0 || yy >= H || xx < 0 || xx >= W) {
      return 0.0;
    }
    return image.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), channel);
  };
  // Exact lattice hits skip the neighbours so that out-of-frame zeros never leak in.
  if (ax == 0.0 && ay == 0.0) return static_cast<float>(tap(y0, x0));
  const double top = (1.0 - ax) * tap(y0, x0) + ax * tap(y0, x0 + 1);
  const double bottom = (1.0 - ax) * tap(y0 + 1, x0) + ax * tap(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

Image resize_region(const Image& image, double x0, double y0, double w, double h, std::size_t out_h,
                    std::size_t out_w) {
  if (image.empty() || out_h == 0 || out_w == 0 || !(w > 0) || !(h > 0)) {
    fail(ErrorKind::InvalidArgument, "image", "resize needs a non-empty source region and target");
  }
  Image out(out_h, out_w, image.channels);
  const double sx = w / static_cast<double>(out_w), sy = h / static_cast<double>(out_h);
  for (std::size_t i = 0; i < out_h; ++i) {
    const double y = y0 + (static_cast<double>(i) + 0.5) * sy - 0.5;
    for (std::size_t j = 0; j < out_w; ++j) {
      const double x = x0 + (static_cast<double>(j) + 0.5) * sx - 0.5;
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(i, j, c) = sample_bilinear(image, x, y, c, Border::Clamp);
      }
    }
  }
  return out;
}

Image resize(const Image& image, std::size_t out_h, std::size_t out_w) {
  if (image.height == out_h && image.width == out_w) return image;
  return resize_region(image, 0.0, 0.0, static_cast<double>(image.width),
                       static_cast<double>(image.height), out_h, out_w);
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
      }
    }
  }
  return out;
}

double mean_abs_difference(const Image& a, const Image& b, std::size_t border) {
  if (!a.same_extent(b)) fail(ErrorKind::Shape, "image", "mean_abs_difference: extents differ");
  if (2 * border >= a.height || 2 * border >= a.width) {
    fail(ErrorKind::InvalidArgument, "image", "border band covers the whole image");
  }
  double s = 0;
  std::size_t n = 0;
  for (std::size_t y = border; y < a.height - border; ++y) {
    for (std::size_t x = border; x < a.width - border; ++x) {
      for (std::size_t c = 0; c < a.channels; ++c) {
        s += std::abs(static_cast<double>(a.at(y, x, c)) - b.at(y, x, c));
        ++n;
      }
    }
  }
  return s / static_cast<double>(n);
}

}  // namespace poco
