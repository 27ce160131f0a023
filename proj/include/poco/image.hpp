#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace poco {

/// Interleaved H x W x C raster with channel values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool empty() const noexcept { return pixels.empty(); }
  bool same_extent(const Image& o) const noexcept {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Image&) const = default;
};

enum class Border {
  Zero,   // taps outside the frame read as 0
  Clamp,  // taps outside the frame read the nearest edge pixel
};

/// Bilinear read at continuous pixel coordinates (x right, y down; pixel
/// centers on integers).
float sample_bilinear(const Image& image, double x, double y, std::size_t channel,
                      Border border = Border::Zero);

/// Bilinear resize of the region [x0, x0+w) x [y0, y0+h) onto an
/// out_h x out_w raster, sampling at output pixel centers.
Image resize_region(const Image& image, double x0, double y0, double w, double h, std::size_t out_h,
                    std::size_t out_w);

Image resize(const Image& image, std::size_t out_h, std::size_t out_w);

Image flip_horizontal(const Image& image);

double mean_abs_difference(const Image& a, const Image& b, std::size_t border = 0);

}  // namespace poco
