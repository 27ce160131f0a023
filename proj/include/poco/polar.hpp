#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "poco/image.hpp"

namespace poco::polar {

struct SourcePoint {
  double x = 0;
  double y = 0;
};

/// Precomputed output-pixel -> source-coordinate map of the Cartesian to polar
/// warp. Output row i is radius i*d, output column j is angle j*omega measured
/// from the +x axis towards +y.
struct PolarGrid {
  std::size_t in_height = 0;
  std::size_t in_width = 0;
  std::size_t out_height = 0;
  std::size_t out_width = 0;
  double x0 = 0;
  double y0 = 0;
  double r_max = 0;
  double d = 0;
  double omega_deg = 0;
  std::vector<SourcePoint> samples;  // out_height x out_width, row-major

  const SourcePoint& sample(std::size_t i, std::size_t j) const { return samples[i * out_width + j]; }
};

/// r_max defaults to in_width / 2, so every sample stays inside the inscribed
/// disc. The center sits at ((in_width-1)/2, (in_height-1)/2).
PolarGrid build_grid(std::size_t in_height, std::size_t in_width, std::size_t out_height,
                     std::size_t out_width, std::optional<double> r_max_override = std::nullopt);

/// Per-channel bilinear resampling of image at the grid's source points.
/// Samples that fall outside the frame read 0.
Image warp_to_polar(const Image& image, const PolarGrid& grid);

/// Rotation by angle_deg about the image center (same angular orientation as
/// the polar grid), bilinear, out-of-frame reads 0.
Image rotate_image(const Image& image, double angle_deg);

/// out[:, j] = in[:, (j - columns) mod W]; exact.
Image cyclic_shift(const Image& image, long long columns);

}  // namespace poco::polar
