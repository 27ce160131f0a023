#pragma once

#include <cstddef>
#include <utility>

#include "poco/image.hpp"
#include "poco/rng.hpp"

namespace poco::augment {

struct AugmentConfig {
  std::size_t out_size = 64;
  std::pair<double, double> crop_scale_range{0.6, 1.0};  // fraction of source area
  double hflip_prob = 0.5;
  double grayscale_prob = 0.2;
  std::pair<double, double> jitter_range{0.6, 1.4};
};

/// Throws on out-of-range probabilities, unordered ranges or out_size < 8.
void validate(const AugmentConfig& cfg);

/// Concrete draw of every random choice made by augment().
struct AugmentParams {
  double crop_x = 0;  // top-left corner and side of the square crop, in source pixels
  double crop_y = 0;
  double crop_side = 0;
  bool flip = false;
  bool grayscale = false;
  double brightness = 1;
  double contrast = 1;
  double saturation = 1;

  /// Full-frame crop, no flip, no grayscale, unit jitter factors.
  static AugmentParams identity(const Image& image);
};

AugmentParams sample_params(const Image& image, const AugmentConfig& cfg, RngStream& rng);

/// Square crop -> bilinear resize to out_size -> flip -> grayscale ->
/// brightness -> contrast -> saturation, clamping to [0, 1] after each jitter.
Image apply(const Image& image, const AugmentParams& params, std::size_t out_size);

Image augment(const Image& image, const AugmentConfig& cfg, RngStream& rng);

/// Two independent views of the same source. The streams must differ.
std::pair<Image, Image> make_positive_pair(const Image& image, const AugmentConfig& cfg,
                                           RngStream& rng_q, RngStream& rng_k);

/// 0.299 R + 0.587 G + 0.114 B; single-channel images return the channel.
float luma(const Image& image, std::size_t y, std::size_t x);

Image to_grayscale(const Image& image);

}  // namespace poco::augment
