#include "poco/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "poco/error.hpp"

namespace poco {

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

namespace augment {

namespace {
constexpr const char* kModule = "augmentation";

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }
}  // namespace

void validate(const AugmentConfig& cfg) {
  const auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) {
      fail(ErrorKind::InvalidArgument, kModule, std::string(name) + " must lie in [0, 1]");
    }
  };
  prob(cfg.hflip_prob, "hflip_prob");
  prob(cfg.grayscale_prob, "grayscale_prob");
  if (!(cfg.crop_scale_range.first > 0.0 && cfg.crop_scale_range.first <= cfg.crop_scale_range.second &&
        cfg.crop_scale_range.second <= 1.0)) {
    fail(ErrorKind::InvalidArgument, kModule, "crop_scale_range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(cfg.jitter_range.first >= 0.0 && cfg.jitter_range.first <= cfg.jitter_range.second)) {
    fail(ErrorKind::InvalidArgument, kModule, "jitter_range must satisfy 0 <= lo <= hi");
  }
  if (cfg.out_size < 8) fail(ErrorKind::InvalidArgument, kModule, "out_size must be >= 8");
}

AugmentParams AugmentParams::identity(const Image& image) {
  AugmentParams p;
  p.crop_side = static_cast<double>(std::min(image.height, image.width));
  return p;
}

AugmentParams sample_params(const Image& image, const AugmentConfig& cfg, RngStream& rng) {
  if (image.height < 8 || image.width < 8) {
    fail(ErrorKind::InvalidArgument, kModule, "augment needs an image of at least 8x8");
  }
  AugmentParams p;
  const double scale = rng.uniform(cfg.crop_scale_range.first, cfg.crop_scale_range.second);
  const double max_side = static_cast<double>(std::min(image.height, image.width));
  p.crop_side =
      std::min(max_side, std::sqrt(scale * static_cast<double>(image.height * image.width)));
  p.crop_x = rng.uniform() * (static_cast<double>(image.width) - p.crop_side);
  p.crop_y = rng.uniform() * (static_cast<double>(image.height) - p.crop_side);
  p.flip = rng.bernoulli(cfg.hflip_prob);
  p.grayscale = rng.bernoulli(cfg.grayscale_prob);
  p.brightness = rng.uniform(cfg.jitter_range.first, cfg.jitter_range.second);
  p.contrast = rng.uniform(cfg.jitter_range.first, cfg.jitter_range.second);
  p.saturation = rng.uniform(cfg.jitter_range.first, cfg.jitter_range.second);
  return p;
}

float luma(const Image& image, std::size_t y, std::size_t x) {
  if (image.channels < 3) return image.at(y, x, 0);
  return static_cast<float>(0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) +
                            0.114 * image.at(y, x, 2));
}

Image to_grayscale(const Image& image) {
  Image out = image;
  if (image.channels < 3) return out;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const float l = luma(image, y, x);
      for (std::size_t c = 0; c < image.channels; ++c) out.at(y, x, c) = l;
    }
  }
  return out;
}

Image apply(const Image& image, const AugmentParams& params, std::size_t out_size) {
  Image out = resize_region(image, params.crop_x, params.crop_y, params.crop_side, params.crop_side,
                            out_size, out_size);
  if (params.flip) out = flip_horizontal(out);
  if (params.grayscale) out = to_grayscale(out);

  if (params.brightness != 1.0) {
    for (auto& v : out.pixels) v = clamp01(params.brightness * v);
  }
  if (params.contrast != 1.0) {
    double mean = 0;
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) mean += luma(out, y, x);
    }
    mean /= static_cast<double>(out.height * out.width);
    for (auto& v : out.pixels) v = clamp01(mean + params.contrast * (v - mean));
  }
  if (params.saturation != 1.0 && out.channels >= 3) {
    for (std::size_t y = 0; y < out.height; ++y) {
      for (std::size_t x = 0; x < out.width; ++x) {
        const double l = luma(out, y, x);
        for (std::size_t c = 0; c < out.channels; ++c) {
          out.at(y, x, c) = clamp01(l + params.saturation * (out.at(y, x, c) - l));
        }
      }
    }
  }
  return out;
}

Image augment(const Image& image, const AugmentConfig& cfg, RngStream& rng) {
  return apply(image, sample_params(image, cfg, rng), cfg.out_size);
}

std::pair<Image, Image> make_positive_pair(const Image& image, const AugmentConfig& cfg,
                                           RngStream& rng_q, RngStream& rng_k) {
  if (rng_q.stream_id() == rng_k.stream_id()) {
    fail(ErrorKind::InvalidArgument, kModule,
         "positive pair views need distinct random streams (stream " +
             std::to_string(rng_q.stream_id()) + " used twice)");
  }
  auto q = augment(image, cfg, rng_q);
  auto k = augment(image, cfg, rng_k);
  return {std::move(q), std::move(k)};
}

}  // namespace augment
}  // namespace poco
