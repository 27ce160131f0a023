#pragma once

#include <filesystem>

#include "poco/image.hpp"

namespace poco::io {

/// 8-bit PNG/JPEG -> 3-channel float image (gray is replicated; an alpha
/// channel is dropped with a warning). Format is chosen from the file header.
Image read_image(const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
Image read_jpeg(const std::filesystem::path& path);

/// Writes 8-bit RGB (or gray for 1-channel images). Values are quantized as
/// floor(clamp(v, 0, 1) * 255 + 0.5).
void write_png(const Image& image, const std::filesystem::path& path);

unsigned char quantize(float v);

}  // namespace poco::io
