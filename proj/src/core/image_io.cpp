#include "poco/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>
#include <spdlog/spdlog.h>

#include "poco/error.hpp"

namespace poco::io {

namespace {
constexpr const char* kModule = "image_io";

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}
}  // namespace

unsigned char quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<unsigned char>(std::floor(c * 255.0 + 0.5));
}

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, kModule, "no such file: " + path.string());
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    fail(ErrorKind::Format, kModule, "malformed PNG " + path.string() + ": " + img.message);
  }
  const bool has_alpha = (img.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  img.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorKind::Format, kModule, "malformed PNG " + path.string() + ": " + msg);
  }
  if (has_alpha) spdlog::warn("{}: alpha channel dropped, RGB kept", path.string());
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < static_cast<std::size_t>(img.height) * img.width; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out.pixels[i * 3 + c] = static_cast<float>(buf[i * 4 + c]) / 255.0f;
  }
  return out;
}

Image read_jpeg(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorKind::Io, kModule, "cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<unsigned char> pixels;
  std::size_t w = 0, h = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorKind::Format, kModule, "malformed JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = cinfo.output_width;
  h = cinfo.output_height;
  pixels.resize(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW rowp = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &rowp, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Image out(h, w, 3);
  for (std::size_t i = 0; i < pixels.size(); ++i) out.pixels[i] = static_cast<float>(pixels[i]) / 255.0f;
  return out;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, kModule, "cannot open " + path.string());
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), sizeof magic);
  if (in.gcount() >= 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  if (in.gcount() >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) return read_jpeg(path);
  fail(ErrorKind::Format, kModule, path.string() + " is neither PNG nor JPEG");
}

void write_png(const Image& image, const std::filesystem::path& path) {
  if (image.empty() || (image.channels != 1 && image.channels != 3)) {
    fail(ErrorKind::InvalidArgument, kModule, "write_png needs a non-empty 1- or 3-channel image");
  }
  std::vector<png_byte> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = quantize(image.pixels[i]);
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    fail(ErrorKind::Io, kModule, "cannot write " + path.string() + ": " + msg);
  }
}

}  // namespace poco::io
