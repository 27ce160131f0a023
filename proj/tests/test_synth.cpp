#include <doctest.h>

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "poco/error.hpp"
#include "poco/image_io.hpp"
#include "poco/polar.hpp"
#include "poco/synth.hpp"

using namespace poco;
using namespace poco::data;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("poco_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

SynthConfig quiet() {
  SynthConfig cfg;
  cfg.noise_sigma = 0;
  cfg.random_rotation = false;
  return cfg;
}

void write_rgba(const fs::path& path, unsigned w, unsigned h) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  REQUIRE(f);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, f);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(w * 4);
  for (unsigned x = 0; x < w; ++x) {
    row[x * 4 + 0] = 255;
    row[x * 4 + 1] = 0;
    row[x * 4 + 2] = 51;
    row[x * 4 + 3] = 10;
  }
  for (unsigned y = 0; y < h; ++y) png_write_row(png, row.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

TEST_CASE("noise-free samples match the closed-form raster") {
  const auto cfg = quiet();
  for (std::size_t c = 0; c < cfg.num_classes; ++c) {
    RngStream rng(1, c);
    const auto s = generate_sample(c, cfg, rng);
    CHECK(s.label == static_cast<int>(c));
    CHECK(s.image == render_sample(cfg, c, 0.0));
    const double S = 64, cx = 31.5;
    for (std::size_t y = 0; y < 64; y += 3) {
      for (std::size_t x = 0; x < 64; x += 5) {
        const double rho = std::hypot(x - cx, y - cx) / S, th = std::atan2(y - cx, x - cx);
        const double disc = 0.25 * std::clamp((0.45 - rho) / 0.02 + 0.5, 0.0, 1.0);
        const double z = (rho - cfg.ring_radii[c]) / 0.025;
        double ring = 0.65 * std::exp(-0.5 * z * z);
        if (cfg.angular_freqs[c] > 0) ring *= 0.5 + 0.5 * std::cos(cfg.angular_freqs[c] * th);
        const double w[3][2] = {{1, 1}, {0.55, 0.8}, {0.3, 0.5}};
        for (std::size_t ch = 0; ch < 3; ++ch) {
          CHECK(s.image.at(y, x, ch) == doctest::Approx(std::min(1.0, w[ch][0] * disc + w[ch][1] * ring)).epsilon(1e-6));
        }
      }
    }
    CHECK(s.image.at(0, 0, 0) < 1e-12f);  // black background up to the ring tail
  }
}

TEST_CASE("same class at two rotations differs by a rotation") {
  const auto cfg = quiet();
  const auto a = render_sample(cfg, 1, 30.0), b = render_sample(cfg, 1, 60.0);
  CHECK(mean_abs_difference(polar::rotate_image(a, 30.0), b) <= 0.02);
  CHECK(mean_abs_difference(a, b) > 0.02);
}

TEST_CASE("samples are deterministic and in range") {
  SynthConfig cfg;
  cfg.center_jitter = 0.05;
  cfg.gain_jitter = 0.4;
  cfg.spots = 4;
  for (std::size_t i = 0; i < 10; ++i) {
    auto r1 = sample_stream(7, Split::Test, i), r2 = sample_stream(7, Split::Test, i);
    const auto a = generate_sample(i % 3, cfg, r1), b = generate_sample(i % 3, cfg, r2);
    CHECK(a.image == b.image);
    for (float v : a.image.pixels) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK_THROWS_AS(render_sample(cfg, 3, 0.0), Error);
}

TEST_CASE("dataset splits") {
  SynthConfig cfg;
  cfg.image_size = 16;
  const auto ds = generate_dataset(cfg, 3);
  CHECK(ds.pretrain.size() == 600);
  CHECK(ds.finetune_train.size() == 150);
  CHECK(ds.finetune_val.size() == 75);
  CHECK(ds.test.size() == 150);
  CHECK_FALSE(ds.pretrain.has_labels());
  CHECK_THROWS_AS(ds.pretrain.label(0), Error);
  for (const auto* s : {&ds.finetune_train, &ds.finetune_val, &ds.test}) {
    const auto counts = s->class_counts();
    for (auto n : counts) {
      CHECK(n + 1 >= s->size() / 3);
      CHECK(n <= s->size() / 3 + 1);
    }
  }
  CHECK(ds.test.label_reads() == 150);

  const auto again = generate_dataset(cfg, 3);
  CHECK(again.test.images() == ds.test.images());
  const auto other = generate_dataset(cfg, 4);
  CHECK_FALSE(other.test.image(0) == ds.test.image(0));
  CHECK_FALSE(ds.test.image(0) == ds.finetune_val.image(0));

  cfg.counts.test = 2;
  CHECK_THROWS_AS(generate_dataset(cfg, 3), Error);
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.ring_radii = {0.2, 0.2, 0.3};
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.ring_radii = {0.2, 0.3, 0.6};
  CHECK_THROWS_AS(validate(cfg), Error);
  cfg = {};
  cfg.num_classes = 1;
  cfg.ring_radii = {0.2};
  cfg.angular_freqs = {0};
  CHECK_THROWS_AS(validate(cfg), Error);
  CHECK_NOTHROW(validate(SynthConfig{}));
}

TEST_CASE("row profiles of warped noise-free samples identify the class") {
  SynthConfig cfg;
  cfg.noise_sigma = 0;
  const auto grid = polar::build_grid(64, 64, 64, 64);
  const auto profile = [&](const Image& img) {
    const auto w = polar::warp_to_polar(img, grid);
    std::vector<double> p(64, 0.0);
    for (std::size_t i = 0; i < 64; ++i) {
      for (std::size_t j = 0; j < 64; ++j) p[i] += w.at(i, j, 0) / 64.0;
    }
    return p;
  };
  std::vector<std::vector<double>> refs;
  for (std::size_t c = 0; c < 3; ++c) refs.push_back(profile(render_sample(cfg, c, 0.0)));
  std::size_t correct = 0, total = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    auto rng = sample_stream(11, Split::Test, i);
    const auto s = generate_sample(i % 3, cfg, rng);
    const auto p = profile(s.image);
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t c = 0; c < 3; ++c) {
      double d = 0;
      for (std::size_t k = 0; k < 64; ++k) d += (p[k] - refs[c][k]) * (p[k] - refs[c][k]);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    correct += static_cast<int>(best) == s.label;
    ++total;
  }
  CHECK(correct == total);
}

TEST_CASE("png round trip and quantization") {
  TempDir dir("png");
  CHECK(io::quantize(0.5f) == 128);
  CHECK(io::quantize(0.0f) == 0);
  CHECK(io::quantize(1.0f) == 255);
  CHECK(io::quantize(1.7f) == 255);

  io::write_png(Image(4, 5, 3, 0.5f), dir.path / "half.png");
  const auto half = io::read_png(dir.path / "half.png");
  CHECK(half.height == 4);
  CHECK(half.width == 5);
  for (float v : half.pixels) CHECK(v == 128.0f / 255.0f);

  Image img(6, 6, 3);
  for (std::size_t k = 0; k < img.pixels.size(); ++k) img.pixels[k] = static_cast<float>(k % 7) / 6.0f;
  img.pixels[0] = 0.0f;
  img.pixels[1] = 1.0f;
  io::write_png(img, dir.path / "ramp.png");
  const auto back = io::read_image(dir.path / "ramp.png");
  CHECK(back.pixels[0] == 0.0f);
  CHECK(back.pixels[1] == 1.0f);
  for (std::size_t k = 0; k < img.pixels.size(); ++k) CHECK(std::abs(back.pixels[k] - img.pixels[k]) <= 0.5f / 255.0f + 1e-7f);
}

TEST_CASE("alpha is dropped and bad files are reported") {
  TempDir dir("alpha");
  write_rgba(dir.path / "rgba.png", 3, 2);
  const auto img = io::read_png(dir.path / "rgba.png");
  CHECK(img.channels == 3);
  CHECK(img.at(1, 2, 0) == 1.0f);
  CHECK(img.at(1, 2, 2) == 0.2f);

  CHECK_THROWS_AS(io::read_image(dir.path / "missing.png"), Error);
  std::ofstream(dir.path / "junk.png") << "definitely not an image";
  CHECK_THROWS_AS(io::read_image(dir.path / "junk.png"), Error);
}

TEST_CASE("image directories") {
  TempDir dir("dir");
  for (int i = 0; i < 3; ++i) {
    io::write_png(Image(10, 10, 3, 0.1f * (i + 1)), dir.path / ("img" + std::to_string(2 - i) + ".png"));
  }
  const auto plain = load_image_dir(dir.path, std::nullopt, 8);
  CHECK(plain.size() == 3);
  CHECK_FALSE(plain.has_labels());
  CHECK(plain.image(0).width == 8);
  CHECK(plain.image(0).at(0, 0, 0) == doctest::Approx(0.3).epsilon(0.01));  // img0 sorts first

  std::ofstream(dir.path / "labels.csv") << "filename,label\nimg0.png,1\nimg1.png,0\nimg2.png,1\n";
  const auto labeled = load_image_dir(dir.path, dir.path / "labels.csv", 0);
  CHECK(labeled.num_classes() == 2);
  CHECK(labeled.labels() == std::vector<int>{1, 0, 1});

  std::ofstream(dir.path / "dup.csv") << "filename,label\nimg0.png,1\nimg0.png,0\n";
  CHECK_THROWS_AS(load_image_dir(dir.path, dir.path / "dup.csv", 0), Error);
  std::ofstream(dir.path / "missing.csv") << "filename,label\nimg0.png,1\nghost.png,0\n";
  CHECK_THROWS_WITH(load_image_dir(dir.path, dir.path / "missing.csv", 0), doctest::Contains("ghost.png"));
}

TEST_CASE("dataset directories") {
  TempDir dir("synth");
  SynthConfig cfg;
  cfg.image_size = 16;
  cfg.counts = {12, 6, 3, 6};
  const auto ds = generate_dataset(cfg, 5);
  write_dataset(ds, cfg, 5, dir.path);
  CHECK(is_dataset_root(dir.path));
  CHECK(fs::exists(dir.path / "test" / "00000_0.png"));
  CHECK(fs::exists(dir.path / "finetune-train" / "labels.csv"));
  CHECK_FALSE(fs::exists(dir.path / "pretrain" / "labels.csv"));
  const auto manifest = nlohmann::json::parse(std::ifstream(dir.path / "manifest.json"));
  CHECK(manifest.at("seed") == 5);
  CHECK(manifest.at("counts").at("pretrain") == 12);

  const auto test = load_split(dir.path, Split::Test, 0);
  CHECK(test.size() == 6);
  CHECK(test.labels() == ds.test.labels());
  for (std::size_t i = 0; i < 6; ++i) CHECK(mean_abs_difference(test.image(i), ds.test.image(i)) <= 0.5 / 255 + 1e-7);
  const auto pre = load_split(dir.path, Split::Pretrain, 0);
  CHECK(pre.size() == 12);
  CHECK_FALSE(pre.has_labels());
  CHECK(parse_split("finetune-val") == Split::FinetuneVal);
  CHECK_THROWS_AS(parse_split("validation"), Error);
}
