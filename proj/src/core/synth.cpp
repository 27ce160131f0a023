#include "poco/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "poco/error.hpp"
#include "poco/image_io.hpp"

namespace poco::data {

namespace {
constexpr const char* kModule = "synth_data";
constexpr double kDiscRadius = 0.45;
constexpr double kDiscEdge = 0.02;
constexpr double kRingWidth = 0.025;
constexpr double kDiscLevel = 0.25;
constexpr double kRingLevel = 0.65;
constexpr double kChannelWeights[3][2] = {{1.0, 1.0}, {0.55, 0.8}, {0.3, 0.5}};  // (disc, ring)

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}
}  // namespace

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::FinetuneTrain: return "finetune-train";
    case Split::FinetuneVal: return "finetune-val";
    case Split::Test: return "test";
  }
  return "pretrain";
}

Split parse_split(std::string_view s) {
  for (auto sp : {Split::Pretrain, Split::FinetuneTrain, Split::FinetuneVal, Split::Test}) {
    if (split_name(sp) == s) return sp;
  }
  fail(ErrorKind::InvalidArgument, kModule, "unknown split '" + std::string(s) + "'");
}

LabeledDataset::LabeledDataset(Split split, std::vector<Image> images, std::vector<int> labels,
                               std::size_t num_classes)
    : split_(split), images_(std::move(images)), labels_(std::move(labels)), num_classes_(num_classes) {
  if (!labels_.empty() && labels_.size() != images_.size()) {
    fail(ErrorKind::InvalidArgument, kModule,
         std::to_string(labels_.size()) + " labels for " + std::to_string(images_.size()) + " images");
  }
  for (auto l : labels_) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes_) {
      fail(ErrorKind::InvalidArgument, kModule,
           "label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes_) + ")");
    }
  }
}

int LabeledDataset::label(std::size_t i) const {
  if (labels_.empty()) fail(ErrorKind::InvalidArgument, kModule, "dataset has no labels");
  ++label_reads_;
  return labels_.at(i);
}

std::vector<int> LabeledDataset::labels() const {
  if (labels_.empty()) fail(ErrorKind::InvalidArgument, kModule, "dataset has no labels");
  label_reads_ += labels_.size();
  return labels_;
}

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> h(num_classes_, 0);
  for (auto l : labels()) ++h[static_cast<std::size_t>(l)];
  return h;
}

std::size_t SplitCounts::of(Split s) const {
  switch (s) {
    case Split::Pretrain: return pretrain;
    case Split::FinetuneTrain: return finetune_train;
    case Split::FinetuneVal: return finetune_val;
    case Split::Test: return test;
  }
  return 0;
}

void validate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) fail(ErrorKind::InvalidArgument, kModule, "need at least 2 classes");
  if (cfg.ring_radii.size() != cfg.num_classes || cfg.angular_freqs.size() != cfg.num_classes) {
    fail(ErrorKind::InvalidArgument, kModule, "ring_radii and angular_freqs need one entry per class");
  }
  std::set<double> seen;
  for (auto r : cfg.ring_radii) {
    if (!(r > 0.0 && r <= 0.5)) fail(ErrorKind::InvalidArgument, kModule, "ring radii must lie in (0, 0.5]");
    if (!seen.insert(r).second) fail(ErrorKind::InvalidArgument, kModule, "ring radii must differ between classes");
  }
  for (auto f : cfg.angular_freqs) {
    if (f < 0) fail(ErrorKind::InvalidArgument, kModule, "angular frequencies must be >= 0");
  }
  if (cfg.image_size < 8) fail(ErrorKind::InvalidArgument, kModule, "image_size must be >= 8");
  if (!(cfg.noise_sigma >= 0)) fail(ErrorKind::InvalidArgument, kModule, "noise_sigma must be >= 0");
  if (!(cfg.center_jitter >= 0 && cfg.center_jitter < 0.25) || !(cfg.radius_jitter >= 0 && cfg.radius_jitter < 0.1) ||
      !(cfg.gain_jitter >= 0 && cfg.gain_jitter < 1)) {
    fail(ErrorKind::InvalidArgument, kModule,
         "nuisance ranges: center_jitter in [0, 0.25), radius_jitter in [0, 0.1), gain_jitter in [0, 1)");
  }
}

Image render_sample(const SynthConfig& cfg, std::size_t class_id, double rotation_deg, const Nuisance& nz) {
  if (class_id >= cfg.num_classes) {
    fail(ErrorKind::InvalidArgument, kModule,
         "class " + std::to_string(class_id) + " outside [0, " + std::to_string(cfg.num_classes) + ")");
  }
  const auto S = cfg.image_size;
  const double cx = (static_cast<double>(S) - 1.0) / 2.0 + nz.dx;
  const double cy = (static_cast<double>(S) - 1.0) / 2.0 + nz.dy;
  const double radius = cfg.ring_radii[class_id] + nz.radius_offset;
  const int freq = cfg.angular_freqs[class_id];
  const double rot = rotation_deg * std::numbers::pi / 180.0;
  Image img(S, S, 3);
  for (std::size_t y = 0; y < S; ++y) {
    for (std::size_t x = 0; x < S; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double rho = std::hypot(dx, dy) / static_cast<double>(S);
      const double theta = std::atan2(dy, dx);
      const double disc = kDiscLevel * std::clamp((kDiscRadius - rho) / kDiscEdge + 0.5, 0.0, 1.0);
      const double z = (rho - radius) / kRingWidth;
      double ring = kRingLevel * std::exp(-0.5 * z * z);
      if (freq > 0) ring *= 0.5 + 0.5 * std::cos(freq * (theta - rot));
      double spot = 0;
      for (const auto& sp : nz.spots) {
        const double sx = static_cast<double>(x) - sp.x, sy = static_cast<double>(y) - sp.y;
        spot += sp.amplitude * std::exp(-(sx * sx + sy * sy) / (2 * sp.sigma * sp.sigma));
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = kChannelWeights[ch][0] * disc + kChannelWeights[ch][1] * (ring + spot);
        img.at(y, x, ch) = static_cast<float>(std::clamp(nz.gain[ch] * v, 0.0, 1.0));
      }
    }
  }
  return img;
}

Sample generate_sample(std::size_t class_id, const SynthConfig& cfg, RngStream& rng) {
  Sample s;
  s.rotation_deg = cfg.random_rotation ? rng.uniform(0.0, 360.0) : 0.0;
  const auto S = static_cast<double>(cfg.image_size);
  auto& nz = s.nuisance;
  if (cfg.center_jitter > 0) {
    nz.dx = rng.uniform(-cfg.center_jitter, cfg.center_jitter) * S;
    nz.dy = rng.uniform(-cfg.center_jitter, cfg.center_jitter) * S;
  }
  if (cfg.radius_jitter > 0) nz.radius_offset = rng.uniform(-cfg.radius_jitter, cfg.radius_jitter);
  if (cfg.gain_jitter > 0) {
    for (auto& g : nz.gain) g = rng.uniform(1 - cfg.gain_jitter, 1 + cfg.gain_jitter);
  }
  for (std::size_t k = 0; k < cfg.spots; ++k) {
    // Uniform over the disc by area.
    const double r = std::sqrt(rng.uniform()) * (kDiscRadius - 0.03) * S;
    const double t = rng.uniform(0.0, 2 * std::numbers::pi);
    Spot sp;
    sp.x = (S - 1) / 2 + nz.dx + r * std::cos(t);
    sp.y = (S - 1) / 2 + nz.dy + r * std::sin(t);
    sp.sigma = rng.uniform(0.02, 0.04) * S;
    sp.amplitude = rng.uniform(0.3, 0.7);
    nz.spots.push_back(sp);
  }
  s.image = render_sample(cfg, class_id, s.rotation_deg, nz);
  s.label = static_cast<int>(class_id);
  if (cfg.noise_sigma > 0) {
    for (auto& v : s.image.pixels) {
      v = static_cast<float>(std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0));
    }
  }
  return s;
}

RngStream sample_stream(std::uint64_t seed, Split split, std::size_t index) {
  return RngStream(seed, combine_ids(0x73706c6974ULL + static_cast<std::uint64_t>(split), index));
}

const LabeledDataset& SyntheticDataset::get(Split s) const {
  switch (s) {
    case Split::Pretrain: return pretrain;
    case Split::FinetuneTrain: return finetune_train;
    case Split::FinetuneVal: return finetune_val;
    case Split::Test: return test;
  }
  return pretrain;
}

SyntheticDataset generate_dataset(const SynthConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const auto make = [&](Split split) {
    const auto n = cfg.counts.of(split);
    if (split != Split::Pretrain && n < cfg.num_classes) {
      fail(ErrorKind::InvalidArgument, kModule,
           std::string(split_name(split)) + " needs at least one sample per class");
    }
    std::vector<Image> images(n);
    std::vector<int> labels(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      auto rng = sample_stream(seed, split, i);
      auto s = generate_sample(i % cfg.num_classes, cfg, rng);
      images[i] = std::move(s.image);
      labels[i] = s.label;
    }
    if (split == Split::Pretrain) labels.clear();
    return LabeledDataset(split, std::move(images), std::move(labels), cfg.num_classes);
  };
  SyntheticDataset ds;
  ds.pretrain = make(Split::Pretrain);
  ds.finetune_train = make(Split::FinetuneTrain);
  ds.finetune_val = make(Split::FinetuneVal);
  ds.test = make(Split::Test);
  return ds;
}

Image smooth_random_image(std::size_t size, std::size_t channels, RngStream& rng) {
  Image img(size, size, channels);
  const auto S = static_cast<double>(size);
  constexpr int kBlobs = 5;
  struct Blob {
    double x, y, sigma;
    double amp[4];
  };
  std::vector<Blob> blobs(kBlobs);
  for (auto& b : blobs) {
    b.x = rng.uniform(0.15, 0.85) * S;
    b.y = rng.uniform(0.15, 0.85) * S;
    b.sigma = rng.uniform(0.08, 0.18) * S;
    for (auto& a : b.amp) a = rng.uniform(0.1, 0.5);
  }
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        double v = 0;
        for (const auto& b : blobs) {
          const double dx = static_cast<double>(x) - b.x, dy = static_cast<double>(y) - b.y;
          v += b.amp[c % 4] * std::exp(-(dx * dx + dy * dy) / (2 * b.sigma * b.sigma));
        }
        img.at(y, x, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

void write_dataset(const SyntheticDataset& ds, const SynthConfig& cfg, std::uint64_t seed,
                   const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  nlohmann::json counts;
  for (auto split : {Split::Pretrain, Split::FinetuneTrain, Split::FinetuneVal, Split::Test}) {
    const auto& part = ds.get(split);
    const auto dir = root / std::string(split_name(split));
    fs::create_directories(dir);
    // Pretrain files carry their class in the name for bookkeeping; no labels.csv is written,
    // so loaders treat the split as unlabeled.
    const auto& full = split == Split::Pretrain ? std::vector<int>{} : part.labels();
    std::ostringstream csv;
    csv << "filename,label\n";
    for (std::size_t i = 0; i < part.size(); ++i) {
      const int label = full.empty() ? static_cast<int>(i % cfg.num_classes) : full[i];
      char name[64];
      std::snprintf(name, sizeof name, "%05zu_%d.png", i, label);
      io::write_png(part.image(i), dir / name);
      csv << name << ',' << label << '\n';
    }
    if (split != Split::Pretrain) {
      std::ofstream(dir / "labels.csv", std::ios::binary) << csv.str();
    }
    counts[std::string(split_name(split))] = part.size();
  }
  nlohmann::json manifest = {
      {"format", "poco-synth"},
      {"seed", seed},
      {"counts", counts},
      {"config",
       {{"image_size", cfg.image_size},
        {"num_classes", cfg.num_classes},
        {"ring_radii", cfg.ring_radii},
        {"angular_freqs", cfg.angular_freqs},
        {"noise_sigma", cfg.noise_sigma},
        {"random_rotation", cfg.random_rotation},
        {"center_jitter", cfg.center_jitter},
        {"radius_jitter", cfg.radius_jitter},
        {"gain_jitter", cfg.gain_jitter},
        {"spots", cfg.spots}}},
  };
  std::ofstream(root / "manifest.json", std::ios::binary) << manifest.dump(2) << '\n';
}

LabeledDataset load_image_dir(const std::filesystem::path& dir,
                              const std::optional<std::filesystem::path>& labels_file,
                              std::size_t image_size, Split split) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorKind::Io, kModule, "not a directory: " + dir.string());
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path().filename().string());
  }
  std::sort(files.begin(), files.end());

  std::vector<int> labels;
  std::size_t num_classes = 0;
  if (labels_file) {
    std::ifstream in(*labels_file);
    if (!in) fail(ErrorKind::Io, kModule, "cannot open labels file " + labels_file->string());
    std::map<std::string, int> table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      line = trim(line);
      if (line.empty()) continue;
      const auto comma = line.find(',');
      if (comma == std::string::npos) {
        fail(ErrorKind::Format, kModule, labels_file->string() + ":" + std::to_string(line_no) + ": expected filename,label");
      }
      const auto name = trim(line.substr(0, comma));
      const auto value = trim(line.substr(comma + 1));
      if (line_no == 1 && name == "filename") continue;
      int label = 0;
      try {
        std::size_t used = 0;
        label = std::stoi(value, &used);
        if (used != value.size() || label < 0) throw std::invalid_argument(value);
      } catch (const std::exception&) {
        fail(ErrorKind::Format, kModule,
             labels_file->string() + ":" + std::to_string(line_no) + ": bad label '" + value + "'");
      }
      if (!table.emplace(name, label).second) {
        fail(ErrorKind::Format, kModule, labels_file->string() + ": duplicate row for '" + name + "'");
      }
    }
    std::vector<std::string> missing;
    for (const auto& [name, label] : table) {
      if (!std::binary_search(files.begin(), files.end(), name)) missing.push_back(name);
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      fail(ErrorKind::Io, kModule, "labels file references missing images: " + list);
    }
    files.clear();
    for (const auto& [name, label] : table) {
      files.push_back(name);
      labels.push_back(label);
      num_classes = std::max<std::size_t>(num_classes, static_cast<std::size_t>(label) + 1);
    }
  }

  std::vector<Image> images;
  images.reserve(files.size());
  for (const auto& f : files) {
    auto img = io::read_image(dir / f);
    if (image_size > 0) img = resize(img, image_size, image_size);
    images.push_back(std::move(img));
  }
  return LabeledDataset(split, std::move(images), std::move(labels), num_classes);
}

bool is_dataset_root(const std::filesystem::path& dir) {
  return std::filesystem::is_regular_file(dir / "manifest.json");
}

LabeledDataset load_split(const std::filesystem::path& root, Split split, std::size_t image_size) {
  const auto dir = root / std::string(split_name(split));
  const auto labels = dir / "labels.csv";
  std::optional<std::filesystem::path> lf;
  if (std::filesystem::is_regular_file(labels)) lf = labels;
  auto ds = load_image_dir(dir, lf, image_size, split);
  if (lf) {
    // K comes from the manifest so that a split missing the top class keeps the full head size.
    std::ifstream in(root / "manifest.json");
    const auto manifest = nlohmann::json::parse(in, nullptr, false);
    if (!manifest.is_discarded() && manifest.contains("config")) {
      const auto k = manifest["config"].value("num_classes", ds.num_classes());
      if (k > ds.num_classes()) {
        std::vector<Image> imgs = ds.images();
        return LabeledDataset(split, std::move(imgs), ds.labels(), k);
      }
    }
  }
  return ds;
}

}  // namespace poco::data
