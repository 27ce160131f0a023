#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poco/image.hpp"
#include "poco/rng.hpp"

namespace poco::data {

enum class Split { Pretrain, FinetuneTrain, FinetuneVal, Test };

std::string_view split_name(Split s);  // "pretrain", "finetune-train", ...
Split parse_split(std::string_view s);

/// Images only. This is all the pretraining loop ever sees, so labels cannot
/// leak into it.
struct UnlabeledImages {
  std::span<const Image> images;
  std::size_t size() const noexcept { return images.size(); }
};

class LabeledDataset {
 public:
  LabeledDataset() = default;
  /// labels may be empty (unlabeled split); otherwise one per image in [0, num_classes).
  LabeledDataset(Split split, std::vector<Image> images, std::vector<int> labels, std::size_t num_classes);

  Split split() const noexcept { return split_; }
  std::size_t size() const noexcept { return images_.size(); }
  std::size_t num_classes() const noexcept { return num_classes_; }
  bool has_labels() const noexcept { return !labels_.empty(); }
  const Image& image(std::size_t i) const { return images_.at(i); }
  const std::vector<Image>& images() const noexcept { return images_; }

  /// Every label access is counted (see label_reads()).
  int label(std::size_t i) const;
  std::vector<int> labels() const;
  std::size_t label_reads() const noexcept { return label_reads_; }

  UnlabeledImages unlabeled() const noexcept { return {images_}; }

  /// Class histogram (reads every label).
  std::vector<std::size_t> class_counts() const;

 private:
  Split split_ = Split::Pretrain;
  std::vector<Image> images_;
  std::vector<int> labels_;
  std::size_t num_classes_ = 0;
  mutable std::size_t label_reads_ = 0;
};

struct SplitCounts {
  std::size_t pretrain = 600;
  std::size_t finetune_train = 150;
  std::size_t finetune_val = 75;
  std::size_t test = 150;

  std::size_t of(Split s) const;
};

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t num_classes = 3;
  std::vector<double> ring_radii{0.20, 0.30, 0.40};  // fraction of image size, one per class
  std::vector<int> angular_freqs{0, 4, 8};           // lesion modulation cycles per turn, one per class
  double noise_sigma = 0.05;
  bool random_rotation = true;
  // Per-sample nuisance factors, all off by default.
  double center_jitter = 0;  // disc center offset, uniform in +-center_jitter * image_size per axis
  double radius_jitter = 0;  // ring radius offset, uniform in +-radius_jitter (fraction of image size)
  double gain_jitter = 0;    // per-channel intensity gain, uniform in [1 - g, 1 + g]
  std::size_t spots = 0;     // bright Gaussian spots scattered over the disc
  SplitCounts counts;
};

/// Throws unless radii lie in (0, 0.5] and differ across classes, K >= 2 and
/// the per-class tables have K entries.
void validate(const SynthConfig& cfg);

struct Spot {
  double x = 0, y = 0;  // pixels
  double sigma = 1;     // pixels
  double amplitude = 0;
};

/// Concrete draw of the nuisance factors of one sample.
struct Nuisance {
  double dx = 0, dy = 0;  // pixels
  double radius_offset = 0;
  double gain[3] = {1, 1, 1};
  std::vector<Spot> spots;
};

/// Noise-free raster of class_id at the given rotation: black background, a
/// dim fundus disc, and a bright annulus at the class radius whose intensity
/// is modulated as 0.5 + 0.5 cos(freq (theta - rotation)) (unmodulated for
/// freq 0). Rotation is about the disc center.
Image render_sample(const SynthConfig& cfg, std::size_t class_id, double rotation_deg,
                    const Nuisance& nuisance = {});

/// Draws the rotation (uniform [0, 360) when enabled) and the nuisance
/// factors, renders, then adds Gaussian noise of noise_sigma clamped to [0, 1].
struct Sample {
  Image image;
  int label = 0;
  double rotation_deg = 0;
  Nuisance nuisance;
};
Sample generate_sample(std::size_t class_id, const SynthConfig& cfg, RngStream& rng);

/// Stream used for sample `index` of `split`.
RngStream sample_stream(std::uint64_t seed, Split split, std::size_t index);

struct SyntheticDataset {
  LabeledDataset pretrain;
  LabeledDataset finetune_train;
  LabeledDataset finetune_val;
  LabeledDataset test;

  const LabeledDataset& get(Split s) const;
};

/// Labels cycle 0..K-1 by index (stratified to within one per class); each
/// split draws from its own family of streams.
SyntheticDataset generate_dataset(const SynthConfig& cfg, std::uint64_t seed);

/// Smooth random test image: a sum of a few Gaussian blobs.
Image smooth_random_image(std::size_t size, std::size_t channels, RngStream& rng);

/// <root>/<split>/<index>_<label>.png for every split, labels.csv
/// (filename,label) for labeled splits and manifest.json at the root.
void write_dataset(const SyntheticDataset& ds, const SynthConfig& cfg, std::uint64_t seed,
                   const std::filesystem::path& root);

/// Directory of PNG/JPEG files in filename order, each resized to image_size
/// (0 keeps the native size). With a labels CSV the dataset holds exactly the
/// listed files and K = max label + 1.
LabeledDataset load_image_dir(const std::filesystem::path& dir,
                              const std::optional<std::filesystem::path>& labels_file,
                              std::size_t image_size, Split split = Split::Pretrain);

/// True when dir holds a manifest.json written by write_dataset.
bool is_dataset_root(const std::filesystem::path& dir);

/// One split of a write_dataset directory.
LabeledDataset load_split(const std::filesystem::path& root, Split split, std::size_t image_size);

}  // namespace poco::data
