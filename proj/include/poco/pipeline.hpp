#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poco/checkpoint.hpp"
#include "poco/config.hpp"
#include "poco/metrics.hpp"
#include "poco/polar.hpp"
#include "poco/synth.hpp"

namespace poco::pipeline {

using Progress = std::function<void(const std::string&)>;

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t batch = 0;  // 0-based within the epoch
  double total = 0;
  std::vector<double> stages;  // one entry per active stage
};

struct LossHistory {
  std::vector<LossRecord> records;
  std::size_t batches_per_epoch = 0;

  /// epoch,batch,l_total,l_stage1,l_stage2,l_stage3 (inactive stages left empty).
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;

  /// Mean l_total over the last `window` batches ending with the final batch
  /// of `epoch` (fewer when the run is shorter than the window).
  double moving_average_at_epoch(std::size_t epoch, std::size_t window = 20) const;
  std::size_t epochs() const;
};

/// Square resize to `size`, then the polar warp when a grid is given.
Image prepare_input(const Image& image, std::size_t size, const polar::PolarGrid* grid);

/// The two views of sample `index` in `epoch`: augment each independently,
/// then warp both with the same grid (no warp when grid is null).
std::pair<Image, Image> make_views(const Image& image, const augment::AugmentConfig& cfg,
                                   const polar::PolarGrid* grid, std::uint64_t seed, std::size_t epoch,
                                   std::size_t index);

/// Seeded Fisher-Yates permutation of 0..n-1 for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

std::optional<polar::PolarGrid> make_grid(const TrainConfig& cfg);

struct PretrainResult {
  Checkpoint checkpoint;
  LossHistory history;
  std::vector<contrastive::StagePlan> plan;
  std::size_t label_reads = 0;  // label accesses observed during the run; always 0
};

/// Contrastive pretraining on unlabeled images. Drops the last incomplete
/// batch in every epoch.
PretrainResult pretrain(const TrainConfig& cfg, data::UnlabeledImages images, const Progress& progress = {});

/// Same, taking the images of a dataset and auditing that no label is read.
PretrainResult pretrain(const TrainConfig& cfg, const data::LabeledDataset& dataset, const Progress& progress = {});

struct ValPoint {
  std::size_t epoch = 0;  // 0 is the initial classifier
  double train_loss = 0;
  double val_accuracy = 0;
};

struct FinetuneResult {
  Checkpoint checkpoint;
  std::vector<ValPoint> curve;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0;
};

/// Frozen-backbone fine-tuning with cross-entropy. With pretrained == nullptr
/// the backbone keeps its random initialization (baseline mode). The
/// parameters with the best validation accuracy (earliest on ties) are kept.
FinetuneResult finetune(const Checkpoint* pretrained, const TrainConfig& cfg, const data::LabeledDataset& train,
                        const data::LabeledDataset& val, const Progress& progress = {});

void write_val_curve(const std::vector<ValPoint>& curve, const std::filesystem::path& path);

/// Row-major n x K softmax probabilities of an eval-mode forward pass.
std::vector<double> predict_probabilities(const Checkpoint& ckpt, const data::LabeledDataset& data);

metrics::MetricsReport evaluate(const Checkpoint& ckpt, const data::LabeledDataset& data);

/// Metrics plus the checkpoint's training config and hash.
nlohmann::json evaluation_json(const metrics::MetricsReport& report, const Checkpoint& ckpt);

struct Embedding {
  std::vector<float> features;  // n x dim
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<int> labels;  // empty for unlabeled data
};

Embedding embed(const Checkpoint& ckpt, const data::LabeledDataset& data, model::FeatureStage stage);

/// Stratified, seeded train/validation split of a labeled dataset.
std::pair<data::LabeledDataset, data::LabeledDataset> split_train_val(const data::LabeledDataset& data,
                                                                      double val_fraction, std::uint64_t seed);

}  // namespace poco::pipeline
