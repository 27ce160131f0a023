#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "poco/augment.hpp"
#include "poco/contrastive.hpp"
#include "poco/model.hpp"
#include "poco/synth.hpp"

namespace poco::pipeline {

struct FinetuneConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  model::FinetuneScope scope = model::FinetuneScope::AllHeads;
  double hflip_prob = 0.5;  // random horizontal flips of the training images
};

struct DataConfig {
  // Fraction of a plain labeled directory held out for validation.
  double val_fraction = 0.2;
  data::SynthConfig synth;
};

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  double tau = 0.5;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::optional<std::vector<std::size_t>> stage_plan;  // negative counts per stage
  bool use_polar = true;
  bool use_pcl = true;
  std::optional<double> polar_r_max;  // default: half the input width
  contrastive::SelectionOptions mining;
  model::ModelConfig model;
  augment::AugmentConfig augment;
  DataConfig data;
  FinetuneConfig finetune;

  std::vector<contrastive::StagePlan> plan() const;
};

/// Cross-field checks: batch size and stage plan, augment output extent equal
/// to the model input, synth classes equal to the model classes.
void validate(const TrainConfig& cfg);

/// Missing keys keep their defaults; unknown keys at any level throw.
TrainConfig config_from_json(const nlohmann::json& j);
TrainConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const TrainConfig& cfg);

nlohmann::json model_to_json(const model::ModelConfig& m);
model::ModelConfig model_from_json(const nlohmann::json& j);

}  // namespace poco::pipeline
