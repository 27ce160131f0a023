#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poco/image.hpp"
#include "poco/ops.hpp"
#include "poco/tensor.hpp"

namespace poco::model {

enum class Backbone { Tiny, MiniRes };
enum class FeatureStage { F, H1, H2 };
enum class Mode { Train, Eval };

/// Which non-backbone layers fine-tuning updates.
enum class FinetuneScope { AllHeads, ClassifierOnly };

std::string_view to_string(Backbone b);
std::string_view to_string(FeatureStage s);
Backbone parse_backbone(std::string_view s);
FeatureStage parse_feature_stage(std::string_view s);

struct ModelConfig {
  Backbone backbone = Backbone::Tiny;
  std::size_t input_size = 64;
  std::size_t in_channels = 3;
  std::array<std::size_t, 3> dims{128, 64, 32};  // D0, D1 = D0/2, D2 = D0/4
  std::size_t num_classes = 3;
  bool head_relu = false;  // ReLU between FC1 and FC2
  FeatureStage probe_on = FeatureStage::F;

  bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& cfg);

template <typename T>
struct StageFeatures {
  nn::Tensor<T> f;
  nn::Tensor<T> h1;
  nn::Tensor<T> h2;

  const nn::Tensor<T>& at(FeatureStage s) const {
    return s == FeatureStage::F ? f : (s == FeatureStage::H1 ? h1 : h2);
  }
};

/// float32 named array as stored in checkpoints.
struct NamedArray {
  std::string name;
  nn::Shape shape;
  std::vector<float> values;

  bool operator==(const NamedArray&) const = default;
};

/// Packs images (all the same extent) into an (n, C, H, W) tensor.
template <typename T>
nn::Tensor<T> images_to_tensor(std::span<const Image> images);

/// Backbone CNN + two projection FC layers (f -> h1 -> h2) + classifier head.
template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  // Parameters share storage with their tensors; copy through state().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }

  /// (n, C, S, S) -> f of shape (n, D0). BN uses batch statistics in Train
  /// mode and running statistics in Eval mode; a frozen backbone always runs
  /// in Eval mode.
  nn::Tensor<T> forward_backbone(const nn::Tensor<T>& images, Mode mode);
  StageFeatures<T> project(const nn::Tensor<T>& f);
  StageFeatures<T> forward_features(const nn::Tensor<T>& images, Mode mode);

  /// Logits (n, K) from backbone features f; routes through the projection
  /// heads first when probe_on is h1/h2.
  nn::Tensor<T> forward_classifier(const nn::Tensor<T>& f);
  std::size_t classifier_input_dim() const;

  void reset_classifier(std::uint64_t seed);

  void freeze_backbone(bool frozen = true) noexcept { frozen_ = frozen; }
  bool backbone_frozen() const noexcept { return frozen_; }

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<nn::Parameter<T>*> backbone_parameters();
  std::vector<nn::Parameter<T>*> head_parameters();
  std::vector<nn::Parameter<T>*> classifier_parameters();
  /// Classifier, plus the projection heads when scope is AllHeads and the
  /// probe reads h1/h2, plus the backbone when it is not frozen.
  std::vector<nn::Parameter<T>*> trainable_parameters(FinetuneScope scope);

  /// Parameters and batch-norm buffers in a fixed order.
  std::vector<NamedArray> state() const;
  void load_state(std::span<const NamedArray> arrays);
  /// Number of named arrays in state().
  std::size_t state_size() const;
  /// Scalar count over parameters() (buffers excluded).
  std::size_t parameter_count() const;

  /// FNV-1a over backbone parameter and buffer bytes.
  std::uint64_t backbone_checksum() const;

 private:
  struct ConvBlock {
    nn::Parameter<T> weight;
    nn::Parameter<T> gamma;
    nn::Parameter<T> beta;
    nn::BatchNormBuffers<T> bn;
    std::size_t stride = 1;
    bool residual = false;  // adds the block input before the ReLU
  };

  ModelConfig cfg_;
  std::vector<ConvBlock> blocks_;
  nn::Parameter<T> fc1_w_, fc1_b_, fc2_w_, fc2_b_, cls_w_, cls_b_;
  bool frozen_ = false;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace poco::model
