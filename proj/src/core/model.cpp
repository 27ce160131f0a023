#include "poco/model.hpp"

#include <cmath>
#include <cstring>

#include "poco/error.hpp"
#include "poco/rng.hpp"

namespace poco::model {

namespace {
constexpr const char* kModule = "model";

template <typename T>
nn::Parameter<T> he_normal(std::string name, nn::Shape shape, std::size_t fan_in, RngStream& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> v(nn::shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(sd * rng.normal());
  return {std::move(name), nn::Tensor<T>::from(std::move(shape), std::move(v), true)};
}

template <typename T>
nn::Parameter<T> constant(std::string name, nn::Shape shape, T value) {
  return {std::move(name), nn::Tensor<T>::full(std::move(shape), value, true)};
}

void fnv(std::uint64_t& h, const void* data, std::size_t bytes) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
}
}  // namespace

std::string_view to_string(Backbone b) { return b == Backbone::Tiny ? "tiny" : "mini-res"; }

std::string_view to_string(FeatureStage s) {
  switch (s) {
    case FeatureStage::F: return "f";
    case FeatureStage::H1: return "h1";
    case FeatureStage::H2: return "h2";
  }
  return "f";
}

Backbone parse_backbone(std::string_view s) {
  if (s == "tiny") return Backbone::Tiny;
  if (s == "mini-res") return Backbone::MiniRes;
  fail(ErrorKind::InvalidArgument, kModule, "unknown backbone '" + std::string(s) + "' (tiny|mini-res)");
}

FeatureStage parse_feature_stage(std::string_view s) {
  if (s == "f") return FeatureStage::F;
  if (s == "h1") return FeatureStage::H1;
  if (s == "h2") return FeatureStage::H2;
  fail(ErrorKind::InvalidArgument, kModule, "unknown feature stage '" + std::string(s) + "' (f|h1|h2)");
}

void validate(const ModelConfig& cfg) {
  const auto d0 = cfg.dims[0];
  if (d0 == 0 || d0 % 8 != 0) {
    fail(ErrorKind::InvalidArgument, kModule, "D0 must be a positive multiple of 8 (channel ladder D0/8..D0)");
  }
  if (cfg.dims[1] != d0 / 2 || cfg.dims[2] != d0 / 4) {
    fail(ErrorKind::InvalidArgument, kModule,
         "dims must halve: expected (" + std::to_string(d0) + ", " + std::to_string(d0 / 2) + ", " +
             std::to_string(d0 / 4) + ")");
  }
  if (cfg.input_size < 8) fail(ErrorKind::InvalidArgument, kModule, "input_size must be >= 8");
  if (cfg.in_channels == 0) fail(ErrorKind::InvalidArgument, kModule, "in_channels must be positive");
  if (cfg.num_classes < 2) fail(ErrorKind::InvalidArgument, kModule, "num_classes must be >= 2");
}

template <typename T>
nn::Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) fail(ErrorKind::InvalidArgument, kModule, "empty image batch");
  const auto& first = images.front();
  const auto C = first.channels, H = first.height, W = first.width;
  std::vector<T> v(images.size() * C * H * W);
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!images[n].same_extent(first)) {
      fail(ErrorKind::Shape, kModule, "image " + std::to_string(n) + " differs in extent from image 0");
    }
    T* dst = v.data() + n * C * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < C; ++c) dst[(c * H + y) * W + x] = static_cast<T>(images[n].at(y, x, c));
      }
    }
  }
  return nn::Tensor<T>::from({images.size(), C, H, W}, std::move(v), false);
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  RngStream rng(seed, 0x6d6f64656cULL);  // "model"
  const auto d0 = cfg_.dims[0];
  const std::array<std::size_t, 4> widths{d0 / 8, d0 / 4, d0 / 2, d0};
  std::size_t in = cfg_.in_channels;
  std::size_t index = 0;
  const auto add_block = [&](std::size_t cin, std::size_t cout, std::size_t stride, bool residual) {
    const auto prefix = "backbone.block" + std::to_string(index++);
    ConvBlock b;
    b.weight = he_normal<T>(prefix + ".conv.weight", {cout, cin, 3, 3}, cin * 9, rng);
    b.gamma = constant<T>(prefix + ".bn.weight", {cout}, T(1));
    b.beta = constant<T>(prefix + ".bn.bias", {cout}, T(0));
    b.bn = nn::BatchNormBuffers<T>(cout);
    b.stride = stride;
    b.residual = residual;
    blocks_.push_back(std::move(b));
  };
  for (auto w : widths) {
    add_block(in, w, 2, false);
    if (cfg_.backbone == Backbone::MiniRes) add_block(w, w, 1, true);
    in = w;
  }
  fc1_w_ = he_normal<T>("head.fc1.weight", {cfg_.dims[1], d0}, d0, rng);
  fc1_b_ = constant<T>("head.fc1.bias", {cfg_.dims[1]}, T(0));
  fc2_w_ = he_normal<T>("head.fc2.weight", {cfg_.dims[2], cfg_.dims[1]}, cfg_.dims[1], rng);
  fc2_b_ = constant<T>("head.fc2.bias", {cfg_.dims[2]}, T(0));
  reset_classifier(combine_ids(seed, 0x636c73ULL));
}

template <typename T>
std::size_t Model<T>::classifier_input_dim() const {
  switch (cfg_.probe_on) {
    case FeatureStage::F: return cfg_.dims[0];
    case FeatureStage::H1: return cfg_.dims[1];
    case FeatureStage::H2: return cfg_.dims[2];
  }
  return cfg_.dims[0];
}

template <typename T>
void Model<T>::reset_classifier(std::uint64_t seed) {
  RngStream rng(seed, 0x636c6173736966ULL);
  const auto in = classifier_input_dim();
  cls_w_ = he_normal<T>("classifier.weight", {cfg_.num_classes, in}, in, rng);
  cls_b_ = constant<T>("classifier.bias", {cfg_.num_classes}, T(0));
}

template <typename T>
nn::Tensor<T> Model<T>::forward_backbone(const nn::Tensor<T>& images, Mode mode) {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.input_size ||
      images.dim(3) != cfg_.input_size) {
    fail(ErrorKind::Shape, kModule,
         "expected input (n, " + std::to_string(cfg_.in_channels) + ", " + std::to_string(cfg_.input_size) +
             ", " + std::to_string(cfg_.input_size) + "), got " + nn::shape_string(images.shape()));
  }
  const bool training = mode == Mode::Train && !frozen_;
  nn::Tensor<T> x = images;
  const nn::Tensor<T> no_bias;
  for (auto& b : blocks_) {
    auto y = nn::conv2d(x, b.weight.tensor, no_bias, {b.stride, 1});
    y = nn::batch_norm2d(y, b.gamma.tensor, b.beta.tensor, b.bn, {training, 0.1, 1e-5});
    if (b.residual) y = nn::add(y, x);
    x = nn::relu(y);
  }
  auto f = nn::global_avg_pool(x);
  return frozen_ ? f.detach() : f;
}

template <typename T>
StageFeatures<T> Model<T>::project(const nn::Tensor<T>& f) {
  StageFeatures<T> out;
  out.f = f;
  out.h1 = nn::fully_connected(f, fc1_w_.tensor, fc1_b_.tensor);
  out.h2 = nn::fully_connected(cfg_.head_relu ? nn::relu(out.h1) : out.h1, fc2_w_.tensor, fc2_b_.tensor);
  return out;
}

template <typename T>
StageFeatures<T> Model<T>::forward_features(const nn::Tensor<T>& images, Mode mode) {
  return project(forward_backbone(images, mode));
}

template <typename T>
nn::Tensor<T> Model<T>::forward_classifier(const nn::Tensor<T>& f) {
  if (f.rank() != 2 || f.dim(1) != cfg_.dims[0]) {
    fail(ErrorKind::Shape, kModule,
         "classifier expects backbone features (n, " + std::to_string(cfg_.dims[0]) + "), got " +
             nn::shape_string(f.shape()));
  }
  nn::Tensor<T> in = f;
  if (cfg_.probe_on != FeatureStage::F) in = project(f).at(cfg_.probe_on);
  return nn::fully_connected(in, cls_w_.tensor, cls_b_.tensor);
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::backbone_parameters() {
  std::vector<nn::Parameter<T>*> out;
  for (auto& b : blocks_) {
    out.push_back(&b.weight);
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
  }
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::head_parameters() {
  return {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_};
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::classifier_parameters() {
  return {&cls_w_, &cls_b_};
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::parameters() {
  auto out = backbone_parameters();
  for (auto* p : head_parameters()) out.push_back(p);
  for (auto* p : classifier_parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> Model<T>::trainable_parameters(FinetuneScope scope) {
  std::vector<nn::Parameter<T>*> out;
  if (!frozen_) out = backbone_parameters();
  // Heads only sit on the classifier path when probing h1/h2.
  if (scope == FinetuneScope::AllHeads && cfg_.probe_on != FeatureStage::F) {
    for (auto* p : head_parameters()) out.push_back(p);
  }
  for (auto* p : classifier_parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<NamedArray> Model<T>::state() const {
  std::vector<NamedArray> out;
  const auto push = [&](const std::string& name, const nn::Shape& shape, std::span<const T> v) {
    out.push_back({name, shape, std::vector<float>(v.begin(), v.end())});
  };
  const auto push_param = [&](const nn::Parameter<T>& p) { push(p.name, p.tensor.shape(), p.tensor.data()); };
  for (const auto& b : blocks_) {
    push_param(b.weight);
    push_param(b.gamma);
    push_param(b.beta);
    const auto prefix = b.weight.name.substr(0, b.weight.name.size() - std::string(".conv.weight").size());
    push(prefix + ".bn.running_mean", {b.bn.running_mean.size()}, b.bn.running_mean);
    push(prefix + ".bn.running_var", {b.bn.running_var.size()}, b.bn.running_var);
  }
  for (const auto* p : {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_, &cls_w_, &cls_b_}) push_param(*p);
  return out;
}

template <typename T>
std::size_t Model<T>::state_size() const {
  return blocks_.size() * 5 + 6;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto* p : const_cast<Model*>(this)->parameters()) n += p->tensor.numel();
  return n;
}

template <typename T>
void Model<T>::load_state(std::span<const NamedArray> arrays) {
  auto expected = state();
  if (arrays.size() != expected.size()) {
    fail(ErrorKind::Format, kModule,
         "state has " + std::to_string(arrays.size()) + " arrays, model needs " +
             std::to_string(expected.size()));
  }
  const auto find = [&](const std::string& name) -> const NamedArray& {
    const NamedArray* hit = nullptr;
    for (const auto& a : arrays) {
      if (a.name == name) {
        if (hit) fail(ErrorKind::Format, kModule, "array '" + name + "' appears twice");
        hit = &a;
      }
    }
    if (!hit) fail(ErrorKind::Format, kModule, "missing array '" + name + "'");
    return *hit;
  };
  const auto copy_into = [&](const std::string& name, const nn::Shape& shape, std::span<T> dst) {
    const auto& a = find(name);
    if (a.shape != shape || a.values.size() != dst.size()) {
      fail(ErrorKind::Shape, kModule,
           "array '" + name + "' has shape " + nn::shape_string(a.shape) + ", model expects " +
               nn::shape_string(shape));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(a.values[i]);
  };
  const auto load_param = [&](nn::Parameter<T>& p) {
    copy_into(p.name, p.tensor.shape(), p.tensor.mutable_data());
  };
  for (auto& b : blocks_) {
    load_param(b.weight);
    load_param(b.gamma);
    load_param(b.beta);
    const auto prefix = b.weight.name.substr(0, b.weight.name.size() - std::string(".conv.weight").size());
    copy_into(prefix + ".bn.running_mean", {b.bn.running_mean.size()}, b.bn.running_mean);
    copy_into(prefix + ".bn.running_var", {b.bn.running_var.size()}, b.bn.running_var);
  }
  for (auto* p : {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_, &cls_w_, &cls_b_}) load_param(*p);
}

template <typename T>
std::uint64_t Model<T>::backbone_checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& b : blocks_) {
    for (const auto* p : {&b.weight, &b.gamma, &b.beta}) {
      fnv(h, p->tensor.data().data(), p->tensor.numel() * sizeof(T));
    }
    fnv(h, b.bn.running_mean.data(), b.bn.running_mean.size() * sizeof(T));
    fnv(h, b.bn.running_var.data(), b.bn.running_var.size() * sizeof(T));
  }
  return h;
}

template nn::Tensor<float> images_to_tensor<float>(std::span<const Image>);
template nn::Tensor<double> images_to_tensor<double>(std::span<const Image>);
template class Model<float>;
template class Model<double>;

}  // namespace poco::model
