#include "poco/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "poco/augment.hpp"
#include "poco/contrastive.hpp"
#include "poco/error.hpp"
#include "poco/ops.hpp"
#include "poco/optim.hpp"

namespace poco::pipeline {

namespace {
constexpr const char* kModule = "pipeline";
constexpr std::uint64_t kShuffleTag = 0x5348'5546ULL;
constexpr std::uint64_t kAugmentTag = 0x4155'4731ULL;
constexpr std::uint64_t kFlipTag = 0x464c'4950ULL;
constexpr std::uint64_t kSplitTag = 0x5350'4c54ULL;
constexpr std::size_t kForwardChunk = 64;

using nlohmann::json;
using Tensor = nn::Tensor<float>;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void emit(const Progress& progress, const std::string& line) {
  if (progress) progress(line);
}

std::optional<polar::PolarGrid> grid_for(bool use_polar, std::size_t size, std::optional<double> r_max) {
  if (!use_polar) return std::nullopt;
  return polar::build_grid(size, size, size, size, r_max);
}

std::optional<double> r_max_from(const json& meta) {
  if (meta.contains("polar_r_max") && !meta["polar_r_max"].is_null()) return meta["polar_r_max"].get<double>();
  return std::nullopt;
}

bool polar_from(const Checkpoint& ckpt) {
  if (!ckpt.metadata.contains("use_polar")) {
    fail(ErrorKind::Format, kModule, "checkpoint metadata lacks use_polar");
  }
  return ckpt.metadata["use_polar"].get<bool>();
}

std::vector<model::NamedArray> adam_arrays(std::span<nn::Parameter<float>* const> params,
                                           const nn::AdamState<float>& state) {
  std::vector<model::NamedArray> out;
  if (state.first_moment.size() != params.size()) return out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.m." + params[i]->name, params[i]->tensor.shape(), state.first_moment[i]});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({"adam.v." + params[i]->name, params[i]->tensor.shape(), state.second_moment[i]});
  }
  return out;
}

// Eval-mode backbone features of prepared images, computed in chunks.
std::vector<float> backbone_features(model::Model<float>& m, std::span<const Image> images) {
  const auto dim = m.config().dims[0];
  std::vector<float> out(images.size() * dim);
  for (std::size_t b = 0; b < images.size(); b += kForwardChunk) {
    const auto e = std::min(images.size(), b + kForwardChunk);
    const auto f = m.forward_backbone(model::images_to_tensor<float>(images.subspan(b, e - b)), model::Mode::Eval);
    std::copy(f.data().begin(), f.data().end(), out.begin() + static_cast<std::ptrdiff_t>(b * dim));
  }
  return out;
}

std::vector<Image> prepare_all(const data::LabeledDataset& data, std::size_t size, const polar::PolarGrid* grid,
                               bool flip) {
  std::vector<Image> out(data.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(data.size()); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    // Flips act on the Cartesian image, before any warp.
    const auto src = flip ? flip_horizontal(resize(data.image(i), size, size)) : resize(data.image(i), size, size);
    out[i] = grid ? polar::warp_to_polar(src, *grid) : src;
  }
  return out;
}

std::size_t correct_count(std::span<const float> logits, std::size_t k, std::span<const int> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.subspan(i * k, k);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    correct += best == labels[i];
  }
  return correct;
}

}  // namespace

std::string LossHistory::csv() const {
  std::ostringstream out;
  out << "epoch,batch,l_total,l_stage1,l_stage2,l_stage3\n";
  for (const auto& r : records) {
    out << r.epoch << ',' << r.batch << ',' << fmt(r.total);
    for (std::size_t s = 0; s < 3; ++s) {
      out << ',';
      if (s < r.stages.size()) out << fmt(r.stages[s]);
    }
    out << '\n';
  }
  return out.str();
}

void LossHistory::write_csv(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, kModule, "cannot write " + path.string());
  out << csv();
}

std::size_t LossHistory::epochs() const { return records.empty() ? 0 : records.back().epoch; }

double LossHistory::moving_average_at_epoch(std::size_t epoch, std::size_t window) const {
  std::size_t end = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].epoch == epoch) end = i + 1;
  }
  if (end == 0) fail(ErrorKind::InvalidArgument, kModule, "no loss records for epoch " + std::to_string(epoch));
  const auto begin = end > window ? end - window : 0;
  double s = 0;
  for (std::size_t i = begin; i < end; ++i) s += records[i].total;
  return s / static_cast<double>(end - begin);
}

Image prepare_input(const Image& image, std::size_t size, const polar::PolarGrid* grid) {
  auto img = resize(image, size, size);
  return grid ? polar::warp_to_polar(img, *grid) : img;
}

std::pair<Image, Image> make_views(const Image& image, const augment::AugmentConfig& cfg,
                                   const polar::PolarGrid* grid, std::uint64_t seed, std::size_t epoch,
                                   std::size_t index) {
  const auto base = combine_ids(combine_ids(kAugmentTag, epoch), index);
  RngStream rq(seed, combine_ids(base, 0));
  RngStream rk(seed, combine_ids(base, 1));
  auto views = augment::make_positive_pair(image, cfg, rq, rk);
  if (grid) {
    views.first = polar::warp_to_polar(views.first, *grid);
    views.second = polar::warp_to_polar(views.second, *grid);
  }
  return views;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, combine_ids(kShuffleTag, epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::optional<polar::PolarGrid> make_grid(const TrainConfig& cfg) {
  return grid_for(cfg.use_polar, cfg.model.input_size, cfg.polar_r_max);
}

PretrainResult pretrain(const TrainConfig& cfg, data::UnlabeledImages images, const Progress& progress) {
  validate(cfg);
  const auto n = cfg.batch_size;
  if (images.size() < n) {
    fail(ErrorKind::InvalidArgument, kModule,
         "pretraining needs at least one full batch: " + std::to_string(images.size()) + " images, batch size " +
             std::to_string(n));
  }
  PretrainResult result;
  result.plan = cfg.plan();
  const auto grid = make_grid(cfg);
  const auto* gp = grid ? &*grid : nullptr;

  model::Model<float> net(cfg.model, cfg.seed);
  auto params = net.parameters();
  nn::AdamState<float> adam;
  adam.options.learning_rate = cfg.learning_rate;
  adam.options.weight_decay = cfg.weight_decay;

  const auto batches = images.size() / n;
  result.history.batches_per_epoch = batches;
  emit(progress, "stage plan " + contrastive::stage_plan_string(result.plan));
  std::vector<Image> views(2 * n);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = epoch_order(images.size(), cfg.seed, epoch);
    double epoch_sum = 0;
    for (std::size_t b = 0; b < batches; ++b) {
#pragma omp parallel for schedule(static)
      for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const auto idx = order[b * n + i];
        auto [q, k] = make_views(images.images[idx], cfg.augment, gp, cfg.seed, epoch, idx);
        views[i] = std::move(q);
        views[n + i] = std::move(k);
      }
      // One pass over both views keeps the batch-norm statistics shared.
      auto feats = net.forward_features(model::images_to_tensor<float>(views), model::Mode::Train);
      model::StageFeatures<float> fq, fk;
      for (auto s : {model::FeatureStage::F, model::FeatureStage::H1, model::FeatureStage::H2}) {
        const auto& all = feats.at(s);
        auto& dq = s == model::FeatureStage::F ? fq.f : (s == model::FeatureStage::H1 ? fq.h1 : fq.h2);
        auto& dk = s == model::FeatureStage::F ? fk.f : (s == model::FeatureStage::H1 ? fk.h1 : fk.h2);
        dq = nn::slice_rows(all, 0, n);
        dk = nn::slice_rows(all, n, 2 * n);
      }
      auto loss = contrastive::progressive_loss(fq, fk, result.plan, cfg.tau, cfg.mining);
      LossRecord rec{epoch, b, static_cast<double>(loss.total.item()), {}};
      for (const auto& s : loss.stages) rec.stages.push_back(static_cast<double>(s.item()));
      if (!std::isfinite(rec.total)) {
        fail(ErrorKind::Numeric, kModule,
             "non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(b));
      }
      loss.total.backward();
      nn::adam_step<float>(params, adam);
      nn::zero_grads<float>(params);
      epoch_sum += rec.total;
      result.history.records.push_back(std::move(rec));
    }
    emit(progress, "pretrain epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.epochs) +
                       " mean loss " + fmt(epoch_sum / static_cast<double>(batches)));
  }

  auto& ck = result.checkpoint;
  ck.model = cfg.model;
  ck.arrays = net.state();
  ck.optimizer = adam_arrays(params, adam);
  json losses = json::array();
  for (const auto& r : result.history.records) {
    json row = json::array({r.total});
    for (auto s : r.stages) row.push_back(s);
    losses.push_back(row);
  }
  ck.metadata = {
      {"phase", "pretrain"},
      {"seed", cfg.seed},
      {"epoch", cfg.epochs},
      {"use_polar", cfg.use_polar},
      {"use_pcl", cfg.use_pcl},
      {"polar_r_max", cfg.polar_r_max ? json(*cfg.polar_r_max) : json(nullptr)},
      {"stage_plan", contrastive::stage_plan_string(result.plan)},
      {"optimizer_step", adam.step_count},
      {"train_config", to_json(cfg)},
      {"loss_history", losses},
  };
  return result;
}

PretrainResult pretrain(const TrainConfig& cfg, const data::LabeledDataset& dataset, const Progress& progress) {
  const auto before = dataset.label_reads();
  auto result = pretrain(cfg, dataset.unlabeled(), progress);
  result.label_reads = dataset.label_reads() - before;
  if (result.label_reads != 0) fail(ErrorKind::Runtime, kModule, "pretraining read labels");
  return result;
}

FinetuneResult finetune(const Checkpoint* pretrained, const TrainConfig& cfg, const data::LabeledDataset& train,
                        const data::LabeledDataset& val, const Progress& progress) {
  validate(cfg);
  if (!train.has_labels() || !val.has_labels()) {
    fail(ErrorKind::InvalidArgument, kModule, "fine-tuning needs labeled train and validation data");
  }
  if (train.size() == 0 || val.size() == 0) fail(ErrorKind::InvalidArgument, kModule, "empty fine-tuning split");
  if (train.num_classes() > cfg.model.num_classes || val.num_classes() > cfg.model.num_classes) {
    fail(ErrorKind::InvalidArgument, kModule,
         "data has more classes than model.num_classes (" + std::to_string(cfg.model.num_classes) + ")");
  }
  bool use_polar = cfg.use_polar;
  std::optional<double> r_max = cfg.polar_r_max;
  std::unique_ptr<model::Model<float>> net;
  if (pretrained) {
    if (!(pretrained->model == cfg.model)) {
      fail(ErrorKind::InvalidArgument, kModule, "checkpoint model config differs from the config model section");
    }
    const bool ck_polar = polar_from(*pretrained);
    if (ck_polar != cfg.use_polar) {
      fail(ErrorKind::InvalidArgument, kModule,
           std::string("polar mode mismatch: checkpoint was pretrained with use_polar=") +
               (ck_polar ? "true" : "false") + " but the config sets use_polar=" + (cfg.use_polar ? "true" : "false"));
    }
    r_max = r_max_from(pretrained->metadata);
    net = std::make_unique<model::Model<float>>(restore_model<float>(*pretrained));
  } else {
    net = std::make_unique<model::Model<float>>(cfg.model, cfg.seed);
  }
  net->freeze_backbone();
  net->reset_classifier(cfg.seed);
  const auto checksum_before = net->backbone_checksum();
  const auto grid = grid_for(use_polar, cfg.model.input_size, r_max);
  const auto* gp = grid ? &*grid : nullptr;
  const auto S = cfg.model.input_size;
  const auto D = cfg.model.dims[0];
  const auto K = cfg.model.num_classes;

  // The backbone is frozen, so its features are computed once per image (and
  // once per flipped image) and the trainable layers train on those.
  const auto train_imgs = prepare_all(train, S, gp, false);
  const auto flip_imgs = prepare_all(train, S, gp, true);
  const auto val_imgs = prepare_all(val, S, gp, false);
  const auto f_train = backbone_features(*net, train_imgs);
  const auto f_flip = backbone_features(*net, flip_imgs);
  const auto f_val = backbone_features(*net, val_imgs);
  const auto y_train = train.labels();
  const auto y_val = val.labels();

  auto params = net->trainable_parameters(cfg.finetune.scope);
  nn::AdamState<float> adam;
  adam.options.learning_rate = cfg.finetune.learning_rate;
  adam.options.weight_decay = cfg.finetune.weight_decay;

  const auto val_accuracy = [&] {
    const auto logits = net->forward_classifier(Tensor::from({val.size(), D}, f_val));
    return static_cast<double>(correct_count(logits.data(), K, y_val)) / static_cast<double>(val.size());
  };
  const auto snapshot = [&] { return net->state(); };

  FinetuneResult result;
  result.curve.push_back({0, std::nan(""), val_accuracy()});
  result.best_val_accuracy = result.curve.back().val_accuracy;
  auto best_state = snapshot();

  const auto bs = cfg.finetune.batch_size;
  std::vector<float> xb;
  std::vector<int> yb;
  for (std::size_t epoch = 1; epoch <= cfg.finetune.epochs; ++epoch) {
    const auto order = epoch_order(train.size(), cfg.seed ^ kFlipTag, epoch);
    RngStream flips(cfg.seed, combine_ids(kFlipTag, epoch));
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < train.size(); b += bs) {
      const auto e = std::min(train.size(), b + bs);
      xb.resize((e - b) * D);
      yb.resize(e - b);
      for (std::size_t i = b; i < e; ++i) {
        const auto idx = order[i];
        const bool flip = flips.bernoulli(cfg.finetune.hflip_prob);
        const auto& src = flip ? f_flip : f_train;
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(idx * D), D,
                    xb.begin() + static_cast<std::ptrdiff_t>((i - b) * D));
        yb[i - b] = y_train[idx];
      }
      auto loss = nn::cross_entropy(net->forward_classifier(Tensor::from({e - b, D}, xb)), yb);
      loss_sum += loss.item();
      ++steps;
      loss.backward();
      nn::adam_step<float>(params, adam);
      nn::zero_grads<float>(params);
    }
    result.curve.push_back({epoch, loss_sum / static_cast<double>(steps), val_accuracy()});
    if (result.curve.back().val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = result.curve.back().val_accuracy;
      result.best_epoch = epoch;
      best_state = snapshot();
    }
    if (epoch % 10 == 0 || epoch == cfg.finetune.epochs) {
      emit(progress, "finetune epoch " + std::to_string(epoch) + "/" + std::to_string(cfg.finetune.epochs) +
                         " loss " + fmt(result.curve.back().train_loss) + " val acc " +
                         fmt(result.curve.back().val_accuracy));
    }
  }
  net->load_state(best_state);
  if (net->backbone_checksum() != checksum_before) {
    fail(ErrorKind::Runtime, kModule, "backbone changed during fine-tuning");
  }

  auto& ck = result.checkpoint;
  ck.model = cfg.model;
  ck.arrays = net->state();
  char sum[17];
  std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(checksum_before));
  ck.metadata = {
      {"phase", "finetune"},
      {"pretrained", pretrained != nullptr},
      {"source_checkpoint", pretrained ? json(checkpoint_hash(*pretrained)) : json(nullptr)},
      {"seed", cfg.seed},
      {"epoch", result.best_epoch},
      {"finetune_epochs", cfg.finetune.epochs},
      {"best_val_accuracy", result.best_val_accuracy},
      {"use_polar", use_polar},
      {"polar_r_max", r_max ? json(*r_max) : json(nullptr)},
      {"backbone_checksum", sum},
      {"train_config", to_json(cfg)},
  };
  if (pretrained && pretrained->metadata.contains("use_pcl")) ck.metadata["use_pcl"] = pretrained->metadata["use_pcl"];
  return result;
}

void write_val_curve(const std::vector<ValPoint>& curve, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, kModule, "cannot write " + path.string());
  out << "epoch,train_loss,val_accuracy\n";
  for (const auto& p : curve) {
    out << p.epoch << ',' << (std::isnan(p.train_loss) ? std::string() : fmt(p.train_loss)) << ','
        << fmt(p.val_accuracy) << '\n';
  }
}

std::vector<double> predict_probabilities(const Checkpoint& ckpt, const data::LabeledDataset& data) {
  auto net = restore_model<float>(ckpt);
  net.freeze_backbone();
  const auto grid = grid_for(polar_from(ckpt), ckpt.model.input_size, r_max_from(ckpt.metadata));
  const auto imgs = prepare_all(data, ckpt.model.input_size, grid ? &*grid : nullptr, false);
  const auto f = backbone_features(net, imgs);
  const auto D = ckpt.model.dims[0];
  const auto K = ckpt.model.num_classes;
  const auto logits = net.forward_classifier(Tensor::from({data.size(), D}, f));
  std::vector<double> probs(data.size() * K);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = logits.data().subspan(i * K, K);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - mx);
    for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(static_cast<double>(row[k]) - mx) / z;
  }
  return probs;
}

metrics::MetricsReport evaluate(const Checkpoint& ckpt, const data::LabeledDataset& data) {
  if (ckpt.metadata.value("phase", std::string()) != "finetune") {
    fail(ErrorKind::InvalidArgument, kModule, "evaluation needs a fine-tuned checkpoint");
  }
  if (!data.has_labels()) fail(ErrorKind::InvalidArgument, kModule, "evaluation needs labeled data");
  if (data.num_classes() > ckpt.model.num_classes) {
    fail(ErrorKind::InvalidArgument, kModule, "data has more classes than the checkpoint's classifier");
  }
  const auto probs = predict_probabilities(ckpt, data);
  const auto labels = data.labels();
  return metrics::evaluate({probs, ckpt.model.num_classes, labels});
}

json evaluation_json(const metrics::MetricsReport& report, const Checkpoint& ckpt) {
  auto j = metrics::to_json(report);
  j["config"] = ckpt.metadata.contains("train_config") ? ckpt.metadata["train_config"] : json(nullptr);
  j["checkpoint_hash"] = checkpoint_hash(ckpt);
  return j;
}

Embedding embed(const Checkpoint& ckpt, const data::LabeledDataset& data, model::FeatureStage stage) {
  auto net = restore_model<float>(ckpt);
  net.freeze_backbone();
  const auto grid = grid_for(polar_from(ckpt), ckpt.model.input_size, r_max_from(ckpt.metadata));
  const auto imgs = prepare_all(data, ckpt.model.input_size, grid ? &*grid : nullptr, false);
  Embedding out;
  out.n = data.size();
  out.dim = stage == model::FeatureStage::F ? ckpt.model.dims[0]
                                            : (stage == model::FeatureStage::H1 ? ckpt.model.dims[1] : ckpt.model.dims[2]);
  out.features.resize(out.n * out.dim);
  const std::span<const Image> all(imgs);
  for (std::size_t b = 0; b < imgs.size(); b += kForwardChunk) {
    const auto e = std::min(imgs.size(), b + kForwardChunk);
    const auto feats = net.forward_features(model::images_to_tensor<float>(all.subspan(b, e - b)), model::Mode::Eval);
    const auto v = feats.at(stage).data();
    std::copy(v.begin(), v.end(), out.features.begin() + static_cast<std::ptrdiff_t>(b * out.dim));
  }
  if (data.has_labels()) out.labels = data.labels();
  return out;
}

std::pair<data::LabeledDataset, data::LabeledDataset> split_train_val(const data::LabeledDataset& data,
                                                                      double val_fraction, std::uint64_t seed) {
  if (!data.has_labels()) fail(ErrorKind::InvalidArgument, kModule, "cannot split unlabeled data");
  if (!(val_fraction > 0 && val_fraction < 1)) fail(ErrorKind::InvalidArgument, kModule, "val_fraction must lie in (0, 1)");
  const auto labels = data.labels();
  std::vector<std::vector<std::size_t>> by_class(data.num_classes());
  for (auto i : epoch_order(data.size(), seed, kSplitTag)) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> tr, va;
  for (const auto& members : by_class) {
    auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(members.size())));
    if (n_val == 0 && members.size() >= 2) n_val = 1;
    va.insert(va.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
    tr.insert(tr.end(), members.begin() + static_cast<std::ptrdiff_t>(n_val), members.end());
  }
  if (tr.empty() || va.empty()) fail(ErrorKind::InvalidArgument, kModule, "too few samples to split train/validation");
  std::sort(tr.begin(), tr.end());
  std::sort(va.begin(), va.end());
  const auto gather = [&](const std::vector<std::size_t>& idx, data::Split split) {
    std::vector<Image> imgs;
    std::vector<int> ls;
    for (auto i : idx) {
      imgs.push_back(data.image(i));
      ls.push_back(labels[i]);
    }
    return data::LabeledDataset(split, std::move(imgs), std::move(ls), data.num_classes());
  };
  return {gather(tr, data::Split::FinetuneTrain), gather(va, data::Split::FinetuneVal)};
}

}  // namespace poco::pipeline
