#include "poco/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "poco/error.hpp"

namespace poco::pipeline {

namespace {
constexpr const char* kModule = "pipeline";
using nlohmann::json;

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::Format, kModule, where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::Format, kModule, where(key) + ": " + e.what());
    }
  }

  void get_size(const char* key, std::size_t& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      fail(ErrorKind::Format, kModule, where(key) + " must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  }

  void get_number(const char* key, double& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_number()) fail(ErrorKind::Format, kModule, where(key) + " must be a number");
    out = j_.at(key).get<double>();
  }

  void get_bool(const char* key, bool& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_boolean()) fail(ErrorKind::Format, kModule, where(key) + " must be true or false");
    out = j_.at(key).get<bool>();
  }

  void get_range(const char* key, std::pair<double, double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      fail(ErrorKind::Format, kModule, where(key) + " must be a [lo, hi] pair");
    }
    out = {v[0].get<double>(), v[1].get<double>()};
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : path_;
    if (key) p += (path_.empty() ? ": " : ".") + std::string(key);
    return p;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        fail(ErrorKind::InvalidArgument, kModule,
             "unknown key '" + (path_.empty() ? "" : path_ + ".") + it.key() + "' in config");
      }
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

model::FinetuneScope parse_scope(const std::string& s) {
  if (s == "all-heads") return model::FinetuneScope::AllHeads;
  if (s == "classifier") return model::FinetuneScope::ClassifierOnly;
  fail(ErrorKind::InvalidArgument, kModule, "finetune.scope must be 'all-heads' or 'classifier', got '" + s + "'");
}

std::string scope_name(model::FinetuneScope s) {
  return s == model::FinetuneScope::AllHeads ? "all-heads" : "classifier";
}

contrastive::Ranking parse_ranking(const std::string& s) {
  if (s == "key-key") return contrastive::Ranking::KeyToKey;
  if (s == "anchor-key") return contrastive::Ranking::AnchorToKey;
  fail(ErrorKind::InvalidArgument, kModule, "mining.ranking must be 'key-key' or 'anchor-key', got '" + s + "'");
}

std::string ranking_name(contrastive::Ranking r) {
  return r == contrastive::Ranking::KeyToKey ? "key-key" : "anchor-key";
}

void read_model(Section& s, model::ModelConfig& m) {
  std::string backbone(model::to_string(m.backbone));
  s.get("backbone", backbone);
  m.backbone = model::parse_backbone(backbone);
  s.get_size("input_size", m.input_size);
  s.get_size("in_channels", m.in_channels);
  if (const auto* d = s.child("dims")) {
    if (!d->is_array() || d->size() != 3) fail(ErrorKind::Format, kModule, "model.dims must list 3 integers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!(*d)[i].is_number_integer() || (*d)[i].get<long long>() <= 0) {
        fail(ErrorKind::Format, kModule, "model.dims must list 3 positive integers");
      }
      m.dims[i] = (*d)[i].get<std::size_t>();
    }
  }
  s.get_size("num_classes", m.num_classes);
  s.get_bool("head_relu", m.head_relu);
  std::string probe(model::to_string(m.probe_on));
  s.get("probe_on", probe);
  m.probe_on = model::parse_feature_stage(probe);
  s.finish();
}

void read_augment(Section& s, augment::AugmentConfig& a) {
  s.get_size("out_size", a.out_size);
  s.get_range("crop_scale_range", a.crop_scale_range);
  s.get_number("hflip_prob", a.hflip_prob);
  s.get_number("grayscale_prob", a.grayscale_prob);
  s.get_range("jitter_range", a.jitter_range);
  s.finish();
}

void read_synth(Section& s, data::SynthConfig& c) {
  s.get_size("image_size", c.image_size);
  s.get_size("num_classes", c.num_classes);
  s.get("ring_radii", c.ring_radii);
  s.get("angular_freqs", c.angular_freqs);
  s.get_number("noise_sigma", c.noise_sigma);
  s.get_bool("random_rotation", c.random_rotation);
  s.get_number("center_jitter", c.center_jitter);
  s.get_number("radius_jitter", c.radius_jitter);
  s.get_number("gain_jitter", c.gain_jitter);
  s.get_size("spots", c.spots);
  if (const auto* counts = s.child("counts")) {
    Section cs(*counts, s.where("counts"));
    cs.get_size("pretrain", c.counts.pretrain);
    cs.get_size("finetune_train", c.counts.finetune_train);
    cs.get_size("finetune_val", c.counts.finetune_val);
    cs.get_size("test", c.counts.test);
    cs.finish();
  }
  s.finish();
}
}  // namespace

std::vector<contrastive::StagePlan> TrainConfig::plan() const {
  return contrastive::derive_stage_plan(batch_size, use_pcl, stage_plan);
}

void validate(const TrainConfig& cfg) {
  if (cfg.batch_size < 4 || cfg.batch_size % 4 != 0) {
    fail(ErrorKind::InvalidArgument, kModule,
         "batch_size must be >= 4 and divisible by 4, got " + std::to_string(cfg.batch_size));
  }
  (void)cfg.plan();
  if (!(cfg.tau > 0)) fail(ErrorKind::InvalidArgument, kModule, "tau must be positive");
  if (!(cfg.learning_rate > 0) || !(cfg.finetune.learning_rate > 0)) {
    fail(ErrorKind::InvalidArgument, kModule, "learning rates must be positive");
  }
  if (cfg.weight_decay < 0 || cfg.finetune.weight_decay < 0) {
    fail(ErrorKind::InvalidArgument, kModule, "weight decay must be >= 0");
  }
  if (cfg.finetune.batch_size == 0) fail(ErrorKind::InvalidArgument, kModule, "finetune.batch_size must be >= 1");
  if (!(cfg.finetune.hflip_prob >= 0 && cfg.finetune.hflip_prob <= 1)) {
    fail(ErrorKind::InvalidArgument, kModule, "finetune.hflip_prob must lie in [0, 1]");
  }
  if (!(cfg.data.val_fraction > 0 && cfg.data.val_fraction < 1)) {
    fail(ErrorKind::InvalidArgument, kModule, "data.val_fraction must lie in (0, 1)");
  }
  if (cfg.polar_r_max && !(*cfg.polar_r_max > 0)) fail(ErrorKind::InvalidArgument, kModule, "polar.r_max must be positive");
  model::validate(cfg.model);
  augment::validate(cfg.augment);
  data::validate(cfg.data.synth);
  if (cfg.augment.out_size != cfg.model.input_size) {
    fail(ErrorKind::InvalidArgument, kModule,
         "augment.out_size (" + std::to_string(cfg.augment.out_size) + ") must equal model.input_size (" +
             std::to_string(cfg.model.input_size) + ")");
  }
  if (cfg.data.synth.num_classes != cfg.model.num_classes) {
    fail(ErrorKind::InvalidArgument, kModule, "data.synth.num_classes must equal model.num_classes");
  }
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  Section top(j, "");
  top.get_size("batch_size", cfg.batch_size);
  top.get_size("epochs", cfg.epochs);
  top.get("seed", cfg.seed);
  top.get_number("tau", cfg.tau);
  top.get_number("learning_rate", cfg.learning_rate);
  top.get_number("weight_decay", cfg.weight_decay);
  if (const auto* sp = top.child("stage_plan"); sp && !sp->is_null()) {
    if (!sp->is_array()) fail(ErrorKind::Format, kModule, "stage_plan must be null or a list of negative counts");
    std::vector<std::size_t> counts;
    for (const auto& v : *sp) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        fail(ErrorKind::Format, kModule, "stage_plan entries must be non-negative integers");
      }
      counts.push_back(v.get<std::size_t>());
    }
    cfg.stage_plan = counts;
  }
  top.get_bool("use_polar", cfg.use_polar);
  top.get_bool("use_pcl", cfg.use_pcl);
  if (const auto* p = top.child("polar")) {
    Section s(*p, "polar");
    if (const auto* r = s.child("r_max"); r && !r->is_null()) {
      if (!r->is_number()) fail(ErrorKind::Format, kModule, "polar.r_max must be null or a number");
      cfg.polar_r_max = r->get<double>();
    }
    s.finish();
  }
  if (const auto* m = top.child("mining")) {
    Section s(*m, "mining");
    std::string ranking = ranking_name(cfg.mining.ranking);
    s.get("ranking", ranking);
    cfg.mining.ranking = parse_ranking(ranking);
    s.get_bool("nested", cfg.mining.nested);
    s.finish();
  }
  if (const auto* m = top.child("model")) {
    Section s(*m, "model");
    read_model(s, cfg.model);
  }
  if (const auto* a = top.child("augment")) {
    Section s(*a, "augment");
    read_augment(s, cfg.augment);
  }
  if (const auto* d = top.child("data")) {
    Section s(*d, "data");
    s.get_number("val_fraction", cfg.data.val_fraction);
    if (const auto* syn = s.child("synth")) {
      Section ss(*syn, "data.synth");
      read_synth(ss, cfg.data.synth);
    }
    s.finish();
  }
  if (const auto* f = top.child("finetune")) {
    Section s(*f, "finetune");
    s.get_size("epochs", cfg.finetune.epochs);
    s.get_size("batch_size", cfg.finetune.batch_size);
    s.get_number("learning_rate", cfg.finetune.learning_rate);
    s.get_number("weight_decay", cfg.finetune.weight_decay);
    std::string scope = scope_name(cfg.finetune.scope);
    s.get("scope", scope);
    cfg.finetune.scope = parse_scope(scope);
    s.get_number("hflip_prob", cfg.finetune.hflip_prob);
    s.finish();
  }
  top.finish();
  validate(cfg);
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, kModule, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Format, kModule, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

nlohmann::json model_to_json(const model::ModelConfig& m) {
  return {{"backbone", model::to_string(m.backbone)},
          {"input_size", m.input_size},
          {"in_channels", m.in_channels},
          {"dims", m.dims},
          {"num_classes", m.num_classes},
          {"head_relu", m.head_relu},
          {"probe_on", model::to_string(m.probe_on)}};
}

model::ModelConfig model_from_json(const nlohmann::json& j) {
  model::ModelConfig m;
  Section s(j, "model");
  read_model(s, m);
  model::validate(m);
  return m;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  const auto& m = cfg.model;
  const auto& a = cfg.augment;
  const auto& s = cfg.data.synth;
  return {
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"seed", cfg.seed},
      {"tau", cfg.tau},
      {"learning_rate", cfg.learning_rate},
      {"weight_decay", cfg.weight_decay},
      {"stage_plan", cfg.stage_plan ? json(*cfg.stage_plan) : json(nullptr)},
      {"use_polar", cfg.use_polar},
      {"use_pcl", cfg.use_pcl},
      {"polar", {{"r_max", cfg.polar_r_max ? json(*cfg.polar_r_max) : json(nullptr)}}},
      {"mining", {{"ranking", ranking_name(cfg.mining.ranking)}, {"nested", cfg.mining.nested}}},
      {"model", model_to_json(m)},
      {"augment",
       {{"out_size", a.out_size},
        {"crop_scale_range", {a.crop_scale_range.first, a.crop_scale_range.second}},
        {"hflip_prob", a.hflip_prob},
        {"grayscale_prob", a.grayscale_prob},
        {"jitter_range", {a.jitter_range.first, a.jitter_range.second}}}},
      {"data",
       {{"val_fraction", cfg.data.val_fraction},
        {"synth",
         {{"image_size", s.image_size},
          {"num_classes", s.num_classes},
          {"ring_radii", s.ring_radii},
          {"angular_freqs", s.angular_freqs},
          {"noise_sigma", s.noise_sigma},
          {"random_rotation", s.random_rotation},
          {"center_jitter", s.center_jitter},
          {"radius_jitter", s.radius_jitter},
          {"gain_jitter", s.gain_jitter},
          {"spots", s.spots},
          {"counts",
           {{"pretrain", s.counts.pretrain},
            {"finetune_train", s.counts.finetune_train},
            {"finetune_val", s.counts.finetune_val},
            {"test", s.counts.test}}}}}}},
      {"finetune",
       {{"epochs", cfg.finetune.epochs},
        {"batch_size", cfg.finetune.batch_size},
        {"learning_rate", cfg.finetune.learning_rate},
        {"weight_decay", cfg.finetune.weight_decay},
        {"scope", scope_name(cfg.finetune.scope)},
        {"hflip_prob", cfg.finetune.hflip_prob}}},
  };
}

}  // namespace poco::pipeline
