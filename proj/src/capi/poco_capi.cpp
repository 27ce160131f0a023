#include "poco/poco.h"

#include <omp.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <new>
#include <optional>
#include <string>

#include "poco/checkpoint.hpp"
#include "poco/config.hpp"
#include "poco/contrastive.hpp"
#include "poco/error.hpp"
#include "poco/image_io.hpp"
#include "poco/pipeline.hpp"
#include "poco/polar.hpp"
#include "poco/selfcheck.hpp"
#include "poco/synth.hpp"

struct poco_config {
  poco::pipeline::TrainConfig cfg;
};

struct poco_dataset {
  poco::data::LabeledDataset data;
};

struct poco_checkpoint {
  poco::pipeline::Checkpoint ckpt;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_progress_mutex;
poco_progress_fn g_progress = nullptr;
void* g_progress_user = nullptr;
int g_default_threads = 0;

poco_status status_of(poco::ErrorKind kind) {
  switch (kind) {
    case poco::ErrorKind::InvalidArgument: return POCO_ERR_INVALID_ARGUMENT;
    case poco::ErrorKind::Shape: return POCO_ERR_SHAPE;
    case poco::ErrorKind::Io: return POCO_ERR_IO;
    case poco::ErrorKind::Format: return POCO_ERR_FORMAT;
    case poco::ErrorKind::Numeric: return POCO_ERR_NUMERIC;
    case poco::ErrorKind::Runtime: return POCO_ERR_RUNTIME;
  }
  return POCO_ERR_RUNTIME;
}

// Runs fn, translating exceptions into a status and the thread's last error.
template <typename F>
poco_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const poco::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return POCO_ERR_RUNTIME;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = std::string("filesystem: ") + e.what();
    return POCO_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return POCO_ERR_RUNTIME;
  }
}

poco_status invalid(const std::string& message) {
  g_last_error = message;
  return POCO_ERR_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

poco::pipeline::Progress progress() {
  std::lock_guard lock(g_progress_mutex);
  if (!g_progress) return {};
  auto fn = g_progress;
  auto* user = g_progress_user;
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

void write_text(const char* path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) poco::fail(poco::ErrorKind::Io, "capi", std::string("cannot write ") + path);
  out << text;
  if (!out) poco::fail(poco::ErrorKind::Io, "capi", std::string("write failed for ") + path);
}

}  // namespace

extern "C" {

const char* poco_last_error(void) { return g_last_error.c_str(); }

const char* poco_version(void) { return "1.0.0"; }

void poco_string_free(char* s) { std::free(s); }

void poco_set_progress(poco_progress_fn fn, void* user) {
  std::lock_guard lock(g_progress_mutex);
  g_progress = fn;
  g_progress_user = user;
}

poco_status poco_set_workers(int workers) {
  if (workers < 0) return invalid("workers must be >= 0");
  if (g_default_threads == 0) g_default_threads = omp_get_max_threads();
  omp_set_num_threads(workers == 0 ? g_default_threads : workers);
  return POCO_OK;
}

poco_status poco_config_default(poco_config** out) {
  if (!out) return invalid("null output pointer");
  return guarded([&] {
    *out = new poco_config{};
    return POCO_OK;
  });
}

poco_status poco_config_load(const char* path, poco_config** out) {
  if (!path || !out) return invalid("null argument");
  return guarded([&] {
    *out = new poco_config{poco::pipeline::load_config(path)};
    return POCO_OK;
  });
}

poco_status poco_config_parse(const char* json, poco_config** out) {
  if (!json || !out) return invalid("null argument");
  return guarded([&] {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::parse_error& e) {
      poco::fail(poco::ErrorKind::Format, "pipeline", std::string("config: ") + e.what());
    }
    *out = new poco_config{poco::pipeline::config_from_json(j)};
    return POCO_OK;
  });
}

poco_status poco_config_set_seed(poco_config* cfg, uint64_t seed) {
  if (!cfg) return invalid("null config");
  cfg->cfg.seed = seed;
  return POCO_OK;
}

poco_status poco_config_get_seed(const poco_config* cfg, uint64_t* seed) {
  if (!cfg || !seed) return invalid("null argument");
  *seed = cfg->cfg.seed;
  return POCO_OK;
}

poco_status poco_config_get_val_fraction(const poco_config* cfg, double* fraction) {
  if (!cfg || !fraction) return invalid("null argument");
  *fraction = cfg->cfg.data.val_fraction;
  return POCO_OK;
}

poco_status poco_config_to_json(const poco_config* cfg, char** json) {
  if (!cfg || !json) return invalid("null argument");
  return guarded([&] {
    *json = dup_string(poco::pipeline::to_json(cfg->cfg).dump(2));
    return POCO_OK;
  });
}

poco_status poco_config_stage_plan(const poco_config* cfg, char** plan) {
  if (!cfg || !plan) return invalid("null argument");
  return guarded([&] {
    *plan = dup_string(poco::contrastive::stage_plan_string(cfg->cfg.plan()));
    return POCO_OK;
  });
}

void poco_config_free(poco_config* cfg) { delete cfg; }

poco_status poco_warp_file(const char* input, const char* output, double r_max, size_t out_size) {
  if (!input || !output) return invalid("null path");
  return guarded([&] {
    const auto img = poco::io::read_image(input);
    const auto oh = out_size ? out_size : img.height;
    const auto ow = out_size ? out_size : img.width;
    std::optional<double> rm;
    if (r_max > 0) rm = r_max;
    const auto grid = poco::polar::build_grid(img.height, img.width, oh, ow, rm);
    poco::io::write_png(poco::polar::warp_to_polar(img, grid), output);
    return POCO_OK;
  });
}

poco_status poco_synth_write(const poco_config* cfg, uint64_t seed, const char* dir) {
  if (!cfg || !dir) return invalid("null argument");
  return guarded([&] {
    const auto& sc = cfg->cfg.data.synth;
    poco::data::write_dataset(poco::data::generate_dataset(sc, seed), sc, seed, dir);
    return POCO_OK;
  });
}

poco_status poco_dataset_synth(const poco_config* cfg, uint64_t seed, const char* split, poco_dataset** out) {
  if (!cfg || !split || !out) return invalid("null argument");
  return guarded([&] {
    const auto s = poco::data::parse_split(split);
    auto ds = poco::data::generate_dataset(cfg->cfg.data.synth, seed);
    *out = new poco_dataset{ds.get(s)};
    return POCO_OK;
  });
}

poco_status poco_dataset_load(const char* dir, const char* split, size_t image_size, poco_dataset** out) {
  if (!dir || !out) return invalid("null argument");
  return guarded([&] {
    const std::filesystem::path root(dir);
    if (poco::data::is_dataset_root(root)) {
      if (!split) poco::fail(poco::ErrorKind::InvalidArgument, "capi", "a split is required for a synthetic dataset root");
      *out = new poco_dataset{poco::data::load_split(root, poco::data::parse_split(split), image_size)};
    } else {
      if (split) {
        poco::fail(poco::ErrorKind::InvalidArgument, "capi",
                   std::string(dir) + " has no manifest.json, so split '" + split + "' cannot be selected");
      }
      std::optional<std::filesystem::path> labels;
      if (std::filesystem::is_regular_file(root / "labels.csv")) labels = root / "labels.csv";
      *out = new poco_dataset{poco::data::load_image_dir(root, labels, image_size)};
    }
    return POCO_OK;
  });
}

int poco_dataset_is_synth_root(const char* dir) { return dir && poco::data::is_dataset_root(dir) ? 1 : 0; }

poco_status poco_dataset_split(const poco_dataset* data, double val_fraction, uint64_t seed, poco_dataset** train,
                               poco_dataset** val) {
  if (!data || !train || !val) return invalid("null argument");
  return guarded([&] {
    auto [tr, va] = poco::pipeline::split_train_val(data->data, val_fraction, seed);
    *train = new poco_dataset{std::move(tr)};
    *val = new poco_dataset{std::move(va)};
    return POCO_OK;
  });
}

size_t poco_dataset_size(const poco_dataset* data) { return data ? data->data.size() : 0; }

int poco_dataset_has_labels(const poco_dataset* data) { return data && data->data.has_labels() ? 1 : 0; }

void poco_dataset_free(poco_dataset* data) { delete data; }

poco_status poco_pretrain(const poco_config* cfg, const poco_dataset* data, const char* loss_csv,
                          poco_checkpoint** out) {
  if (!cfg || !data || !out) return invalid("null argument");
  return guarded([&] {
    auto result = poco::pipeline::pretrain(cfg->cfg, data->data, progress());
    if (loss_csv) result.history.write_csv(loss_csv);
    *out = new poco_checkpoint{std::move(result.checkpoint)};
    return POCO_OK;
  });
}

poco_status poco_finetune(const poco_checkpoint* pretrained, const poco_config* cfg, const poco_dataset* train,
                          const poco_dataset* val, const char* curve_csv, poco_checkpoint** out) {
  if (!cfg || !train || !val || !out) return invalid("null argument");
  return guarded([&] {
    auto result = poco::pipeline::finetune(pretrained ? &pretrained->ckpt : nullptr, cfg->cfg, train->data,
                                           val->data, progress());
    if (curve_csv) poco::pipeline::write_val_curve(result.curve, curve_csv);
    *out = new poco_checkpoint{std::move(result.checkpoint)};
    return POCO_OK;
  });
}

poco_status poco_evaluate(const poco_checkpoint* ckpt, const poco_dataset* data, const char* json_path, char** json) {
  if (!ckpt || !data) return invalid("null argument");
  return guarded([&] {
    const auto report = poco::pipeline::evaluate(ckpt->ckpt, data->data);
    const auto text = poco::pipeline::evaluation_json(report, ckpt->ckpt).dump(2) + "\n";
    if (json_path) write_text(json_path, text);
    if (json) *json = dup_string(text);
    return POCO_OK;
  });
}

poco_status poco_embed(const poco_checkpoint* ckpt, const poco_dataset* data, const char* stage, const char* csv_path) {
  if (!ckpt || !data || !stage || !csv_path) return invalid("null argument");
  return guarded([&] {
    const auto e = poco::pipeline::embed(ckpt->ckpt, data->data, poco::model::parse_feature_stage(stage));
    poco::metrics::embed_export(e.features, e.n, e.dim, e.labels, csv_path, e.n >= 2);
    return POCO_OK;
  });
}

poco_status poco_checkpoint_save(const poco_checkpoint* ckpt, const char* path) {
  if (!ckpt || !path) return invalid("null argument");
  return guarded([&] {
    poco::pipeline::save_checkpoint(ckpt->ckpt, path);
    return POCO_OK;
  });
}

poco_status poco_checkpoint_load(const char* path, poco_checkpoint** out) {
  if (!path || !out) return invalid("null argument");
  return guarded([&] {
    *out = new poco_checkpoint{poco::pipeline::load_checkpoint(path)};
    return POCO_OK;
  });
}

poco_status poco_checkpoint_hash(const poco_checkpoint* ckpt, char** hash) {
  if (!ckpt || !hash) return invalid("null argument");
  return guarded([&] {
    *hash = dup_string(poco::pipeline::checkpoint_hash(ckpt->ckpt));
    return POCO_OK;
  });
}

poco_status poco_checkpoint_metadata(const poco_checkpoint* ckpt, char** json) {
  if (!ckpt || !json) return invalid("null argument");
  return guarded([&] {
    *json = dup_string(ckpt->ckpt.metadata.dump(2));
    return POCO_OK;
  });
}

void poco_checkpoint_free(poco_checkpoint* ckpt) { delete ckpt; }

poco_status poco_gradcheck(uint64_t seed, double* max_relative_error, double* median_relative_error, char** report) {
  return guarded([&] {
    const auto s = poco::diag::full_loss_gradcheck(seed);
    if (max_relative_error) *max_relative_error = s.report.max_relative_error;
    if (median_relative_error) *median_relative_error = s.report.median_relative_error;
    if (report) {
      char buf[512];
      std::snprintf(buf, sizeof buf,
                    "checked %zu entries (%zu nonzero), skipped %zu at kinks\n"
                    "max relative error %.3e (limit %.0e, worst %s)\n"
                    "median relative error %.3e, over nonzero entries %.3e (limit %.0e)\n",
                    s.report.entries.size(), s.nonzero_entries, s.report.skipped_kinks, s.report.max_relative_error,
                    s.max_threshold, s.report.worst_parameter.c_str(), s.report.median_relative_error,
                    s.median_nonzero_relative_error, s.median_threshold);
      *report = dup_string(buf);
    }
    if (!s.passed) {
      g_last_error = "gradcheck: error bounds exceeded";
      return POCO_ERR_CHECK_FAILED;
    }
    return POCO_OK;
  });
}

poco_status poco_selfcheck(uint64_t seed, char** table) {
  return guarded([&] {
    const auto results = poco::diag::selfcheck(seed);
    if (table) *table = dup_string(poco::diag::format_table(results));
    for (const auto& r : results) {
      if (!r.passed) {
        g_last_error = "selfcheck: " + r.name + " failed";
        return POCO_ERR_CHECK_FAILED;
      }
    }
    return POCO_OK;
  });
}

}  // extern "C"
