#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "cli_flags.hpp"
#include "poco/poco.h"

namespace {

namespace fs = std::filesystem;
using poco::cli::FlagKind;

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError {
  std::string message;
};

struct RuntimeError {
  poco_status status;
  std::string message;
};

void check(poco_status s) {
  if (s != POCO_OK) throw RuntimeError{s, poco_last_error()};
}

struct Deleter {
  void operator()(poco_config* p) const { poco_config_free(p); }
  void operator()(poco_dataset* p) const { poco_dataset_free(p); }
  void operator()(poco_checkpoint* p) const { poco_checkpoint_free(p); }
};
template <typename T>
using Owned = std::unique_ptr<T, Deleter>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  poco_string_free(s);
  return out;
}

// Parsed flag values of the selected subcommand, keyed by long name.
struct Args {
  std::string command;
  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;

  bool has(const std::string& name) const {
    const auto it = values.find(name);
    return it != values.end() && !it->second.empty();
  }
  bool on(const std::string& name) const {
    const auto it = switches.find(name);
    return it != switches.end() && it->second;
  }
  const std::string& get(const std::string& name) const { return values.at(name); }
  std::string require(const std::string& name) const {
    if (!has(name)) throw UsageError{command + ": missing required flag --" + name};
    return get(name);
  }
};

Owned<poco_config> load_config(const Args& a) {
  poco_config* cfg = nullptr;
  if (a.has("config")) {
    check(poco_config_load(a.get("config").c_str(), &cfg));
  } else {
    check(poco_config_default(&cfg));
  }
  Owned<poco_config> out(cfg);
  if (a.has("seed")) check(poco_config_set_seed(cfg, std::stoull(a.get("seed"))));
  return out;
}

std::uint64_t seed_of(const poco_config* cfg) {
  std::uint64_t s = 0;
  check(poco_config_get_seed(cfg, &s));
  return s;
}

Owned<poco_dataset> load_data(const std::string& dir, const char* split) {
  poco_dataset* d = nullptr;
  check(poco_dataset_load(dir.c_str(), poco_dataset_is_synth_root(dir.c_str()) ? split : nullptr, 0, &d));
  return Owned<poco_dataset>(d);
}

Owned<poco_checkpoint> load_ckpt(const std::string& path) {
  poco_checkpoint* c = nullptr;
  check(poco_checkpoint_load(path.c_str(), &c));
  return Owned<poco_checkpoint>(c);
}

std::string sibling(const std::string& out, const char* suffix) {
  fs::path p(out);
  p.replace_extension();
  return p.string() + suffix;
}

void ensure_parent(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int cmd_warp(const Args& a) {
  if (a.has("out") && a.has("output") && a.get("out") != a.get("output")) {
    throw UsageError{"warp: --out and --output name different files"};
  }
  const auto output = a.has("output") ? a.get("output") : a.has("out") ? a.get("out") : "";
  if (output.empty()) throw UsageError{"warp: missing required flag --output"};
  const auto cfg = load_config(a);
  const double rmax = a.has("rmax") ? std::stod(a.get("rmax")) : 0.0;
  if (a.has("rmax") && rmax <= 0) throw UsageError{"warp: --rmax must be positive"};
  const std::size_t size = a.has("out-size") ? std::stoul(a.get("out-size")) : 0;
  ensure_parent(output);
  check(poco_warp_file(a.require("input").c_str(), output.c_str(), rmax, size));
  return 0;
}

int cmd_synth(const Args& a) {
  const auto out = a.require("out");
  const auto cfg = load_config(a);
  check(poco_synth_write(cfg.get(), seed_of(cfg.get()), out.c_str()));
  std::fprintf(stderr, "wrote synthetic dataset to %s\n", out.c_str());
  return 0;
}

int cmd_pretrain(const Args& a) {
  const auto out = a.require("out");
  if (a.has("data") == a.on("synth")) throw UsageError{"pretrain: give exactly one of --data and --synth"};
  const auto cfg = load_config(a);
  char* plan = nullptr;
  check(poco_config_stage_plan(cfg.get(), &plan));
  std::printf("stage plan %s\n", take_string(plan).c_str());
  std::fflush(stdout);

  Owned<poco_dataset> data;
  if (a.on("synth")) {
    poco_dataset* d = nullptr;
    check(poco_dataset_synth(cfg.get(), seed_of(cfg.get()), "pretrain", &d));
    data.reset(d);
  } else {
    data = load_data(a.get("data"), "pretrain");
  }
  const auto loss_csv = a.has("loss-csv") ? a.get("loss-csv") : sibling(out, ".loss.csv");
  poco_checkpoint* c = nullptr;
  check(poco_pretrain(cfg.get(), data.get(), loss_csv.c_str(), &c));
  Owned<poco_checkpoint> ckpt(c);
  ensure_parent(out);
  check(poco_checkpoint_save(ckpt.get(), out.c_str()));
  std::fprintf(stderr, "wrote %s and %s\n", out.c_str(), loss_csv.c_str());
  return 0;
}

int cmd_finetune(const Args& a) {
  const auto out = a.require("out");
  if (a.has("ckpt") == a.on("random-init")) throw UsageError{"finetune: give exactly one of --ckpt and --random-init"};
  const auto cfg = load_config(a);
  Owned<poco_checkpoint> pretrained;
  if (a.has("ckpt")) pretrained = load_ckpt(a.get("ckpt"));

  const auto dir = a.require("data");
  Owned<poco_dataset> train, val;
  if (poco_dataset_is_synth_root(dir.c_str())) {
    train = load_data(dir, "finetune-train");
    val = load_data(dir, "finetune-val");
  } else {
    const auto all = load_data(dir, nullptr);
    double frac = 0;
    check(poco_config_get_val_fraction(cfg.get(), &frac));
    poco_dataset *tr = nullptr, *va = nullptr;
    check(poco_dataset_split(all.get(), frac, seed_of(cfg.get()), &tr, &va));
    train.reset(tr);
    val.reset(va);
  }
  const auto curve = a.has("curve-csv") ? a.get("curve-csv") : sibling(out, ".val.csv");
  poco_checkpoint* c = nullptr;
  check(poco_finetune(pretrained.get(), cfg.get(), train.get(), val.get(), curve.c_str(), &c));
  Owned<poco_checkpoint> ckpt(c);
  ensure_parent(out);
  check(poco_checkpoint_save(ckpt.get(), out.c_str()));
  std::fprintf(stderr, "wrote %s and %s\n", out.c_str(), curve.c_str());
  return 0;
}

// Without --out the report goes to stdout.
int cmd_eval(const Args& a) {
  const auto cfg = load_config(a);
  const auto ckpt = load_ckpt(a.require("ckpt"));
  const auto split = a.has("split") ? a.get("split") : std::string("test");
  const auto data = load_data(a.require("data"), split.c_str());
  if (!a.has("out")) {
    char* json = nullptr;
    check(poco_evaluate(ckpt.get(), data.get(), nullptr, &json));
    std::fputs(take_string(json).c_str(), stdout);
    return 0;
  }
  const auto out = a.get("out");
  ensure_parent(out);
  check(poco_evaluate(ckpt.get(), data.get(), out.c_str(), nullptr));
  std::fprintf(stderr, "wrote %s\n", out.c_str());
  return 0;
}

int cmd_embed(const Args& a) {
  const auto out = a.require("out");
  const auto cfg = load_config(a);
  const auto ckpt = load_ckpt(a.require("ckpt"));
  const auto split = a.has("split") ? a.get("split") : std::string("test");
  const auto data = load_data(a.require("data"), split.c_str());
  const auto stage = a.has("stage") ? a.get("stage") : std::string("f");
  ensure_parent(out);
  check(poco_embed(ckpt.get(), data.get(), stage.c_str(), out.c_str()));
  std::fprintf(stderr, "wrote %s\n", out.c_str());
  return 0;
}

void write_file(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw RuntimeError{POCO_ERR_IO, "cli: cannot write " + path};
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

int cmd_gradcheck(const Args& a) {
  const auto cfg = load_config(a);
  double max_err = 0, median_err = 0;
  char* report = nullptr;
  const auto s = poco_gradcheck(seed_of(cfg.get()), &max_err, &median_err, &report);
  const auto text = take_string(report);
  std::fputs(text.c_str(), stdout);
  if (a.has("out")) write_file(a.get("out"), text);
  if (s == POCO_ERR_CHECK_FAILED) {
    std::fprintf(stderr, "gradcheck FAILED\n");
    return kRuntime;
  }
  check(s);
  std::fprintf(stderr, "gradcheck passed\n");
  return 0;
}

int cmd_selfcheck(const Args& a) {
  const auto cfg = load_config(a);
  char* table = nullptr;
  const auto s = poco_selfcheck(seed_of(cfg.get()), &table);
  const auto text = take_string(table);
  std::fputs(text.c_str(), stdout);
  if (a.has("out")) write_file(a.get("out"), text);
  if (s == POCO_ERR_CHECK_FAILED) return kRuntime;
  check(s);
  return 0;
}

void progress_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

int dispatch(const Args& a) {
  if (a.has("workers")) check(poco_set_workers(std::stoi(a.get("workers"))));
  poco_set_progress(progress_line, nullptr);
  if (a.command == "warp") return cmd_warp(a);
  if (a.command == "synth") return cmd_synth(a);
  if (a.command == "pretrain") return cmd_pretrain(a);
  if (a.command == "finetune") return cmd_finetune(a);
  if (a.command == "eval") return cmd_eval(a);
  if (a.command == "embed") return cmd_embed(a);
  if (a.command == "gradcheck") return cmd_gradcheck(a);
  return cmd_selfcheck(a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Polar transform and progressive contrastive pretraining"};
  app.set_version_flag("--version", poco_version());
  app.require_subcommand(1);

  Args args;
  for (const auto& cmd : poco::cli::kCommands) {
    const std::string name(cmd.name);
    auto* sub = app.add_subcommand(name, std::string(cmd.help));
    for (const auto& f : poco::cli::kFlags) {
      if (!poco::cli::applies(f, cmd.name)) continue;
      const std::string flag = "--" + std::string(f.name);
      const std::string help(f.help);
      const std::string key(f.name);
      if (f.kind == FlagKind::Switch) {
        sub->add_flag_callback(
            flag, [&args, key] { args.switches[key] = true; }, help);
        continue;
      }
      auto* opt = sub->add_option_function<std::string>(
          flag, [&args, key](const std::string& v) { args.values[key] = v; }, help);
      if (f.required) opt->required();
      switch (f.kind) {
        case FlagKind::Seed:
        case FlagKind::Count: opt->check(CLI::NonNegativeNumber & CLI::TypeValidator<unsigned long long>()); break;
        case FlagKind::Real: opt->check(CLI::Number); break;
        default: break;
      }
    }
    sub->callback([&args, name] { args.command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    return dispatch(args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.message.c_str());
    return kUsage;
  } catch (const RuntimeError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return kRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
}
