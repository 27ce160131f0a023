#pragma once

// Flag table shared by the CLI parser and the help-coverage test.

#include <array>
#include <string_view>

namespace poco::cli {

enum class FlagKind { Path, Text, Count, Real, Seed, Switch };

struct FlagSpec {
  std::string_view command;  // "*" for every subcommand
  std::string_view name;     // long name without dashes
  FlagKind kind;
  bool required;
  std::string_view help;
};

struct CommandSpec {
  std::string_view name;
  std::string_view help;
};

inline constexpr std::array kCommands{
    CommandSpec{"warp", "Polar-warp one image to a PNG"},
    CommandSpec{"synth", "Write the synthetic dataset described by the config"},
    CommandSpec{"pretrain", "Progressive contrastive pretraining"},
    CommandSpec{"finetune", "Train the classifier layers on a frozen backbone"},
    CommandSpec{"eval", "Metrics report of a fine-tuned checkpoint"},
    CommandSpec{"embed", "Export backbone or head features as CSV"},
    CommandSpec{"gradcheck", "Finite-difference check of the full training loss"},
    CommandSpec{"selfcheck", "Run the property battery and print a pass/fail table"},
};

inline constexpr std::array kFlags{
    FlagSpec{"*", "seed", FlagKind::Seed, false, "Random seed (overrides the config's seed)"},
    FlagSpec{"*", "config", FlagKind::Path, false, "JSON training config; defaults apply when omitted"},
    FlagSpec{"*", "out", FlagKind::Path, false, "Output path"},
    FlagSpec{"*", "workers", FlagKind::Count, false, "Worker threads (0 = all cores); results do not depend on it"},

    FlagSpec{"warp", "input", FlagKind::Path, true, "Input PNG or JPEG"},
    FlagSpec{"warp", "output", FlagKind::Path, false, "Output PNG (same as --out)"},
    FlagSpec{"warp", "rmax", FlagKind::Real, false, "Sampling radius in pixels (default: half the width)"},
    FlagSpec{"warp", "out-size", FlagKind::Count, false, "Square output size (default: input size)"},

    FlagSpec{"pretrain", "data", FlagKind::Path, false, "Image directory or synthetic dataset root"},
    FlagSpec{"pretrain", "synth", FlagKind::Switch, false, "Generate the synthetic pretrain split in memory"},
    FlagSpec{"pretrain", "loss-csv", FlagKind::Path, false, "Loss history CSV (default: <out>.loss.csv)"},

    FlagSpec{"finetune", "ckpt", FlagKind::Path, false, "Pretrained checkpoint (omit with --random-init)"},
    FlagSpec{"finetune", "random-init", FlagKind::Switch, false, "Probe a randomly initialized backbone"},
    FlagSpec{"finetune", "data", FlagKind::Path, true, "Labeled image directory or synthetic dataset root"},
    FlagSpec{"finetune", "curve-csv", FlagKind::Path, false, "Validation curve CSV (default: <out>.val.csv)"},

    FlagSpec{"eval", "ckpt", FlagKind::Path, true, "Fine-tuned checkpoint"},
    FlagSpec{"eval", "data", FlagKind::Path, true, "Labeled image directory or synthetic dataset root"},
    FlagSpec{"eval", "split", FlagKind::Text, false, "Split of a synthetic root (default: test)"},

    FlagSpec{"embed", "ckpt", FlagKind::Path, true, "Checkpoint"},
    FlagSpec{"embed", "data", FlagKind::Path, true, "Image directory or synthetic dataset root"},
    FlagSpec{"embed", "split", FlagKind::Text, false, "Split of a synthetic root (default: test)"},
    FlagSpec{"embed", "stage", FlagKind::Text, false, "Feature stage: f, h1 or h2 (default: f)"},
};

constexpr bool applies(const FlagSpec& f, std::string_view command) {
  return f.command == "*" || f.command == command;
}

}  // namespace poco::cli
