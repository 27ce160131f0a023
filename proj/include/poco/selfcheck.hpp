#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poco/optim.hpp"

namespace poco::diag {

struct GradcheckSummary {
  nn::GradcheckReport report;
  double max_threshold = 1e-3;
  double median_threshold = 1e-6;
  // Entries whose analytic and numeric derivatives are both exactly zero
  // (padding-only taps, the empty third stage at batch 4) are excluded here.
  std::size_t nonzero_entries = 0;
  double median_nonzero_relative_error = 0;
  bool passed = false;
};

/// Central differences of the full progressive loss through a tiny backbone
/// and both projection heads: batch 4, 8x8 inputs, float64. Passing needs the
/// max and both medians under their thresholds.
GradcheckSummary full_loss_gradcheck(std::uint64_t seed, std::size_t batch_size = 4);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick property battery: rotation/shift equivalence, grid constants, loss
/// oracles, hard-negative selection, AUC equivalence, confusion counts,
/// stage-loss gradients.
std::vector<CheckResult> selfcheck(std::uint64_t seed);

/// One "PASS name  detail" / "FAIL name  detail" line per check.
std::string format_table(const std::vector<CheckResult>& results);

}  // namespace poco::diag
