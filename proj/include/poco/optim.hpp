#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "poco/tensor.hpp"

namespace poco::nn {

struct AdamOptions {
  double learning_rate = 1e-4;
  // Coupled L2: g <- g + weight_decay * theta before the moment updates.
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::uint64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One Adam update over params, using the gradients currently stored on them.
/// Moment buffers are allocated (zeroed) on the first call. Parameters without
/// a gradient are treated as having a zero gradient.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params);

struct GradcheckOptions {
  double step = 1e-5;
  // 0 checks every scalar; otherwise at most this many sampled entries per parameter.
  std::size_t max_entries_per_parameter = 0;
  std::uint64_t seed = 0;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double denominator_floor = 1e-8;
};

struct GradcheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double relative_error = 0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  std::size_t skipped_kinks = 0;
  double max_relative_error = 0;
  double median_relative_error = 0;
  std::string worst_parameter;
};

/// Central-difference check of d(loss)/d(param). loss_fn must rebuild the graph
/// from the current parameter values on every call. Perturbations that change
/// any recorded discrete decision (see KinkTrace) are skipped.
GradcheckReport finite_difference_gradcheck(const std::function<Tensor<double>()>& loss_fn,
                                            std::span<Parameter<double>* const> params,
                                            const GradcheckOptions& options);

extern template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
extern template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);

}  // namespace poco::nn
