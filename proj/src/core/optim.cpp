#include "poco/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "poco/error.hpp"

namespace poco::nn {

namespace {
constexpr const char* kModule = "neural_core";
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  const auto& opt = state.options;
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.emplace_back(p->tensor.numel(), T(0));
      state.second_moment.emplace_back(p->tensor.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    fail(ErrorKind::InvalidArgument, kModule,
         "Adam state tracks " + std::to_string(state.first_moment.size()) + " parameters, got " +
             std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k]->tensor;
    if (state.first_moment[k].size() != t.numel()) {
      fail(ErrorKind::Shape, kModule, "Adam moment size mismatch for '" + params[k]->name + "'");
    }
    if (t.has_grad()) {
      for (auto g : t.grad()) {
        if (!std::isfinite(g)) {
          fail(ErrorKind::Numeric, kModule, "non-finite gradient in parameter '" + params[k]->name + "'");
        }
      }
    }
  }

  ++state.step_count;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step_count));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k]->tensor;
    auto theta = t.mutable_data();
    const bool has = t.has_grad();
    const auto grad = t.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = (has ? static_cast<double>(grad[i]) : 0.0) + opt.weight_decay * theta[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = opt.learning_rate * (mi / bc1) / (std::sqrt(vi / bc2) + opt.epsilon);
      theta[i] = static_cast<T>(theta[i] - update);
    }
  }
}

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) p->tensor.zero_grad();
}

GradcheckReport finite_difference_gradcheck(const std::function<Tensor<double>()>& loss_fn,
                                            std::span<Parameter<double>* const> params,
                                            const GradcheckOptions& options) {
  if (!(options.step > 0)) fail(ErrorKind::InvalidArgument, kModule, "gradcheck step must be > 0");

  const auto evaluate = [&](std::uint64_t* digest) {
    KinkTrace trace;
    ScopedKinkTrace scope(trace);
    const auto loss = loss_fn();
    if (digest) *digest = trace.digest();
    return loss;
  };

  zero_grads(params);
  std::uint64_t base_digest = 0;
  auto loss = evaluate(&base_digest);
  const double base_value = loss.item();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) {
    const auto g = p->tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().size() != p->tensor.numel()) analytic.back().assign(p->tensor.numel(), 0.0);
  }

  std::uint64_t repeat_digest = 0;
  const double repeat_value = evaluate(&repeat_digest).item();
  if (repeat_value != base_value || repeat_digest != base_digest) {
    fail(ErrorKind::Runtime, kModule,
         "gradcheck: loss function is not deterministic (two identical evaluations differ)");
  }

  GradcheckReport report;
  std::mt19937_64 rng(options.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& tensor = params[k]->tensor;
    std::vector<std::size_t> indices(tensor.numel());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_entries_per_parameter > 0 && indices.size() > options.max_entries_per_parameter) {
      std::shuffle(indices.begin(), indices.end(), rng);
      indices.resize(options.max_entries_per_parameter);
      std::sort(indices.begin(), indices.end());
    }
    for (auto idx : indices) {
      auto values = tensor.mutable_data();
      const double original = values[idx];
      std::uint64_t d_plus = 0, d_minus = 0;
      values[idx] = original + options.step;
      const double f_plus = evaluate(&d_plus).item();
      values[idx] = original - options.step;
      const double f_minus = evaluate(&d_minus).item();
      values[idx] = original;
      if (d_plus != base_digest || d_minus != base_digest) {
        ++report.skipped_kinks;
        continue;
      }
      GradcheckEntry e;
      e.parameter = params[k]->name;
      e.index = idx;
      e.analytic = analytic[k][idx];
      e.numeric = (f_plus - f_minus) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(e.analytic), std::abs(e.numeric), options.denominator_floor});
      e.relative_error = std::abs(e.analytic - e.numeric) / denom;
      report.entries.push_back(e);
    }
  }

  if (!report.entries.empty()) {
    std::vector<double> errs;
    errs.reserve(report.entries.size());
    for (const auto& e : report.entries) {
      errs.push_back(e.relative_error);
      if (e.relative_error >= report.max_relative_error) {
        report.max_relative_error = e.relative_error;
        report.worst_parameter = e.parameter;
      }
    }
    std::sort(errs.begin(), errs.end());
    const auto n = errs.size();
    report.median_relative_error = n % 2 ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  }
  return report;
}

template void adam_step<float>(std::span<Parameter<float>* const>, AdamState<float>&);
template void adam_step<double>(std::span<Parameter<double>* const>, AdamState<double>&);
template void zero_grads<float>(std::span<Parameter<float>* const>);
template void zero_grads<double>(std::span<Parameter<double>* const>);

}  // namespace poco::nn
