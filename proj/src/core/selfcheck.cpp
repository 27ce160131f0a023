#include "poco/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>

#include "poco/contrastive.hpp"
#include "poco/metrics.hpp"
#include "poco/model.hpp"
#include "poco/ops.hpp"
#include "poco/polar.hpp"
#include "poco/rng.hpp"
#include "poco/synth.hpp"

namespace poco::diag {

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

nn::Tensor<double> random_matrix(std::size_t n, std::size_t d, RngStream& rng, bool requires_grad = false) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return nn::Tensor<double>::from({n, d}, std::move(v), requires_grad);
}

CheckResult rotation_shift(std::uint64_t seed) {
  double worst = 0;
  for (std::size_t t = 0; t < 5; ++t) {
    RngStream rng(seed, combine_ids(0x524f54ULL, t));
    const auto img = data::smooth_random_image(64, 3, rng);
    const auto grid = polar::build_grid(64, 64, 64, 64);
    const auto base = polar::warp_to_polar(img, grid);
    for (long long k : {1LL, 16LL, 32LL}) {
      const auto lhs = polar::warp_to_polar(polar::rotate_image(img, static_cast<double>(k) * grid.omega_deg), grid);
      worst = std::max(worst, mean_abs_difference(lhs, polar::cyclic_shift(base, k), 2));
    }
  }
  return {"rotation_shift", worst <= 0.02, "max mean |diff| " + num(worst) + " (limit 0.02)"};
}

CheckResult grid_constants() {
  const auto g = polar::build_grid(224, 224, 224, 224);
  const bool ok = g.r_max == 112.0 && g.d == 0.5 && g.omega_deg == 360.0 / 224.0;
  return {"grid_constants", ok, "d " + num(g.d) + ", omega " + num(g.omega_deg) + ", r_max " + num(g.r_max)};
}

CheckResult loss_hand_case() {
  const auto q = nn::Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  const auto loss = contrastive::stage_loss(q, q, contrastive::full_negative_sets(2), 0.5).item();
  const double e2 = std::exp(2.0);
  const double expected = -2 * std::log(e2 / (e2 + 1)) - 2 * std::log(1 - 1 / (e2 + 1));
  return {"loss_hand_case", std::abs(loss - expected) <= 1e-9, "loss " + num(loss)};
}

CheckResult loss_symmetric() {
  const std::size_t n = 8;
  std::vector<double> v(n * 4);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) v[i * 4 + j] = 0.5 + 0.25 * static_cast<double>(j);
  }
  const auto f = nn::Tensor<double>::from({n, 4}, v);
  const auto loss = contrastive::stage_loss(f, f, contrastive::full_negative_sets(n), 0.5).item();
  const double m = static_cast<double>(n - 1);
  const double expected = static_cast<double>(n) * (std::log(m + 1) - m * std::log(1 - 1 / (m + 1)));
  return {"loss_symmetric", std::abs(loss - expected) <= 1e-9, "diff " + num(std::abs(loss - expected))};
}

CheckResult probability_normalization(std::uint64_t seed) {
  double worst = 0;
  for (std::size_t t = 0; t < 20; ++t) {
    RngStream rng(seed, combine_ids(0x4e4f524dULL, t));
    const auto q = random_matrix(8, 6, rng), k = random_matrix(8, 6, rng);
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<std::span<const double>> negs;
      for (std::size_t j = 0; j < 8; ++j) {
        if (j != i) negs.push_back(k.data().subspan(j * 6, 6));
      }
      const auto qi = q.data().subspan(i * 6, 6), ki = k.data().subspan(i * 6, 6);
      double s = contrastive::pair_probability<double>(qi, ki, negs, 0.5);
      for (auto nj : negs) s += contrastive::negative_pair_probability<double>(qi, nj, ki, negs, 0.5);
      worst = std::max(worst, std::abs(s - 1));
    }
  }
  return {"probability_normalization", worst <= 1e-9, "max |sum - 1| " + num(worst)};
}

CheckResult hard_negative_topk(std::uint64_t seed) {
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < 30; ++t) {
    RngStream rng(seed, combine_ids(0x484e4547ULL, t));
    const std::size_t n = 4 * (1 + rng.below(8));
    const auto keys = random_matrix(n, 5, rng);
    const auto full = contrastive::full_negative_sets(n);
    const auto n2 = n / 2 - 1;
    const auto sel = contrastive::select_hard_negatives(keys, full, n2);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::pair<double, std::size_t>> all;
      for (auto j : full[i]) {
        all.emplace_back(contrastive::cosine_similarity<double>(keys.data().subspan(i * 5, 5),
                                                                keys.data().subspan(j * 5, 5)),
                         j);
      }
      std::sort(all.begin(), all.end(),
                [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      for (std::size_t m = 0; m < n2; ++m) mismatches += sel[i][m] != all[m].second;
    }
  }
  return {"hard_negative_topk", mismatches == 0, std::to_string(mismatches) + " mismatches"};
}

CheckResult auc_equivalence(std::uint64_t seed) {
  double worst = 0;
  for (std::size_t t = 0; t < 100; ++t) {
    RngStream rng(seed, combine_ids(0x415543ULL, t));
    const std::size_t n = 2 + rng.below(40);
    std::vector<double> s(n);
    std::unique_ptr<bool[]> pos(new bool[n]);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(6)) / 5.0;  // coarse scores force ties
      pos[i] = i == 0 ? true : (i == 1 ? false : rng.bernoulli(0.5));
    }
    const std::span<const bool> flags(pos.get(), n);
    double wins = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (!pos[i] || pos[j]) continue;
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    const double brute = wins / pairs;
    worst = std::max({worst, std::abs(metrics::binary_auc(s, flags) - brute),
                      std::abs(metrics::binary_auc_trapezoid(s, flags) - brute)});
  }
  return {"auc_equivalence", worst <= 1e-9, "max diff " + num(worst)};
}

CheckResult macro_f1_example() {
  const std::vector<double> scores{1, 0, 0, 1, 0, 1, 0, 1};
  const std::vector<int> labels{0, 0, 1, 1};
  const auto r = metrics::confusion_and_prf({scores, 2, labels});
  const bool ok = r.accuracy == 0.75 && std::abs(r.macro_f1 - (2.0 / 3 + 0.8) / 2) <= 1e-12;
  return {"macro_f1_example", ok, "accuracy " + num(r.accuracy) + ", macro F1 " + num(r.macro_f1)};
}

CheckResult stage_loss_gradient(std::uint64_t seed) {
  RngStream rng(seed, 0x4752414455ULL);
  nn::Parameter<double> q{"q", random_matrix(4, 8, rng, true)};
  nn::Parameter<double> k{"k", random_matrix(4, 8, rng, true)};
  const auto sets = contrastive::full_negative_sets(4);
  std::vector<nn::Parameter<double>*> params{&q, &k};
  nn::GradcheckOptions opt;
  opt.step = 1e-6;
  const auto rep = nn::finite_difference_gradcheck(
      [&] { return contrastive::stage_loss(q.tensor, k.tensor, sets, 0.5); }, params, opt);
  return {"stage_loss_gradient", rep.max_relative_error < 1e-5, "max rel err " + num(rep.max_relative_error)};
}
}  // namespace

GradcheckSummary full_loss_gradcheck(std::uint64_t seed, std::size_t batch_size) {
  model::ModelConfig cfg;
  cfg.input_size = 8;
  cfg.dims = {16, 8, 4};
  cfg.num_classes = 2;
  model::Model<double> net(cfg, seed);
  const std::size_t n = batch_size;
  RngStream rng(seed, 0x4743484bULL);
  std::vector<double> pixels(2 * n * 3 * 8 * 8);
  for (auto& p : pixels) p = rng.uniform();
  const auto plan = contrastive::derive_stage_plan(n, true);

  const auto loss_fn = [&] {
    const auto x = nn::Tensor<double>::from({2 * n, 3, 8, 8}, pixels);
    const auto feats = net.forward_features(x, model::Mode::Train);
    model::StageFeatures<double> fq{nn::slice_rows(feats.f, 0, n), nn::slice_rows(feats.h1, 0, n),
                                    nn::slice_rows(feats.h2, 0, n)};
    model::StageFeatures<double> fk{nn::slice_rows(feats.f, n, 2 * n), nn::slice_rows(feats.h1, n, 2 * n),
                                    nn::slice_rows(feats.h2, n, 2 * n)};
    return contrastive::progressive_loss(fq, fk, plan, 0.5).total;
  };
  auto params = net.backbone_parameters();
  for (auto* p : net.head_parameters()) params.push_back(p);
  nn::GradcheckOptions opt;
  opt.step = 1e-6;
  opt.seed = seed;
  GradcheckSummary out;
  out.report = nn::finite_difference_gradcheck(loss_fn, params, opt);
  std::vector<double> nonzero;
  for (const auto& e : out.report.entries) {
    if (e.analytic != 0 || e.numeric != 0) nonzero.push_back(e.relative_error);
  }
  out.nonzero_entries = nonzero.size();
  if (!nonzero.empty()) {
    std::nth_element(nonzero.begin(), nonzero.begin() + nonzero.size() / 2, nonzero.end());
    out.median_nonzero_relative_error = nonzero[nonzero.size() / 2];
  }
  out.passed = !nonzero.empty() && out.report.max_relative_error < out.max_threshold &&
               out.report.median_relative_error < out.median_threshold &&
               out.median_nonzero_relative_error < out.median_threshold;
  return out;
}

std::vector<CheckResult> selfcheck(std::uint64_t seed) {
  const std::vector<std::pair<const char*, std::function<CheckResult()>>> checks{
      {"rotation_shift", [&] { return rotation_shift(seed); }},
      {"grid_constants", [] { return grid_constants(); }},
      {"loss_hand_case", [] { return loss_hand_case(); }},
      {"loss_symmetric", [] { return loss_symmetric(); }},
      {"probability_normalization", [&] { return probability_normalization(seed); }},
      {"hard_negative_topk", [&] { return hard_negative_topk(seed); }},
      {"auc_equivalence", [&] { return auc_equivalence(seed); }},
      {"macro_f1_example", [] { return macro_f1_example(); }},
      {"stage_loss_gradient", [&] { return stage_loss_gradient(seed); }},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, run] : checks) {
    try {
      out.push_back(run());
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  }
  return out;
}

std::string format_table(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  for (const auto& r : results) {
    char name[40];
    std::snprintf(name, sizeof name, "%-28s", r.name.c_str());
    out << (r.passed ? "PASS " : "FAIL ") << name << ' ' << r.detail << '\n';
  }
  return out.str();
}

}  // namespace poco::diag
