#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "poco/contrastive.hpp"
#include "poco/error.hpp"
#include "poco/optim.hpp"
#include "poco/rng.hpp"

using namespace poco;
using namespace poco::contrastive;
using Vec = std::vector<double>;
using Span = std::span<const double>;

namespace {

nn::Tensor<double> randn(std::size_t n, std::size_t d, RngStream& rng, bool grad = false) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return nn::Tensor<double>::from({n, d}, std::move(v), grad);
}

Span row(const nn::Tensor<double>& t, std::size_t i) { return t.data().subspan(i * t.dim(1), t.dim(1)); }

// Brute force: every candidate's similarity, sorted descending, ties to the smaller index.
std::vector<std::size_t> brute_topk(const nn::Tensor<double>& keys, std::size_t anchor,
                                    const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> all;
  for (auto j : candidates) {
    const auto a = row(keys, anchor), b = row(keys, j);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t t = 0; t < a.size(); ++t) {
      dot += a[t] * b[t];
      na += a[t] * a[t];
      nb += b[t] * b[t];
    }
    all.emplace_back(dot / std::sqrt(na * nb), j);
  }
  std::sort(all.begin(), all.end(), [](auto x, auto y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
  std::vector<std::size_t> out;
  for (std::size_t m = 0; m < k; ++m) out.push_back(all[m].second);
  return out;
}

}  // namespace

TEST_CASE("cosine similarity") {
  const Vec a{1, 0}, b{0, 1}, c{1, 1}, z{0, 0};
  CHECK(cosine_similarity<double>(a, a) == 1.0);
  CHECK(cosine_similarity<double>(a, b) == 0.0);
  CHECK(cosine_similarity<double>(c, a) == doctest::Approx(0.7071067811865476).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity<double>(a, z), Error);
}

TEST_CASE("pair and negative probabilities") {
  const Vec q{1, 0}, pos{1, 0}, neg{0, 1};
  const std::vector<Span> none, one{Span(neg)};
  CHECK(pair_probability<double>(q, pos, none, 0.5) == 1.0);
  CHECK(pair_probability<double>(q, pos, one, 0.5) == doctest::Approx(0.880797077977882).epsilon(1e-13));
  CHECK(negative_pair_probability<double>(q, neg, pos, one, 0.5) ==
        doctest::Approx(0.119202922022118).epsilon(1e-12));

  RngStream rng(1, 1);
  const auto k = randn(6, 4, rng);
  std::vector<Span> negs;
  for (std::size_t j = 1; j < 6; ++j) negs.push_back(row(k, j));
  CHECK(std::abs(pair_probability<double>(row(k, 0), row(k, 0), negs, 1e6) - 1.0 / 6) < 1e-6);

  const Vec same{2, 2};
  const std::vector<Span> equal{Span(same), Span(same), Span(same)};
  CHECK(pair_probability<double>(same, same, equal, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(negative_pair_probability<double>(same, same, same, equal, 0.5) == doctest::Approx(0.25).epsilon(1e-15));
  const std::vector<Span> twin{Span(pos)};
  CHECK(pair_probability<double>(q, pos, twin, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(negative_pair_probability<double>(q, pos, pos, twin, 0.5) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("probabilities stay finite for sharp temperatures") {
  const Vec q{1, 0.01}, pos{1, 0}, neg{0.9, 0.1};
  const std::vector<Span> negs{Span(neg)};
  const double p = pair_probability<double>(q, pos, negs, 1.0 / 700);
  CHECK(std::isfinite(p));
  CHECK(p > 0.5);
  // against the unstabilized softmax on a scale that does not overflow
  const double tau = 0.3;
  const double sp = cosine_similarity<double>(q, pos) / tau, sn = cosine_similarity<double>(q, neg) / tau;
  CHECK(std::abs(pair_probability<double>(q, pos, negs, tau) - std::exp(sp) / (std::exp(sp) + std::exp(sn))) < 1e-12);
}

TEST_CASE("probability normalization and monotonicity") {
  for (std::uint64_t t = 0; t < 100; ++t) {
    RngStream rng(2, t);
    const auto q = randn(5, 3, rng), k = randn(5, 3, rng);
    std::vector<Span> negs;
    for (std::size_t j = 1; j < 5; ++j) negs.push_back(row(k, j));
    double s = pair_probability<double>(row(q, 0), row(k, 0), negs, 0.5);
    for (auto n : negs) s += negative_pair_probability<double>(row(q, 0), n, row(k, 0), negs, 0.5);
    CHECK(std::abs(s - 1) < 1e-9);
  }
  // moving the positive toward the anchor raises its probability
  const Vec anchor{1, 0}, n1{0.2, 1};
  const std::vector<Span> negs{Span(n1)};
  double last = 0;
  for (double a = 3.0; a >= 0; a -= 0.5) {
    const Vec pos{std::cos(a), std::sin(a)};
    const double p = pair_probability<double>(anchor, pos, negs, 0.5);
    CHECK(p > last);
    last = p;
  }
}

TEST_CASE("stage loss closed forms") {
  const auto q = nn::Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  const double hand = stage_loss(q, q, full_negative_sets(2), 0.5).item();
  CHECK(std::abs(hand - 0.507712044171890) < 1e-12);

  for (std::size_t n : {4u, 8u, 16u}) {
    const auto same = nn::Tensor<double>::full({n, 3}, 0.7);
    const double m = static_cast<double>(n - 1);
    const double expected = n * (std::log(m + 1) - m * std::log(1 - 1 / (m + 1)));
    CHECK(std::abs(stage_loss(same, same, full_negative_sets(n), 0.5).item() - expected) < 1e-9);
  }
}

TEST_CASE("stage loss is sum-reduced and permutation invariant") {
  RngStream rng(3, 1);
  const auto q = randn(6, 4, rng), k = randn(6, 4, rng);
  const auto sets = full_negative_sets(6);
  const double base = stage_loss(q, k, sets, 0.5).item();

  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  std::vector<double> qp(24), kp(24);
  for (std::size_t i = 0; i < 6; ++i) {
    std::copy_n(q.data().begin() + perm[i] * 4, 4, qp.begin() + i * 4);
    std::copy_n(k.data().begin() + perm[i] * 4, 4, kp.begin() + i * 4);
  }
  const auto permuted = stage_loss(nn::Tensor<double>::from({6, 4}, qp), nn::Tensor<double>::from({6, 4}, kp), sets, 0.5);
  CHECK(permuted.item() == doctest::Approx(base).epsilon(1e-12));

  std::vector<double> qs(q.data().begin(), q.data().end());
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t d = 0; d < 4; ++d) qs[i * 4 + d] *= 0.5 + i;
  }
  CHECK(std::abs(stage_loss(nn::Tensor<double>::from({6, 4}, qs), k, sets, 0.5).item() - base) < 1e-9);
}

TEST_CASE("stage loss gradient in 64-bit") {
  RngStream rng(4, 1);
  nn::Parameter<double> q{"q", randn(4, 8, rng, true)};
  nn::Parameter<double> k{"k", randn(4, 8, rng, true)};
  std::vector<nn::Parameter<double>*> ps{&q, &k};
  nn::GradcheckOptions opt;
  opt.step = 1e-6;
  const auto sets = full_negative_sets(4);
  const auto rep = nn::finite_difference_gradcheck([&] { return stage_loss(q.tensor, k.tensor, sets, 0.5); }, ps, opt);
  CHECK(rep.max_relative_error < 1e-5);
}

TEST_CASE("malformed negative sets are rejected") {
  const auto f = nn::Tensor<double>::full({4, 2}, 1.0);
  auto sets = full_negative_sets(4);
  sets[1].push_back(1);
  CHECK_THROWS_AS(stage_loss(f, f, sets, 0.5), Error);
  sets = full_negative_sets(4);
  sets[2][0] = 9;
  CHECK_THROWS_AS(validate_negative_sets(sets, 4), Error);
  sets = full_negative_sets(4);
  sets[0][1] = sets[0][0];
  CHECK_THROWS_AS(validate_negative_sets(sets, 4), Error);
  CHECK_THROWS_AS(validate_negative_sets(full_negative_sets(4), 4, 2), Error);
}

TEST_CASE("hard negative selection") {
  SUBCASE("worked example") {
    // anchor 0; candidates 1..3 with cosines 0.9, 0.1, 0.5 to the anchor key
    const auto at = [](double s) { return std::array<double, 2>{s, std::sqrt(1 - s * s)}; };
    const auto a = at(0.9), b = at(0.1), c = at(0.5);
    const auto keys = nn::Tensor<double>::from({4, 2}, {1, 0, a[0], a[1], b[0], b[1], c[0], c[1]});
    const auto sel = select_hard_negatives(keys, full_negative_sets(4), 2);
    CHECK(sel[0] == std::vector<std::size_t>{1, 3});
  }
  SUBCASE("keeping everything returns the same sets") {
    RngStream rng(5, 1);
    const auto keys = randn(8, 3, rng);
    const auto full = full_negative_sets(8);
    const auto sel = select_hard_negatives(keys, full, 7);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(std::set<std::size_t>(sel[i].begin(), sel[i].end()) == std::set<std::size_t>(full[i].begin(), full[i].end()));
    }
    CHECK_THROWS_AS(select_hard_negatives(keys, full, 8), Error);
  }
  SUBCASE("brute force agreement, nesting and ties") {
    for (std::uint64_t t = 0; t < 20; ++t) {
      RngStream rng(6, t);
      auto keys = randn(16, 8, rng);
      if (t % 4 == 0) {
        auto v = std::vector<double>(keys.data().begin(), keys.data().end());
        std::copy_n(v.begin() + 8, 8, v.begin() + 40);  // rows 1 and 5 tie for every anchor
        keys = nn::Tensor<double>::from({16, 8}, v);
      }
      const auto s1 = full_negative_sets(16);
      const auto s2 = select_hard_negatives(keys, s1, 7);
      const auto s3 = select_hard_negatives(keys, s2, 3);
      for (std::size_t i = 0; i < 16; ++i) {
        CHECK(s2[i] == brute_topk(keys, i, s1[i], 7));
        CHECK(s3[i] == brute_topk(keys, i, s2[i], 3));
        for (auto j : s3[i]) CHECK(std::find(s2[i].begin(), s2[i].end(), j) != s2[i].end());
      }
    }
  }
  SUBCASE("anchor ranking and non-nested mode") {
    RngStream rng(7, 1);
    const auto q = randn(8, 4, rng), k = randn(8, 4, rng);
    SelectionOptions opt{Ranking::AnchorToKey, true};
    CHECK_THROWS_AS(select_hard_negatives(k, full_negative_sets(8), 3, opt), Error);
    const auto sel = select_hard_negatives(k, full_negative_sets(8), 3, opt, &q);
    for (std::size_t i = 0; i < 8; ++i) {
      std::vector<std::pair<double, std::size_t>> all;
      for (std::size_t j = 0; j < 8; ++j) {
        if (j != i) all.emplace_back(cosine_similarity<double>(row(q, i), row(k, j)), j);
      }
      std::sort(all.begin(), all.end(), [](auto x, auto y) { return x.first != y.first ? x.first > y.first : x.second < y.second; });
      CHECK(sel[i] == std::vector<std::size_t>{all[0].second, all[1].second, all[2].second});
    }
    // non-nested picks from every other sample even when prev is narrower
    auto narrow = select_hard_negatives(k, full_negative_sets(8), 4);
    SelectionOptions flat{Ranking::KeyToKey, false};
    const auto a = select_hard_negatives(k, narrow, 3, flat);
    const auto b = select_hard_negatives(k, full_negative_sets(8), 3);
    CHECK(a == b);
  }
}

TEST_CASE("stage plans") {
  CHECK(stage_plan_string(derive_stage_plan(64, true)) == "63/31/15");
  CHECK(stage_plan_string(derive_stage_plan(32, true)) == "31/15/7");
  const auto single = derive_stage_plan(32, false);
  CHECK(single.size() == 1);
  CHECK(single[0].n_neg == 31);
  const auto custom = derive_stage_plan(16, true, std::vector<std::size_t>{15, 10});
  CHECK(stage_plan_string(custom) == "15/10");
  CHECK(custom[1].source == model::FeatureStage::H1);
  CHECK_THROWS_AS(derive_stage_plan(16, true, std::vector<std::size_t>{14, 7, 3}), Error);
  CHECK_THROWS_AS(derive_stage_plan(16, true, std::vector<std::size_t>{15, 3, 7}), Error);
}

TEST_CASE("total and progressive loss") {
  const std::vector<nn::Tensor<double>> parts{nn::Tensor<double>::scalar(1.0), nn::Tensor<double>::scalar(2.0),
                                              nn::Tensor<double>::scalar(3.0)};
  CHECK(total_loss<double>(parts).item() == 6.0);

  RngStream rng(8, 1);
  model::StageFeatures<double> q{randn(8, 8, rng), randn(8, 4, rng), randn(8, 2, rng)};
  model::StageFeatures<double> k{randn(8, 8, rng), randn(8, 4, rng), randn(8, 2, rng)};
  const auto one = progressive_loss(q, k, derive_stage_plan(8, false), 0.5);
  CHECK(one.stages.size() == 1);
  CHECK(one.total.item() == stage_loss(q.f, k.f, full_negative_sets(8), 0.5).item());

  const auto three = progressive_loss(q, k, derive_stage_plan(8, true), 0.5);
  CHECK(three.stages.size() == 3);
  CHECK(three.negatives[1] == select_hard_negatives(k.h1, full_negative_sets(8), 3));
  CHECK(three.negatives[2] == select_hard_negatives(k.h2, three.negatives[1], 1));
  CHECK(three.total.item() ==
        doctest::Approx(three.stages[0].item() + three.stages[1].item() + three.stages[2].item()).epsilon(1e-15));

  const auto same = nn::Tensor<double>::full({8, 4}, 1.0);
  model::StageFeatures<double> s{same, same, same};
  const double m = 7;
  const double closed = 8 * (std::log(m + 1) - m * std::log(1 - 1 / (m + 1)));
  const auto full = progressive_loss(s, s, derive_stage_plan(8, true, std::vector<std::size_t>{7, 7, 7}), 0.5);
  CHECK(std::abs(full.total.item() - 3 * closed) < 1e-9);
}
