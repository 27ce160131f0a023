#include "poco/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "poco/error.hpp"
#include "poco/ops.hpp"

namespace poco::contrastive {

namespace {
constexpr const char* kModule = "contrastive";

void check_tau(double tau) {
  if (!(tau > 0)) fail(ErrorKind::InvalidArgument, kModule, "temperature must be positive");
}

template <typename T>
double norm(std::span<const T> v) {
  double s = 0;
  for (auto x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

template <typename T>
double dot(std::span<const T> u, std::span<const T> v) {
  double s = 0;
  for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<double>(u[i]) * v[i];
  return s;
}

template <typename T>
std::span<const T> row(const nn::Tensor<T>& m, std::size_t i) {
  const auto d = m.dim(1);
  return m.data().subspan(i * d, d);
}

/// Softmax over logits[0] (positive) and logits[1..] (negatives), returning the mass of `which`.
double softmax_mass(std::span<const double> logits, std::size_t which) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0;
  for (auto z : logits) denom += std::exp(z - mx);
  return std::exp(logits[which] - mx) / denom;
}

template <typename T>
std::vector<double> candidate_logits(std::span<const T> anchor, std::span<const T> positive,
                                     std::span<const std::span<const T>> negatives, double tau) {
  check_tau(tau);
  std::vector<double> z;
  z.reserve(negatives.size() + 1);
  z.push_back(cosine_similarity(anchor, positive) / tau);
  for (auto n : negatives) z.push_back(cosine_similarity(anchor, n) / tau);
  return z;
}
}  // namespace

std::vector<StagePlan> derive_stage_plan(std::size_t batch_size, bool use_pcl,
                                         const std::optional<std::vector<std::size_t>>& n_neg_override) {
  if (batch_size < 4 || batch_size % 4 != 0) {
    fail(ErrorKind::InvalidArgument, kModule,
         "batch size must be >= 4 and divisible by 4, got " + std::to_string(batch_size));
  }
  std::vector<std::size_t> counts;
  if (n_neg_override && !n_neg_override->empty()) {
    counts = *n_neg_override;
  } else {
    counts = {batch_size - 1, batch_size / 2 - 1, batch_size / 4 - 1};
  }
  if (!use_pcl) counts.resize(1);
  static constexpr model::FeatureStage kSources[] = {model::FeatureStage::F, model::FeatureStage::H1,
                                                    model::FeatureStage::H2};
  std::vector<StagePlan> plan;
  for (std::size_t t = 0; t < counts.size() && t < 3; ++t) {
    plan.push_back({static_cast<int>(t + 1), counts[t], kSources[t]});
  }
  if (counts.size() > 3) fail(ErrorKind::InvalidArgument, kModule, "at most three stages");
  validate_stage_plan(plan, batch_size);
  return plan;
}

void validate_stage_plan(std::span<const StagePlan> plan, std::size_t batch_size) {
  if (plan.empty() || plan.size() > 3) {
    fail(ErrorKind::InvalidArgument, kModule, "stage plan needs 1 to 3 stages");
  }
  if (plan[0].n_neg != batch_size - 1) {
    fail(ErrorKind::InvalidArgument, kModule,
         "stage 1 must use all " + std::to_string(batch_size - 1) + " in-batch negatives, got " +
             std::to_string(plan[0].n_neg));
  }
  for (std::size_t t = 1; t < plan.size(); ++t) {
    if (plan[t].n_neg > plan[t - 1].n_neg) {
      fail(ErrorKind::InvalidArgument, kModule, "negative counts must be non-increasing across stages");
    }
  }
}

std::string stage_plan_string(std::span<const StagePlan> plan) {
  std::string s;
  for (std::size_t t = 0; t < plan.size(); ++t) {
    if (t) s += '/';
    s += std::to_string(plan[t].n_neg);
  }
  return s;
}

template <typename T>
double cosine_similarity(std::span<const T> u, std::span<const T> v) {
  if (u.size() != v.size()) {
    fail(ErrorKind::Shape, kModule,
         "cosine similarity of vectors of length " + std::to_string(u.size()) + " and " +
             std::to_string(v.size()));
  }
  const double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) {
    fail(ErrorKind::Numeric, kModule, "cosine similarity of a zero-norm vector is undefined");
  }
  return dot(u, v) / (nu * nv);
}

template <typename T>
double pair_probability(std::span<const T> anchor, std::span<const T> positive,
                        std::span<const std::span<const T>> negatives, double tau) {
  const auto z = candidate_logits(anchor, positive, negatives, tau);
  return softmax_mass(z, 0);
}

template <typename T>
double negative_pair_probability(std::span<const T> anchor, std::span<const T> negative,
                                 std::span<const T> positive,
                                 std::span<const std::span<const T>> negatives, double tau) {
  auto z = candidate_logits(anchor, positive, negatives, tau);
  z.push_back(cosine_similarity(anchor, negative) / tau);
  // The queried negative must be one of the set; evaluate it under the set's denominator.
  const double target = z.back();
  z.pop_back();
  for (std::size_t m = 1; m < z.size(); ++m) {
    if (z[m] == target) return softmax_mass(z, m);
  }
  fail(ErrorKind::InvalidArgument, kModule, "negative is not a member of the negative set");
}

NegativeSets full_negative_sets(std::size_t batch_size) {
  NegativeSets sets(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    for (std::size_t j = 0; j < batch_size; ++j) {
      if (j != i) sets[i].push_back(j);
    }
  }
  return sets;
}

void validate_negative_sets(const NegativeSets& sets, std::size_t batch_size,
                            std::optional<std::size_t> expected_length) {
  if (sets.size() != batch_size) {
    fail(ErrorKind::InvalidArgument, kModule,
         "negative sets cover " + std::to_string(sets.size()) + " anchors, batch has " +
             std::to_string(batch_size));
  }
  std::vector<char> seen(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    if (expected_length && sets[i].size() != *expected_length) {
      fail(ErrorKind::InvalidArgument, kModule,
           "anchor " + std::to_string(i) + " has " + std::to_string(sets[i].size()) +
               " negatives, expected " + std::to_string(*expected_length));
    }
    std::fill(seen.begin(), seen.end(), 0);
    for (auto j : sets[i]) {
      if (j >= batch_size) {
        fail(ErrorKind::InvalidArgument, kModule,
             "anchor " + std::to_string(i) + " lists out-of-range negative " + std::to_string(j));
      }
      if (j == i) {
        fail(ErrorKind::InvalidArgument, kModule, "anchor " + std::to_string(i) + " lists itself as a negative");
      }
      if (seen[j]++) {
        fail(ErrorKind::InvalidArgument, kModule,
             "anchor " + std::to_string(i) + " lists negative " + std::to_string(j) + " twice");
      }
    }
  }
}

template <typename T>
NegativeSets select_hard_negatives(const nn::Tensor<T>& keys, const NegativeSets& prev,
                                   std::size_t n_prime, const SelectionOptions& options,
                                   const nn::Tensor<T>* queries) {
  if (keys.rank() != 2) fail(ErrorKind::Shape, kModule, "keys must be an (n, D) matrix");
  const auto n = keys.dim(0);
  const bool anchor_ranking = options.ranking == Ranking::AnchorToKey;
  if (anchor_ranking && (!queries || queries->shape() != keys.shape())) {
    fail(ErrorKind::InvalidArgument, kModule, "anchor ranking needs query features shaped like the keys");
  }
  const NegativeSets candidates = options.nested ? prev : full_negative_sets(n);
  validate_negative_sets(candidates, n);

  NegativeSets out(n);
  auto* trace = nn::KinkTrace::current();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cand = candidates[i];
    if (n_prime > cand.size()) {
      fail(ErrorKind::InvalidArgument, kModule,
           "cannot keep " + std::to_string(n_prime) + " hard negatives from " +
               std::to_string(cand.size()) + " candidates (anchor " + std::to_string(i) + ")");
    }
    const auto reference = anchor_ranking ? row(*queries, i) : row(keys, i);
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(cand.size());
    for (auto j : cand) scored.emplace_back(cosine_similarity(reference, row(keys, j)), j);
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n_prime), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    out[i].reserve(n_prime);
    for (std::size_t m = 0; m < n_prime; ++m) {
      out[i].push_back(scored[m].second);
      if (trace) trace->record(scored[m].second);
    }
  }
  return out;
}

template <typename T>
nn::Tensor<T> stage_loss(const nn::Tensor<T>& queries, const nn::Tensor<T>& keys,
                         const NegativeSets& negatives, double tau) {
  check_tau(tau);
  if (queries.rank() != 2 || queries.shape() != keys.shape()) {
    fail(ErrorKind::Shape, kModule,
         "stage loss needs matching (n, D) query and key features, got " + nn::shape_string(queries.shape()) +
             " and " + nn::shape_string(keys.shape()));
  }
  const auto n = queries.dim(0), D = queries.dim(1);
  validate_negative_sets(negatives, n);

  // Unit rows and norms in double precision.
  const auto normalize = [&](const nn::Tensor<T>& m, std::vector<double>& unit, std::vector<double>& norms) {
    unit.resize(n * D);
    norms.resize(n);
    const auto v = m.data();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t d = 0; d < D; ++d) s += static_cast<double>(v[i * D + d]) * v[i * D + d];
      const double nr = std::sqrt(s);
      if (nr == 0.0) {
        fail(ErrorKind::Numeric, kModule,
             "feature row " + std::to_string(i) + " has zero norm; cosine similarity is undefined");
      }
      norms[i] = nr;
      for (std::size_t d = 0; d < D; ++d) unit[i * D + d] = v[i * D + d] / nr;
    }
  };
  std::vector<double> qu, qn, ku, kn;
  normalize(queries, qu, qn);
  normalize(keys, ku, kn);

  auto dq = std::make_shared<std::vector<double>>(n * D, 0.0);
  auto dk = std::make_shared<std::vector<double>>(n * D, 0.0);
  double loss = 0;
  std::vector<std::size_t> cand;
  std::vector<double> sims, e, gsim;
  for (std::size_t i = 0; i < n; ++i) {
    cand.assign(1, i);
    cand.insert(cand.end(), negatives[i].begin(), negatives[i].end());
    const auto m = cand.size();
    sims.resize(m);
    e.resize(m);
    gsim.resize(m);
    const double* qi = qu.data() + i * D;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      const double* kc = ku.data() + cand[c] * D;
      double s = 0;
      for (std::size_t d = 0; d < D; ++d) s += qi[d] * kc[d];
      sims[c] = s;
      mx = std::max(mx, s / tau);
    }
    double denom = 0;
    for (std::size_t c = 0; c < m; ++c) {
      e[c] = std::exp(sims[c] / tau - mx);
      denom += e[c];
    }
    const double log_denom = std::log(denom);
    loss -= (sims[0] / tau - mx) - log_denom;

    // d loss_i / d z_c = P_c (1 - A) - [c = 0] + [c > 0] P_c / (1 - P_c), A = sum_j P_j / (1 - P_j).
    double a_sum = 0;
    std::vector<double> odds(m, 0.0);
    for (std::size_t c = 1; c < m; ++c) {
      double others = 0;
      for (std::size_t l = 0; l < m; ++l) {
        if (l != c) others += e[l];
      }
      loss -= std::log(others) - log_denom;
      odds[c] = e[c] / others;
      a_sum += odds[c];
    }
    for (std::size_t c = 0; c < m; ++c) {
      const double p = e[c] / denom;
      gsim[c] = (p * (1.0 - a_sum) - (c == 0 ? 1.0 : 0.0) + odds[c]) / tau;
    }
    for (std::size_t c = 0; c < m; ++c) {
      const auto j = cand[c];
      const double* kc = ku.data() + j * D;
      double* gq = dq->data() + i * D;
      double* gk = dk->data() + j * D;
      const double s = sims[c];
      for (std::size_t d = 0; d < D; ++d) {
        gq[d] += gsim[c] * (kc[d] - s * qi[d]) / qn[i];
        gk[d] += gsim[c] * (qi[d] - s * kc[d]) / kn[j];
      }
    }
  }

  nn::Tensor<T> qc = queries, kc = keys;
  return nn::Tensor<T>::make_result(nn::Shape{}, {static_cast<T>(loss)}, {queries, keys},
                                    [=](const std::vector<T>& g) mutable {
                                      const double up = g[0];
                                      if (qc.requires_grad()) {
                                        auto gq = qc.mutable_grad();
                                        for (std::size_t x = 0; x < gq.size(); ++x) gq[x] += static_cast<T>(up * (*dq)[x]);
                                      }
                                      if (kc.requires_grad()) {
                                        auto gk = kc.mutable_grad();
                                        for (std::size_t x = 0; x < gk.size(); ++x) gk[x] += static_cast<T>(up * (*dk)[x]);
                                      }
                                    });
}

template <typename T>
nn::Tensor<T> total_loss(std::span<const nn::Tensor<T>> stage_losses) {
  if (stage_losses.empty()) fail(ErrorKind::InvalidArgument, kModule, "total loss of zero stages");
  nn::Tensor<T> total = stage_losses[0];
  for (std::size_t t = 1; t < stage_losses.size(); ++t) total = nn::add(total, stage_losses[t]);
  return total;
}

template <typename T>
ProgressiveLoss<T> progressive_loss(const model::StageFeatures<T>& q, const model::StageFeatures<T>& k,
                                    std::span<const StagePlan> plan, double tau,
                                    const SelectionOptions& options) {
  if (plan.empty()) fail(ErrorKind::InvalidArgument, kModule, "empty stage plan");
  ProgressiveLoss<T> out;
  const auto n = k.f.dim(0);
  for (std::size_t t = 0; t < plan.size(); ++t) {
    const auto& qs = q.at(plan[t].source);
    const auto& ks = k.at(plan[t].source);
    NegativeSets sets;
    if (t == 0) {
      sets = full_negative_sets(n);
      if (plan[0].n_neg != n - 1) {
        fail(ErrorKind::InvalidArgument, kModule, "stage 1 must use all in-batch negatives");
      }
    } else {
      sets = select_hard_negatives(ks, out.negatives.back(), plan[t].n_neg, options, &qs);
    }
    out.stages.push_back(stage_loss(qs, ks, sets, tau));
    out.negatives.push_back(std::move(sets));
  }
  out.total = total_loss<T>(out.stages);
  return out;
}

#define POCO_INSTANTIATE_CONTRASTIVE(T)                                                                  \
  template double cosine_similarity<T>(std::span<const T>, std::span<const T>);                        \
  template double pair_probability<T>(std::span<const T>, std::span<const T>,                           \
                                      std::span<const std::span<const T>>, double);                     \
  template double negative_pair_probability<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                               std::span<const std::span<const T>>, double);            \
  template NegativeSets select_hard_negatives<T>(const nn::Tensor<T>&, const NegativeSets&, std::size_t,   \
                                                 const SelectionOptions&, const nn::Tensor<T>*);        \
  template nn::Tensor<T> stage_loss<T>(const nn::Tensor<T>&, const nn::Tensor<T>&, const NegativeSets&,   \
                                       double);                                                         \
  template nn::Tensor<T> total_loss<T>(std::span<const nn::Tensor<T>>);                                  \
  template ProgressiveLoss<T> progressive_loss<T>(const model::StageFeatures<T>&,                        \
                                                  const model::StageFeatures<T>&,                        \
                                                  std::span<const StagePlan>, double, const SelectionOptions&);

POCO_INSTANTIATE_CONTRASTIVE(float)
POCO_INSTANTIATE_CONTRASTIVE(double)

#undef POCO_INSTANTIATE_CONTRASTIVE

}  // namespace poco::contrastive
