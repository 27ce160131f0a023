#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "poco/model.hpp"
#include "poco/tensor.hpp"

namespace poco::contrastive {

/// Per-anchor negative indices for one stage. sets[i] never contains i.
using NegativeSets = std::vector<std::vector<std::size_t>>;

struct StagePlan {
  int stage = 1;  // 1-based
  std::size_t n_neg = 0;
  model::FeatureStage source = model::FeatureStage::F;
};

/// Stage t uses feature f / h1 / h2 for t = 1 / 2 / 3. Default negative counts
/// are (n-1, n/2-1, n/4-1); use_pcl = false keeps only stage 1. An override
/// lists 1 to 3 counts, the first of which must be n-1.
std::vector<StagePlan> derive_stage_plan(std::size_t batch_size, bool use_pcl,
                                         const std::optional<std::vector<std::size_t>>& n_neg_override = {});

void validate_stage_plan(std::span<const StagePlan> plan, std::size_t batch_size);

/// "63/31/15"
std::string stage_plan_string(std::span<const StagePlan> plan);

/// Ranking used to pick hard negatives: cos(k_j, k_i) against the positive key,
/// or cos(q_i, k_j) against the anchor.
enum class Ranking { KeyToKey, AnchorToKey };

struct SelectionOptions {
  Ranking ranking = Ranking::KeyToKey;
  // Stage t+1 picks from stage t's survivors; otherwise from every other sample.
  bool nested = true;
};

/// u.v / (|u| |v|); throws on a zero-norm argument.
template <typename T>
double cosine_similarity(std::span<const T> u, std::span<const T> v);

/// Softmax mass of the positive key among {positive} U negatives at temperature tau.
template <typename T>
double pair_probability(std::span<const T> anchor, std::span<const T> positive,
                        std::span<const std::span<const T>> negatives, double tau);

/// Softmax mass of one negative under the same denominator as pair_probability.
template <typename T>
double negative_pair_probability(std::span<const T> anchor, std::span<const T> negative,
                                 std::span<const T> positive,
                                 std::span<const std::span<const T>> negatives, double tau);

NegativeSets full_negative_sets(std::size_t batch_size);

/// Throws unless every list has expected_length distinct in-range indices,
/// none equal to its anchor.
void validate_negative_sets(const NegativeSets& sets, std::size_t batch_size,
                            std::optional<std::size_t> expected_length = {});

/// For each anchor, ranks the candidates by similarity (descending, ties to
/// the smaller index) and keeps the top n_prime. A tie means equal computed
/// doubles; similarities equal only in exact arithmetic may order either way.
/// Candidates are prev[i] when nested, all j != i otherwise. queries is
/// required for anchor ranking.
template <typename T>
NegativeSets select_hard_negatives(const nn::Tensor<T>& keys, const NegativeSets& prev,
                                   std::size_t n_prime, const SelectionOptions& options = {},
                                   const nn::Tensor<T>* queries = nullptr);

/// -sum_i log P(q_i|k_i) - sum_i sum_{j in S_i} log(1 - P(q_i|k_j)), summed
/// (not averaged) over the batch; differentiable in q and k.
template <typename T>
nn::Tensor<T> stage_loss(const nn::Tensor<T>& queries, const nn::Tensor<T>& keys,
                         const NegativeSets& negatives, double tau);

/// Unweighted sum of the stage losses.
template <typename T>
nn::Tensor<T> total_loss(std::span<const nn::Tensor<T>> stage_losses);

template <typename T>
struct ProgressiveLoss {
  nn::Tensor<T> total;
  std::vector<nn::Tensor<T>> stages;
  std::vector<NegativeSets> negatives;
};

/// Runs every stage of the plan: full negative sets for stage 1, hard-negative
/// selection on the current stage's key features afterwards.
template <typename T>
ProgressiveLoss<T> progressive_loss(const model::StageFeatures<T>& q, const model::StageFeatures<T>& k,
                                    std::span<const StagePlan> plan, double tau,
                                    const SelectionOptions& options = {});

}  // namespace poco::contrastive
