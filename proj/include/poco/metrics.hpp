#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

namespace poco::metrics {

/// Row-major n x K class probabilities plus integer labels.
struct PredictionSet {
  std::span<const double> scores;
  std::size_t num_classes = 0;
  std::span<const int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  double score(std::size_t i, std::size_t k) const { return scores[i * num_classes + k]; }
};

/// Throws unless n >= 1, each row sums to 1 within 1e-6 and labels lie in [0, K).
void validate(const PredictionSet& p);

/// argmax per row, ties to the lowest index.
std::vector<int> predict(const PredictionSet& p);

struct ClassMetrics {
  std::size_t support = 0;    // samples with this label
  std::size_t predicted = 0;  // samples predicted as this class
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  bool present = false;  // support > 0; only present classes enter the macro means
  // Set when the corresponding denominator was 0 and the value defaulted to 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
  double auc = 0;
  bool auc_defined = false;
};

struct MetricsReport {
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  double auc = 0;
  bool auc_defined = false;
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t n = 0;
};

/// Confusion matrix, per-class and macro precision/recall/F1. AUC is left unset.
MetricsReport confusion_and_prf(const PredictionSet& p);

/// Binary AUC as P(score_pos > score_neg) + P(tie)/2, by rank counting.
/// positive[i] marks the positive samples; throws when either class is empty.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

/// Area under the full ROC curve by the trapezoid rule, tied scores forming a
/// single diagonal step.
double binary_auc_trapezoid(std::span<const double> scores, std::span<const bool> positive);

/// K = 2: binary AUC on the class-1 column. K > 2: one-vs-rest per class,
/// averaged over classes that have both positives and negatives.
double roc_auc(const PredictionSet& p);

/// confusion_and_prf plus AUC (per class and overall). For K > 2 with no
/// class admitting an AUC the field stays undefined instead of throwing.
MetricsReport evaluate(const PredictionSet& p);

nlohmann::json to_json(const MetricsReport& r);

struct Projection {
  std::vector<double> pc1, pc2;
  double explained_ratio[2] = {0, 0};
};

/// Two leading principal components of row-major n x D features. Component
/// signs are fixed so the largest-magnitude coordinate is positive. n >= 2.
Projection pca2(std::span<const float> features, std::size_t n, std::size_t dim);

/// id,label,pc1,pc2,f0..f{D-1}. The pc columns are written only with_pca;
/// empty labels are written as -1.
void embed_export(std::span<const float> features, std::size_t n, std::size_t dim, std::span<const int> labels,
                  const std::filesystem::path& path, bool with_pca = true);

}  // namespace poco::metrics
