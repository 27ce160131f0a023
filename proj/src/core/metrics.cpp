#include "poco/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <optional>
#include <numeric>
#include <string>

#include "poco/error.hpp"

namespace poco::metrics {

namespace {
constexpr const char* kModule = "metrics";

void check_binary(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) {
    fail(ErrorKind::Shape, kModule,
         std::to_string(scores.size()) + " scores for " + std::to_string(positive.size()) + " labels");
  }
  const auto pos = std::count(positive.begin(), positive.end(), true);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(positive.size())) {
    fail(ErrorKind::InvalidArgument, kModule, "AUC needs at least one positive and one negative sample");
  }
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}
}  // namespace

void validate(const PredictionSet& p) {
  if (p.labels.empty()) fail(ErrorKind::InvalidArgument, kModule, "empty prediction set");
  if (p.num_classes < 2) fail(ErrorKind::InvalidArgument, kModule, "need at least 2 classes");
  if (p.scores.size() != p.labels.size() * p.num_classes) {
    fail(ErrorKind::Shape, kModule,
         "score matrix has " + std::to_string(p.scores.size()) + " entries, expected " +
             std::to_string(p.labels.size()) + "x" + std::to_string(p.num_classes));
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int l = p.labels[i];
    if (l < 0 || static_cast<std::size_t>(l) >= p.num_classes) {
      fail(ErrorKind::InvalidArgument, kModule,
           "label " + std::to_string(l) + " at row " + std::to_string(i) + " outside [0, " +
               std::to_string(p.num_classes) + ")");
    }
    double s = 0;
    for (std::size_t k = 0; k < p.num_classes; ++k) {
      const double v = p.score(i, k);
      if (!std::isfinite(v)) fail(ErrorKind::Numeric, kModule, "non-finite score at row " + std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) {
      fail(ErrorKind::InvalidArgument, kModule,
           "scores at row " + std::to_string(i) + " sum to " + std::to_string(s) + ", not 1");
    }
  }
}

std::vector<int> predict(const PredictionSet& p) {
  std::vector<int> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < p.num_classes; ++k) {
      if (p.score(i, k) > p.score(i, best)) best = k;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

MetricsReport confusion_and_prf(const PredictionSet& p) {
  validate(p);
  const auto K = p.num_classes;
  MetricsReport r;
  r.n = p.size();
  r.confusion.assign(K, std::vector<std::size_t>(K, 0));
  const auto pred = predict(p);
  for (std::size_t i = 0; i < r.n; ++i) ++r.confusion[p.labels[i]][pred[i]];

  std::size_t correct = 0;
  for (std::size_t k = 0; k < K; ++k) correct += r.confusion[k][k];
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n);

  r.per_class.resize(K);
  std::size_t present = 0;
  for (std::size_t k = 0; k < K; ++k) {
    auto& c = r.per_class[k];
    for (std::size_t j = 0; j < K; ++j) {
      c.support += r.confusion[k][j];
      c.predicted += r.confusion[j][k];
    }
    const auto tp = static_cast<double>(r.confusion[k][k]);
    c.present = c.support > 0;
    c.precision_undefined = c.predicted == 0;
    c.recall_undefined = c.support == 0;
    c.precision = c.precision_undefined ? 0.0 : tp / static_cast<double>(c.predicted);
    c.recall = c.recall_undefined ? 0.0 : tp / static_cast<double>(c.support);
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    if (c.present) {
      ++present;
      r.macro_precision += c.precision;
      r.macro_recall += c.recall;
      r.macro_f1 += c.f1;
    }
  }
  r.macro_precision /= static_cast<double>(present);
  r.macro_recall /= static_cast<double>(present);
  r.macro_f1 /= static_cast<double>(present);
  return r;
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  check_binary(scores, positive);
  const auto idx = order_by_score(scores);
  double pos_total = 0, neg_total = 0, wins = 0;
  double neg_below = 0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    double p = 0, q = 0;
    while (b < idx.size() && scores[idx[b]] == scores[idx[a]]) {
      (positive[idx[b]] ? p : q) += 1;
      ++b;
    }
    wins += p * neg_below + 0.5 * p * q;
    neg_below += q;
    pos_total += p;
    neg_total += q;
    a = b;
  }
  return wins / (pos_total * neg_total);
}

double binary_auc_trapezoid(std::span<const double> scores, std::span<const bool> positive) {
  check_binary(scores, positive);
  auto idx = order_by_score(scores);
  std::reverse(idx.begin(), idx.end());
  const auto P = static_cast<double>(std::count(positive.begin(), positive.end(), true));
  const auto N = static_cast<double>(positive.size()) - P;
  double tp = 0, fp = 0, area = 0;
  for (std::size_t a = 0; a < idx.size();) {
    std::size_t b = a;
    double tp_next = tp, fp_next = fp;
    while (b < idx.size() && scores[idx[b]] == scores[idx[a]]) {
      (positive[idx[b]] ? tp_next : fp_next) += 1;
      ++b;
    }
    area += (fp_next / N - fp / N) * (tp_next / P + tp / P) / 2;
    tp = tp_next;
    fp = fp_next;
    a = b;
  }
  return area;
}

namespace {
// One-vs-rest AUC per class; entries without both positives and negatives are nullopt.
std::vector<std::optional<double>> per_class_auc(const PredictionSet& p) {
  std::vector<std::optional<double>> out(p.num_classes);
  std::vector<double> col(p.size());
  std::unique_ptr<bool[]> positive(new bool[p.size()]);
  for (std::size_t k = 0; k < p.num_classes; ++k) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      col[i] = p.score(i, k);
      positive[i] = p.labels[i] == static_cast<int>(k);
      pos += positive[i];
    }
    if (pos == 0 || pos == p.size()) continue;
    out[k] = binary_auc(col, std::span<const bool>(positive.get(), p.size()));
  }
  return out;
}
}  // namespace

double roc_auc(const PredictionSet& p) {
  validate(p);
  if (p.num_classes == 2) {
    const auto aucs = per_class_auc(p);
    if (!aucs[1]) fail(ErrorKind::InvalidArgument, kModule, "binary AUC needs both classes among the labels");
    return *aucs[1];
  }
  double sum = 0;
  std::size_t used = 0;
  for (const auto& a : per_class_auc(p)) {
    if (a) {
      sum += *a;
      ++used;
    }
  }
  if (used == 0) fail(ErrorKind::InvalidArgument, kModule, "no class has both positives and negatives");
  return sum / static_cast<double>(used);
}

MetricsReport evaluate(const PredictionSet& p) {
  auto r = confusion_and_prf(p);
  const auto aucs = per_class_auc(p);
  for (std::size_t k = 0; k < aucs.size(); ++k) {
    if (aucs[k]) {
      r.per_class[k].auc = *aucs[k];
      r.per_class[k].auc_defined = true;
    }
  }
  if (p.num_classes == 2) {
    if (aucs[1]) {
      r.auc = *aucs[1];
      r.auc_defined = true;
    }
  } else {
    double sum = 0;
    std::size_t used = 0;
    for (const auto& a : aucs) {
      if (a) {
        sum += *a;
        ++used;
      }
    }
    if (used > 0) {
      r.auc = sum / static_cast<double>(used);
      r.auc_defined = true;
    }
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& c = r.per_class[k];
    per_class.push_back({
        {"class", k},
        {"support", c.support},
        {"predicted", c.predicted},
        {"precision", c.precision},
        {"recall", c.recall},
        {"f1", c.f1},
        {"present", c.present},
        {"precision_undefined", c.precision_undefined},
        {"recall_undefined", c.recall_undefined},
        {"auc", c.auc_defined ? nlohmann::json(c.auc) : nlohmann::json(nullptr)},
    });
  }
  return {
      {"accuracy", r.accuracy},
      {"macro_precision", r.macro_precision},
      {"macro_recall", r.macro_recall},
      {"macro_f1", r.macro_f1},
      {"auc", r.auc_defined ? nlohmann::json(r.auc) : nlohmann::json(nullptr)},
      {"per_class", per_class},
      {"confusion", r.confusion},
      {"n", r.n},
  };
}

Projection pca2(std::span<const float> features, std::size_t n, std::size_t dim) {
  if (n < 2) fail(ErrorKind::InvalidArgument, kModule, "PCA needs at least 2 samples, got " + std::to_string(n));
  if (dim == 0 || features.size() != n * dim) {
    fail(ErrorKind::Shape, kModule, "feature matrix does not match " + std::to_string(n) + "x" + std::to_string(dim));
  }
  Eigen::MatrixXd X(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dim; ++j) X(i, j) = features[i * dim + j];
  }
  X.rowwise() -= X.colwise().mean();
  const Eigen::MatrixXd cov = (X.transpose() * X) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorKind::Numeric, kModule, "covariance eigendecomposition failed");
  const double total = cov.trace();

  Projection out;
  out.pc1.assign(n, 0.0);
  out.pc2.assign(n, 0.0);
  for (int c = 0; c < 2 && c < static_cast<int>(dim); ++c) {
    const auto col = static_cast<Eigen::Index>(dim) - 1 - c;
    const double lambda = std::max(eig.eigenvalues()(col), 0.0);
    // Directions carrying no variance project to exactly zero.
    if (total <= 0 || lambda <= 1e-12 * total) continue;
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    const Eigen::VectorXd proj = X * v;
    auto& dst = c == 0 ? out.pc1 : out.pc2;
    for (std::size_t i = 0; i < n; ++i) dst[i] = proj(static_cast<Eigen::Index>(i));
    out.explained_ratio[c] = lambda / total;
  }
  return out;
}

void embed_export(std::span<const float> features, std::size_t n, std::size_t dim, std::span<const int> labels,
                  const std::filesystem::path& path, bool with_pca) {
  if (features.size() != n * dim) {
    fail(ErrorKind::Shape, kModule, "feature matrix does not match " + std::to_string(n) + "x" + std::to_string(dim));
  }
  if (!labels.empty() && labels.size() != n) {
    fail(ErrorKind::Shape, kModule, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  Projection proj;
  if (with_pca) proj = pca2(features, n, dim);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, kModule, "cannot write " + path.string());
  out << "id,label";
  if (with_pca) out << ",pc1,pc2";
  for (std::size_t j = 0; j < dim; ++j) out << ",f" << j;
  out << '\n';
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    out << i << ',' << (labels.empty() ? -1 : labels[i]);
    if (with_pca) {
      std::snprintf(buf, sizeof buf, ",%.9g", proj.pc1[i]);
      out << buf;
      std::snprintf(buf, sizeof buf, ",%.9g", proj.pc2[i]);
      out << buf;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(features[i * dim + j]));
      out << buf;
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, kModule, "write failed for " + path.string());
}

}  // namespace poco::metrics
