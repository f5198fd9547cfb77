#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"

namespace pmx {

struct ClassMetrics {
  std::size_t support = 0;  // true members in the eval set
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auroc = std::numeric_limits<double>::quiet_NaN();
  bool present = false;  // has at least one true member
};

struct EpochStats {
  double class_loss = 0.0;
  double domain_loss = 0.0;
  double lambda = 0.0;
};

struct CostProfile {
  std::size_t param_count = 0;
  std::uint64_t peak_resident_bytes = 0;
  double seconds_per_epoch = 0.0;
};

struct MetricsReport {
  double macro_f1 = 0.0;
  double auroc = 0.0;  // macro one-vs-rest over classes with both sides present
  std::vector<ClassMetrics> per_class;
  Matrix confusion;  // row = true class, column = predicted class
  std::vector<std::size_t> absent_classes;  // excluded from the macro averages
  std::vector<EpochStats> loss_curve;       // filled by training, not evaluate
  CostProfile cost;
};

/// Confusion matrix from labels and argmax predictions.
inline Matrix confusion_matrix(const std::vector<std::size_t>& truth,
                               const std::vector<std::size_t>& predicted,
                               std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("confusion: " + std::to_string(truth.size()) +
                         " labels vs " + std::to_string(predicted.size()) +
                         " predictions");
  }
  Matrix m(num_classes, num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= num_classes || predicted[i] >= num_classes) {
      throw ParamError("confusion: label out of range at index " +
                       std::to_string(i));
    }
    m(truth[i], predicted[i]) += 1.0;
  }
  return m;
}

/// One-vs-rest AUROC by the rank statistic. Tied scores contribute half a
/// win via midranks. NaN when either side is empty.
inline double auroc_rank(const std::vector<double>& scores,
                         const std::vector<int>& is_positive) {
  if (scores.size() != is_positive.size()) {
    throw DimensionError("auroc: score/label size mismatch");
  }
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based midrank shared by the tie group [i, j).
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (is_positive[order[t]]) {
        rank_sum_pos += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

/// Classification metrics from truth labels, argmax predictions, and
/// per-class scores (rows = samples, columns = classes). Classes with no
/// true member are flagged and excluded from both macro averages; classes
/// lacking a negative sample are excluded from the AUROC average only.
inline MetricsReport compute_metrics(const std::vector<std::size_t>& truth,
                                     const std::vector<std::size_t>& predicted,
                                     const Matrix& scores,
                                     std::size_t num_classes) {
  if (truth.empty()) throw DataError("metrics: no samples");
  if (scores.rows() != truth.size() || scores.cols() != num_classes) {
    throw DimensionError("metrics: scores " + scores.shape_str() +
                         ", expected " + std::to_string(truth.size()) + "x" +
                         std::to_string(num_classes));
  }
  MetricsReport report;
  report.confusion = confusion_matrix(truth, predicted, num_classes);
  report.per_class.resize(num_classes);

  double f1_sum = 0.0, auroc_sum = 0.0;
  std::size_t f1_n = 0, auroc_n = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassMetrics& cm = report.per_class[c];
    double tp = report.confusion(c, c);
    double fn = 0.0, fp = 0.0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      if (o == c) continue;
      fn += report.confusion(c, o);
      fp += report.confusion(o, c);
    }
    cm.support = static_cast<std::size_t>(tp + fn);
    cm.present = cm.support > 0;
    if (!cm.present) {
      report.absent_classes.push_back(c);
      continue;
    }
    cm.precision = (tp + fp) > 0.0 ? tp / (tp + fp) : 0.0;
    cm.recall = tp / (tp + fn);
    cm.f1 = (cm.precision + cm.recall) > 0.0
                ? 2.0 * cm.precision * cm.recall / (cm.precision + cm.recall)
                : 0.0;
    f1_sum += cm.f1;
    ++f1_n;

    std::vector<double> class_scores(truth.size());
    std::vector<int> positive(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      class_scores[i] = scores(i, c);
      positive[i] = truth[i] == c ? 1 : 0;
    }
    cm.auroc = auroc_rank(class_scores, positive);
    if (std::isfinite(cm.auroc)) {
      auroc_sum += cm.auroc;
      ++auroc_n;
    }
  }
  report.macro_f1 = f1_n > 0 ? f1_sum / static_cast<double>(f1_n) : 0.0;
  report.auroc = auroc_n > 0 ? auroc_sum / static_cast<double>(auroc_n) : 0.0;
  return report;
}

}  // namespace pmx
