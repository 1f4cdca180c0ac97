#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace l2tkt {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

// A prediction counts as positive iff pred >= threshold.
Confusion confusion(std::span<const double> preds, std::span<const int> labels,
                    double threshold = 0.5);

// Mann-Whitney rank statistic: P(score_pos > score_neg) + P(tie) / 2.
// Throws UndefinedMetricError unless both classes are present.
double auc(std::span<const double> preds, std::span<const int> labels);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

// One point per distinct score, from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(std::span<const double> preds, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> curve);

struct EvalResult {
  double acc = 0.0;
  double sen = 0.0;
  double spec = 0.0;
  double auc = 0.0;
  double threshold = 0.5;
  Confusion counts;
};

EvalResult evaluate(std::span<const double> preds, std::span<const int> labels,
                    double threshold = 0.5);

}  // namespace l2tkt
