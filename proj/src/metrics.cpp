#include "l2tkt/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "l2tkt/error.hpp"

namespace l2tkt {

namespace {

void check_inputs(std::span<const double> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw ValidationError("metrics: " + std::to_string(preds.size()) + " predictions but " +
                          std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw ValidationError("metrics: empty input");
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("metrics: label outside {0,1}");
  }
}

std::pair<std::size_t, std::size_t> class_counts(std::span<const int> labels) {
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  return {pos, labels.size() - pos};
}

void require_both_classes(std::span<const int> labels) {
  const auto [pos, neg] = class_counts(labels);
  if (pos == 0 || neg == 0) {
    throw UndefinedMetricError("AUC is undefined: evaluation set has " + std::to_string(pos) +
                               " positives and " + std::to_string(neg) + " negatives");
  }
}

}  // namespace

Confusion confusion(std::span<const double> preds, std::span<const int> labels,
                    double threshold) {
  check_inputs(preds, labels);
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool predicted = preds[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

double auc(std::span<const double> preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  require_both_classes(labels);
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds[a] < preds[b]; });

  // Tied scores share their mean rank (1-based).
  double positive_rank_sum = 0.0;
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start;
    while (end + 1 < order.size() && preds[order[end + 1]] == preds[order[start]]) ++end;
    const double rank = 0.5 * static_cast<double>(start + end) + 1.0;
    for (std::size_t k = start; k <= end; ++k) {
      if (labels[order[k]] == 1) positive_rank_sum += rank;
    }
    start = end + 1;
  }
  const auto [pos, neg] = class_counts(labels);
  const double p = static_cast<double>(pos);
  const double u = positive_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

std::vector<RocPoint> roc_curve(std::span<const double> preds, std::span<const int> labels) {
  check_inputs(preds, labels);
  require_both_classes(labels);
  const auto [pos, neg] = class_counts(labels);
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return preds[a] > preds[b]; });

  std::vector<RocPoint> curve{{0.0, 0.0}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    labels[order[i]] == 1 ? ++tp : ++fp;
    const bool group_ends = i + 1 == order.size() || preds[order[i + 1]] != preds[order[i]];
    if (group_ends) {
      curve.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                       static_cast<double>(tp) / static_cast<double>(pos)});
    }
  }
  return curve;
}

double trapezoid_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

EvalResult evaluate(std::span<const double> preds, std::span<const int> labels,
                    double threshold) {
  EvalResult r;
  r.threshold = threshold;
  r.counts = confusion(preds, labels, threshold);
  r.auc = auc(preds, labels);
  const auto& c = r.counts;
  r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  r.sen = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  r.spec = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return r;
}

}  // namespace l2tkt
