#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "l2tkt/error.hpp"
#include "l2tkt/metrics.hpp"
#include "oracles.hpp"

using namespace l2tkt;

namespace {

struct Instance {
  std::vector<double> preds;
  std::vector<int> labels;
};

// Coarse score grid so ties are common.
Instance random_instance(std::mt19937_64& rng, std::size_t max_n) {
  std::uniform_int_distribution<std::size_t> n_dist(2, max_n);
  std::uniform_int_distribution<int> grid(0, 8), bit(0, 1);
  Instance inst;
  const std::size_t n = n_dist(rng);
  for (std::size_t i = 0; i < n; ++i) {
    inst.preds.push_back(grid(rng) / 8.0);
    inst.labels.push_back(bit(rng));
  }
  inst.labels[0] = 1;
  inst.labels[1] = 0;
  return inst;
}

}  // namespace

TEST_CASE("confusion examples") {
  CHECK(confusion(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == Confusion{1, 0, 1, 0});
  CHECK(confusion(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) == Confusion{1, 1, 0, 0});
  CHECK_THROWS_AS(confusion(std::vector<double>{0.5}, std::vector<int>{1, 0}), ValidationError);
  CHECK_THROWS_AS(confusion(std::vector<double>{}, std::vector<int>{}), ValidationError);
}

TEST_CASE("auc examples") {
  const std::vector<int> labels{0, 0, 1, 1};
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, labels) == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, labels) == 0.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, labels) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.3, 0.4}, std::vector<int>{1, 1}), UndefinedMetricError);
  CHECK_THROWS_AS(evaluate(std::vector<double>{0.3, 0.4}, std::vector<int>{0, 0}),
                  UndefinedMetricError);
}

TEST_CASE("auc equals pairwise enumeration exactly") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    const Instance inst = random_instance(rng, 8);
    CHECK(auc(inst.preds, inst.labels) ==
          l2tkt::testing::brute_force_auc(inst.preds, inst.labels).value());
  }
}

TEST_CASE("rank auc equals trapezoidal ROC area") {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 2000; ++trial) {
    const Instance inst = random_instance(rng, 40);
    const auto curve = roc_curve(inst.preds, inst.labels);
    CHECK(curve.front().fpr == 0.0);
    CHECK(curve.back().tpr == 1.0);
    CHECK(std::abs(auc(inst.preds, inst.labels) - trapezoid_area(curve)) < 1e-12);
  }
}

TEST_CASE("auc is invariant under increasing transforms and label flips") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 500; ++trial) {
    const Instance inst = random_instance(rng, 20);
    const double base = auc(inst.preds, inst.labels);
    std::vector<double> transformed, negated;
    std::vector<int> flipped;
    for (std::size_t i = 0; i < inst.preds.size(); ++i) {
      transformed.push_back(std::exp(3.0 * inst.preds[i]) - 7.0);
      negated.push_back(-inst.preds[i]);
      flipped.push_back(1 - inst.labels[i]);
    }
    CHECK(auc(transformed, inst.labels) == doctest::Approx(base).epsilon(1e-14));
    CHECK(auc(negated, flipped) == doctest::Approx(base).epsilon(1e-14));
  }
}

TEST_CASE("acc, sen and spec match exhaustive counting") {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 2000; ++trial) {
    const Instance inst = random_instance(rng, 12);
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t i = 0; i < inst.preds.size(); ++i) {
      const bool pos = !(inst.preds[i] < 0.5);
      tp += pos && inst.labels[i] == 1;
      fp += pos && inst.labels[i] == 0;
      tn += !pos && inst.labels[i] == 0;
      fn += !pos && inst.labels[i] == 1;
    }
    const EvalResult r = evaluate(inst.preds, inst.labels);
    CHECK(r.counts == Confusion{tp, fp, tn, fn});
    CHECK(r.counts.total() == inst.preds.size());
    CHECK(r.acc == static_cast<double>(tp + tn) / static_cast<double>(inst.preds.size()));
    CHECK(r.sen == static_cast<double>(tp) / static_cast<double>(tp + fn));
    CHECK(r.spec == static_cast<double>(tn) / static_cast<double>(tn + fp));
    CHECK(r.threshold == 0.5);
  }
}
