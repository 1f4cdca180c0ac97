#include "l2tkt/quizpool.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "l2tkt/error.hpp"

namespace l2tkt {

std::string to_string(PoolMode mode) {
  return mode == PoolMode::static_pool ? "static" : "dynamic";
}

std::string to_string(UpdateCadence cadence) {
  return cadence == UpdateCadence::per_epoch ? "per-epoch" : "per-iteration";
}

PoolMode parse_pool_mode(const std::string& text) {
  if (text == "static") return PoolMode::static_pool;
  if (text == "dynamic") return PoolMode::dynamic_pool;
  throw ValidationError("pool mode must be 'static' or 'dynamic', got '" + text + "'");
}

UpdateCadence parse_update_cadence(const std::string& text) {
  if (text == "per-epoch") return UpdateCadence::per_epoch;
  if (text == "per-iteration") return UpdateCadence::per_iteration;
  throw ValidationError("update cadence must be 'per-epoch' or 'per-iteration', got '" + text +
                        "'");
}

void PoolConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("alpha must lie in (0, 1]");
  if (!(gamma >= 0.0)) throw ValidationError("gamma must be >= 0");
  if (!(sigma > 0.0)) throw ValidationError("sigma must be > 0");
  if (!std::isfinite(mu)) throw ValidationError("mu must be finite");
  if (!(pool_fraction > 0.0 && pool_fraction < 1.0)) {
    throw ValidationError("pool_fraction must lie in (0, 1)");
  }
}

namespace {

void check_label(int label) {
  if (label != 0 && label != 1) {
    throw ValidationError("label must be 0 or 1, got " + std::to_string(label));
  }
}

void check_unit(double value, const char* what) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ValidationError(std::string(what) + " must lie in [0, 1], got " +
                          std::to_string(value));
  }
}

}  // namespace

double difficulty(int label, double prediction) {
  check_label(label);
  check_unit(prediction, "prediction");
  const double y = label;
  return (1.0 - y) * prediction + y * (1.0 - prediction);
}

double selection_probability(int label, double psi, double pool_mean, const PoolConfig& cfg) {
  check_label(label);
  check_unit(psi, "psi");
  check_unit(pool_mean, "pool mean difficulty");
  const double y = label;
  const double class_weight = cfg.alpha * (1.0 - y) + y;
  const double focus = std::pow(psi, cfg.gamma);
  const double gate = 1.0 / (1.0 + std::exp(-cfg.sigma * ((1.0 - pool_mean) - cfg.mu)));
  return class_weight * focus * gate;
}

QuizPool::QuizPool(std::size_t capacity, std::vector<PoolMember> members)
    : capacity_(capacity), members_(std::move(members)) {
  if (members_.size() != capacity_) {
    throw ValidationError("quiz pool holds " + std::to_string(members_.size()) +
                          " members but capacity is " + std::to_string(capacity_));
  }
  std::unordered_set<SampleId> seen;
  for (const auto& m : members_) {
    check_label(m.label);
    check_unit(m.psi, "psi");
    if (!seen.insert(m.id).second) {
      throw ValidationError("duplicate quiz pool id " + std::to_string(m.id));
    }
  }
}

std::vector<SampleId> QuizPool::ids() const {
  std::vector<SampleId> out;
  out.reserve(members_.size());
  for (const auto& m : members_) out.push_back(m.id);
  return out;
}

bool QuizPool::contains(SampleId id) const {
  return std::any_of(members_.begin(), members_.end(),
                     [id](const PoolMember& m) { return m.id == id; });
}

void QuizPool::refresh(const std::function<double(const PoolMember&)>& psi_of) {
  for (auto& m : members_) {
    m.psi = psi_of(m);
    check_unit(m.psi, "psi");
  }
}

std::size_t QuizPool::easiest_index() const {
  if (members_.empty()) throw ValidationError("quiz pool is empty");
  std::size_t best = 0;
  for (std::size_t i = 1; i < members_.size(); ++i) {
    const auto& m = members_[i];
    const auto& b = members_[best];
    if (m.psi < b.psi || (m.psi == b.psi && m.id < b.id)) best = i;
  }
  return best;
}

PoolMember QuizPool::swap_member(std::size_t index, PoolMember incoming) {
  if (index >= members_.size()) throw ValidationError("quiz pool index out of range");
  check_label(incoming.label);
  check_unit(incoming.psi, "psi");
  for (std::size_t i = 0; i < members_.size(); ++i) {
    if (i != index && members_[i].id == incoming.id) {
      throw ValidationError("sample " + std::to_string(incoming.id) + " is already pooled");
    }
  }
  return std::exchange(members_[index], incoming);
}

double mean_difficulty(const QuizPool& pool) {
  if (pool.size() == 0) throw ValidationError("mean difficulty of an empty quiz pool");
  double total = 0.0;
  for (const auto& m : pool.members()) total += m.psi;
  return total / static_cast<double>(pool.size());
}

PoolSplit static_split(std::span<const SampleId> ids, std::span<const int> labels,
                       const PoolConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (ids.size() != labels.size()) {
    throw ValidationError("static_split: ids and labels differ in length");
  }
  if (ids.size() < 5) {
    throw ValidationError("static_split needs at least 5 samples, got " +
                          std::to_string(ids.size()));
  }
  const auto quiz_size = static_cast<std::size_t>(
      std::llround(cfg.pool_fraction * static_cast<double>(ids.size())));
  if (quiz_size == 0 || quiz_size >= ids.size()) {
    throw ValidationError("pool fraction leaves an empty quiz or textbook pool");
  }

  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(quiz_size));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(quiz_size), order.end());

  std::vector<PoolMember> quiz;
  std::vector<PoolMember> textbook;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t i = order[k];
    check_label(labels[i]);
    (k < quiz_size ? quiz : textbook).push_back({ids[i], labels[i], 0.0});
  }
  return {std::move(textbook), QuizPool(quiz_size, std::move(quiz))};
}

PoolUpdate update_pool(QuizPool pool, std::vector<PoolMember> textbook, const PoolConfig& cfg,
                       const BernoulliDraw& draw) {
  if (pool.size() != pool.capacity() || pool.size() == 0) {
    throw ValidationError("update_pool needs a nonempty pool at capacity");
  }
  for (const auto& c : textbook) {
    if (pool.contains(c.id)) {
      throw LeakageError("sample " + std::to_string(c.id) +
                         " is in both the textbook and the quiz pool");
    }
  }

  PoolUpdate out;
  out.textbook.reserve(textbook.size());
  std::vector<PoolMember> returned;
  double pool_mean = mean_difficulty(pool);
  for (const auto& candidate : textbook) {
    const double p = selection_probability(candidate.label, candidate.psi, pool_mean, cfg);
    if (draw(p)) {
      returned.push_back(pool.swap_member(pool.easiest_index(), candidate));
      pool_mean = mean_difficulty(pool);
      ++out.admitted;
    } else {
      out.textbook.push_back(candidate);
    }
  }
  out.textbook.insert(out.textbook.end(), returned.begin(), returned.end());
  out.pool = std::move(pool);
  return out;
}

}  // namespace l2tkt
