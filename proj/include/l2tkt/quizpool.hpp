#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "l2tkt/types.hpp"

namespace l2tkt {

enum class PoolMode { static_pool, dynamic_pool };
enum class UpdateCadence { per_epoch, per_iteration };

std::string to_string(PoolMode mode);
std::string to_string(UpdateCadence cadence);
PoolMode parse_pool_mode(const std::string& text);
UpdateCadence parse_update_cadence(const std::string& text);

struct PoolConfig {
  double alpha = 0.7;  // weight of negatives relative to positives
  double gamma = 2.0;  // focus on difficult samples
  double sigma = 16.0;  // steepness of the pool-difficulty gate
  double mu = 0.5;      // centre of the gate
  double pool_fraction = 0.2;
  UpdateCadence cadence = UpdateCadence::per_epoch;
  PoolMode mode = PoolMode::dynamic_pool;

  void validate() const;
};

// How wrong a prediction is: 0 when confidently right, 1 when confidently wrong.
double difficulty(int label, double prediction);

// Probability of admitting a sample into the quiz pool:
//   (alpha (1 - y) + y) * psi^gamma * sigmoid(sigma ((1 - pool_mean) - mu))
double selection_probability(int label, double psi, double pool_mean, const PoolConfig& cfg);

struct PoolMember {
  SampleId id = 0;
  int label = 0;
  double psi = 0.0;

  bool operator==(const PoolMember&) const = default;
};

class QuizPool {
 public:
  QuizPool() = default;
  // members.size() must equal capacity; ids must be unique.
  QuizPool(std::size_t capacity, std::vector<PoolMember> members);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return members_.size(); }
  const std::vector<PoolMember>& members() const noexcept { return members_; }
  std::vector<SampleId> ids() const;
  bool contains(SampleId id) const;

  // Replaces every member's psi; `psi_of` is called once per member.
  void refresh(const std::function<double(const PoolMember&)>& psi_of);

  // Index of the easiest member: minimum psi, lowest id on ties.
  std::size_t easiest_index() const;
  // Puts `incoming` in place of the member at `index` and returns the old one.
  PoolMember swap_member(std::size_t index, PoolMember incoming);

  bool operator==(const QuizPool&) const = default;

 private:
  std::size_t capacity_ = 0;
  std::vector<PoolMember> members_;
};

double mean_difficulty(const QuizPool& pool);

struct PoolSplit {
  std::vector<PoolMember> textbook;
  QuizPool quiz;
};

// Random quiz pool of round(pool_fraction * N) samples; the rest is the
// textbook pool. Member psi starts at 0. Requires N >= 5.
PoolSplit static_split(std::span<const SampleId> ids, std::span<const int> labels,
                       const PoolConfig& cfg, std::uint64_t seed);

using BernoulliDraw = std::function<bool(double probability)>;

struct PoolUpdate {
  QuizPool pool;
  std::vector<PoolMember> textbook;
  std::size_t admitted = 0;
};

// One admission round. Candidates (the textbook pool, with fresh psi) are
// visited in order; each is admitted with probability selection_probability
// evaluated at the pool's current mean difficulty, which is recomputed after
// every admission. An admitted candidate replaces the easiest member, and
// that member rejoins the textbook pool. Pool member psi must be fresh.
PoolUpdate update_pool(QuizPool pool, std::vector<PoolMember> textbook, const PoolConfig& cfg,
                       const BernoulliDraw& draw);

}  // namespace l2tkt
