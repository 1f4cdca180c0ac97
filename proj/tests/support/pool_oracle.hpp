#pragma once

// Reference model of one admission round, in long double and written from the
// admission rule directly. Used to derive exact per-candidate admission
// probabilities by enumerating every accept/reject path.

#include <algorithm>
#include <cmath>
#include <vector>

#include "l2tkt/quizpool.hpp"

namespace l2tkt::testing {

inline long double oracle_probability(int y, long double psi, long double pool_mean,
                                      const PoolConfig& cfg) {
  const long double weight = y == 1 ? 1.0L : static_cast<long double>(cfg.alpha);
  const long double gate =
      1.0L / (1.0L + std::exp(-static_cast<long double>(cfg.sigma) *
                              ((1.0L - pool_mean) - static_cast<long double>(cfg.mu))));
  return weight * std::pow(psi, static_cast<long double>(cfg.gamma)) * gate;
}

struct OracleMember {
  SampleId id;
  int label;
  long double psi;
};

inline long double oracle_mean(const std::vector<OracleMember>& pool) {
  long double s = 0.0L;
  for (const auto& m : pool) s += m.psi;
  return s / static_cast<long double>(pool.size());
}

inline std::size_t oracle_easiest(const std::vector<OracleMember>& pool) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (pool[i].psi < pool[best].psi || (pool[i].psi == pool[best].psi && pool[i].id < pool[best].id))
      best = i;
  }
  return best;
}

// Adds, for each candidate k, the probability that it is admitted.
inline void enumerate_admissions(std::vector<OracleMember> pool,
                                 const std::vector<OracleMember>& candidates, std::size_t k,
                                 long double path_prob, const PoolConfig& cfg,
                                 std::vector<long double>& admitted) {
  if (k == candidates.size() || path_prob == 0.0L) return;
  const auto& c = candidates[k];
  const long double p = oracle_probability(c.label, c.psi, oracle_mean(pool), cfg);
  enumerate_admissions(pool, candidates, k + 1, path_prob * (1.0L - p), cfg, admitted);
  admitted[k] += path_prob * p;
  pool[oracle_easiest(pool)] = c;
  enumerate_admissions(pool, candidates, k + 1, path_prob * p, cfg, admitted);
}

}  // namespace l2tkt::testing
