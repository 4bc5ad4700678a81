#pragma once

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <random>
#include <vector>

#include "s2tx/core/params.hpp"

namespace s2tx {

struct CorruptionResult {
  Matrix<double> values;
  Matrix<std::uint8_t> missing;  // 1 where a burst replaced the observation

  Index corrupted() const { return missing.cast<Index>().sum(); }
};

/// Burst positions for one row: k non-overlapping bursts uniform over all
/// placements (stars and bars on len - k*(burst-1) slots).
inline std::vector<Index> burst_starts(Index len, Index burst, Index k, Rng& rng) {
  const Index slots = len - k * (burst - 1);
  std::vector<Index> pool(static_cast<std::size_t>(slots));
  std::iota(pool.begin(), pool.end(), Index{0});
  std::vector<Index> picked;
  std::sample(pool.begin(), pool.end(), std::back_inserter(picked), k, rng);
  std::sort(picked.begin(), picked.end());
  for (Index i = 0; i < k; ++i) picked[static_cast<std::size_t>(i)] += i * (burst - 1);
  return picked;
}

/// Replaces bursts of `burst` steps in each row of `segment` (D, len) with the
/// last observed value before the burst. Leading bursts take the first
/// observed value after them.
inline CorruptionResult corrupt_missing_mask(const Matrix<double>& segment, double miss_ratio, Index burst,
                                             std::uint64_t seed) {
  if (!(miss_ratio >= 0.0 && miss_ratio < 1.0)) throw ConfigError("miss_ratio must lie in [0, 1)");
  if (burst <= 0) throw ConfigError("burst length must be positive");
  const Index d = segment.rows(), len = segment.cols();
  CorruptionResult out{segment, Matrix<std::uint8_t>::Zero(d, len)};
  if (miss_ratio == 0.0 || len == 0) return out;
  const Index k = std::min(static_cast<Index>(std::llround(miss_ratio * static_cast<double>(len) /
                                                           static_cast<double>(burst))),
                           len / burst);
  Rng rng(seed);
  for (Index r = 0; r < d; ++r) {
    for (Index s : burst_starts(len, burst, k, rng)) out.missing.row(r).segment(s, burst).setOnes();
    Index first_obs = 0;
    while (first_obs < len && out.missing(r, first_obs)) ++first_obs;
    if (first_obs == len) continue;
    double last = segment(r, first_obs);
    for (Index t = 0; t < len; ++t) {
      if (out.missing(r, t))
        out.values(r, t) = last;
      else
        last = segment(r, t);
    }
  }
  return out;
}

inline Matrix<double> corrupt_missing(const Matrix<double>& segment, double miss_ratio, Index burst = 4,
                                      std::uint64_t seed = 0) {
  return corrupt_missing_mask(segment, miss_ratio, burst, seed).values;
}

}  // namespace s2tx
