#pragma once

#include <algorithm>
#include <vector>

#include "lact/numcore/rng.hpp"

namespace lact::harness {

struct CI {
  double mean = 0;
  double lo = 0;
  double hi = 0;
};

// Percentile bootstrap over the sample mean (95%, seeded resampling).
inline CI bootstrap_ci(const std::vector<double>& xs, int resamples = 1000, uint64_t seed = 0xb007) {
  CI ci;
  if (xs.empty()) return ci;
  double total = 0;
  for (double v : xs) total += v;
  ci.mean = total / static_cast<double>(xs.size());

  nc::Rng rng(seed);
  std::vector<double> means(static_cast<size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    double s = 0;
    for (size_t i = 0; i < xs.size(); ++i) s += xs[rng.below(xs.size())];
    means[static_cast<size_t>(r)] = s / static_cast<double>(xs.size());
  }
  std::sort(means.begin(), means.end());
  ci.lo = means[static_cast<size_t>(0.025 * resamples)];
  ci.hi = means[static_cast<size_t>(std::min<double>(resamples - 1, 0.975 * resamples))];
  return ci;
}

// Non-overlapping intervals with a strictly above b.
inline bool ci_above(const CI& a, const CI& b) { return a.lo > b.hi; }

}  // namespace lact::harness
