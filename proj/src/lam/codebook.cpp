#include "lact/lam/codebook.hpp"

namespace lact::lam {

void ema_update(Codebook& cb, const std::vector<const float*>& raw_rows,
                const std::vector<int>& indices, float decay, float epsilon) {
  if (cb.frozen()) return;
  const int c = cb.size(), d = cb.dim();
  std::vector<double> batch_counts(static_cast<size_t>(c), 0.0);
  std::vector<double> batch_sums(static_cast<size_t>(c) * d, 0.0);
  for (size_t i = 0; i < indices.size(); ++i) {
    const int j = indices[i];
    batch_counts[static_cast<size_t>(j)] += 1.0;
    const float* row = raw_rows[i];
    for (int k = 0; k < d; ++k) batch_sums[static_cast<size_t>(j) * d + k] += row[k];
    ++cb.usage[static_cast<size_t>(j)];
    ++cb.window_usage[static_cast<size_t>(j)];
    ++cb.window_total;
  }
  float* entries = cb.entries->value.data();
  for (int j = 0; j < c; ++j) {
    cb.ema_counts[static_cast<size_t>(j)] =
        decay * cb.ema_counts[static_cast<size_t>(j)] + (1.0 - decay) * batch_counts[static_cast<size_t>(j)];
    for (int k = 0; k < d; ++k) {
      const size_t at = static_cast<size_t>(j) * d + k;
      cb.ema_sums[at] = decay * cb.ema_sums[at] + (1.0 - decay) * batch_sums[at];
      if (cb.ema_counts[static_cast<size_t>(j)] > 1e-9)
        entries[at] = static_cast<float>(cb.ema_sums[at] /
                                         (cb.ema_counts[static_cast<size_t>(j)] + epsilon));
    }
  }
}

int dead_code_restart(Codebook& cb, const std::vector<const float*>& raw_rows, nc::Rng& rng) {
  if (cb.frozen() || cb.window_total == 0 || raw_rows.empty()) return 0;
  const int c = cb.size(), d = cb.dim();
  const double min_share = 1.0 / (4.0 * c);
  int restarted = 0;
  float* entries = cb.entries->value.data();
  for (int j = 0; j < c; ++j) {
    const double share =
        static_cast<double>(cb.window_usage[static_cast<size_t>(j)]) / static_cast<double>(cb.window_total);
    if (share < min_share) {
      const float* row = raw_rows[rng.below(raw_rows.size())];
      for (int k = 0; k < d; ++k) entries[static_cast<size_t>(j) * d + k] = row[k];
      cb.ema_counts[static_cast<size_t>(j)] = 1.0;
      for (int k = 0; k < d; ++k) cb.ema_sums[static_cast<size_t>(j) * d + k] = row[k];
      ++restarted;
    }
  }
  std::fill(cb.window_usage.begin(), cb.window_usage.end(), 0);
  cb.window_total = 0;
  return restarted;
}

}  // namespace lact::lam
