#pragma once

#include <array>
#include <vector>

#include "lact/numcore/ops.hpp"
#include "lact/numcore/param.hpp"

namespace lact::lam {

enum class CodeRole : uint8_t { TaskIrrelevant = 0, TaskCentric = 1 };

inline const char* code_role_name(CodeRole r) {
  return r == CodeRole::TaskIrrelevant ? "TI" : "TC";
}

// Discrete latent action: N indices into a codebook.
struct LatentCode {
  std::vector<int> indices;
  CodeRole role = CodeRole::TaskCentric;

  bool operator==(const LatentCode& o) const { return indices == o.indices && role == o.role; }
};

// Vector-quantization table with EMA update state. Entries live in a
// ParamStore (ema_managed: values are written here, never by the optimizer).
// usage counts are raw tallies; ema_counts/ema_sums drive the entry update.
struct Codebook {
  std::shared_ptr<nc::Parameter<float>> entries;  // [C, d]
  std::vector<double> ema_counts;                 // per entry cluster size
  std::vector<double> ema_sums;                   // [C * d]
  std::vector<int64_t> usage;                     // raw assignment counts while unfrozen
  CodeRole role = CodeRole::TaskIrrelevant;

  // rolling window for dead-code restarts
  std::vector<int64_t> window_usage;
  int64_t window_total = 0;

  int size() const { return entries->value.dim(0); }
  int dim() const { return entries->value.dim(1); }
  bool frozen() const { return entries->frozen; }

  static Codebook create(nc::ParamStore<float>& store, const std::string& name, int c, int d,
                         CodeRole role, nc::Rng& rng) {
    Codebook cb;
    cb.entries = store.add(name, {c, d}, nc::Init::Normal1, rng);
    cb.entries->ema_managed = true;
    cb.role = role;
    cb.ema_counts.assign(static_cast<size_t>(c), 0.0);
    cb.ema_sums.assign(static_cast<size_t>(c) * d, 0.0);
    cb.usage.assign(static_cast<size_t>(c), 0);
    cb.window_usage.assign(static_cast<size_t>(c), 0);
    return cb;
  }

  void freeze() { entries->frozen = true; }

  int64_t total_usage() const {
    int64_t t = 0;
    for (auto u : usage) t += u;
    return t;
  }

  double perplexity() const {
    const int64_t total = total_usage();
    if (total == 0) return 1.0;
    double h = 0.0;
    for (auto u : usage) {
      if (u == 0) continue;
      const double p = static_cast<double>(u) / static_cast<double>(total);
      h -= p * std::log(p);
    }
    return std::exp(h);
  }
};

// Nearest-neighbor assignment under Euclidean distance, ties resolved to the
// lowest index. Distances accumulate in double regardless of T.
template <class T>
std::vector<int> nearest_entries(const nc::Tensor<T>& raw, const nc::Tensor<float>& entries) {
  const int n = raw.dim(0), d = raw.dim(1), c = entries.dim(0);
  if (d != entries.dim(1)) nc::shape_error("quantize", raw.shape(), entries.shape());
  std::vector<int> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (int j = 0; j < c; ++j) {
      double acc = 0;
      for (int k = 0; k < d; ++k) {
        const double diff = static_cast<double>(raw.data()[i * d + k]) -
                            static_cast<double>(entries.data()[j * d + k]);
        acc += diff * diff;
      }
      if (acc < best) {  // strict: equal distance keeps the lower index
        best = acc;
        best_j = j;
      }
    }
    out[static_cast<size_t>(i)] = best_j;
  }
  return out;
}

template <class T>
struct QuantizeResult {
  std::vector<int> indices;
  nc::Tensor<T> quantized;       // graph tensor; straight-through to raw
  nc::Tensor<T> codebook_loss;   // ||sg(raw) - e||^2, reported (entries move by EMA)
  nc::Tensor<T> commitment_loss; // beta * ||raw - sg(e)||^2
};

// VQ forward. Gradient flows to raw tokens only (straight-through); entry
// updates happen separately via EMA on the float codebook.
template <class T>
QuantizeResult<T> quantize(nc::Tape<T>* tape, nc::Tensor<T> raw, const nc::Tensor<float>& entries,
                           T beta) {
  QuantizeResult<T> res;
  res.indices = nearest_entries(raw, entries);
  const int n = raw.dim(0), d = raw.dim(1);
  nc::Tensor<T> picked({n, d});
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < d; ++k)
      picked.data()[i * d + k] =
          static_cast<T>(entries.data()[res.indices[static_cast<size_t>(i)] * d + k]);

  res.quantized = nc::straight_through(tape, raw, picked);
  // codebook term uses raw as a constant (no tape)
  nc::Tensor<T> raw_const(raw.shape(), raw.val_buf(), nullptr);
  res.codebook_loss = nc::mse_loss<T>(nullptr, picked, raw_const);
  res.commitment_loss = nc::scale(tape, nc::mse_loss(tape, raw, picked), beta);
  return res;
}

// EMA statistics and entry update for one batch of assignments. No-op on a
// frozen codebook (losses above are still reported by quantize).
void ema_update(Codebook& cb, const std::vector<const float*>& raw_rows,
                const std::vector<int>& indices, float decay, float epsilon = 1e-5f);

// Reinitializes entries whose share of window usage fell below
// 1 / (4 * |C|); restart vectors come from the provided batch rows.
int dead_code_restart(Codebook& cb, const std::vector<const float*>& raw_rows, nc::Rng& rng);

}  // namespace lact::lam
