#pragma once

#include <memory>

#include "lact/act/decoder.hpp"
#include "lact/policy/train.hpp"

namespace lact::act {

enum class DecoderKind { Attention = 0, NoVisual = 1, ArBins = 2 };

inline const char* decoder_kind_name(DecoderKind k) {
  switch (k) {
    case DecoderKind::Attention: return "attention";
    case DecoderKind::NoVisual: return "no_visual";
    default: return "ar_bins";
  }
}

struct FinetuneConfig {
  int steps = 600;
  int batch = 16;
  float lr = 3e-4f;
  uint64_t seed = 1;
  float lambda_l1 = 1.0f;     // joint loss = NLL + lambda * L1
  bool decoder_only = false;  // freeze the policy trunk
  bool use_history = true;
  DecoderKind kind = DecoderKind::Attention;
  double holdout_frac = 0.1;  // trailing demo episodes held out
  double budget_frac = 1.0;   // fraction of training demos used
  DecoderDims dims = desk_dims();
  std::string metrics_csv;
};

struct FinetuneResult {
  std::vector<float> nll_trace;
  std::vector<float> l1_trace;
  float holdout_l1 = -1.0f;  // per-dim mean abs error through the full inference path
  uint64_t trunk_hash_before = 0;
  uint64_t trunk_hash_after = 0;
  int train_chunks = 0;
  int holdout_chunks = 0;
};

// Joint finetuning of the policy trunk (unless decoder_only) and a
// per-embodiment head on expert demo chunks. Demos must be single-embodiment
// and match the head's chunk size; mismatches throw std::invalid_argument.
FinetuneResult finetune(policy::PolicyModel& policy, ActionDecoder* head, ArBinDecoder* ar_head,
                        const world::Dataset& demos, const lam::Annotations& ann,
                        const feat::Featurizer& feat, const FinetuneConfig& cfg);

// Adapted checkpoint: policy trunk plus the per-embodiment head section.
void save_adapted(const std::string& path, const policy::PolicyModel& policy,
                  const ActionDecoder* head, const ArBinDecoder* ar_head, bool use_history);

struct AdaptedPolicy {
  std::unique_ptr<policy::PolicyModel> policy;
  std::unique_ptr<ActionDecoder> head;
  std::unique_ptr<ArBinDecoder> ar_head;
  DecoderKind kind = DecoderKind::Attention;
  bool use_history = true;
};
AdaptedPolicy load_adapted(const std::string& path);

}  // namespace lact::act
