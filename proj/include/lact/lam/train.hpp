#pragma once

#include <map>

#include "lact/feat/featurizer.hpp"
#include "lact/lam/model.hpp"
#include "lact/world/dataset.hpp"

namespace lact::lam {

struct PairRef {
  int episode = 0;  // index into Dataset::episodes
  int t = 0;
};

struct LamTrainConfig {
  int steps = 2000;
  int batch = 16;
  float lr = 3e-4f;
  uint64_t seed = 1;
  int log_every = 100;
  std::string metrics_csv;     // written when non-empty
  double holdout_frac = 0.05;  // trailing episode fraction excluded from training
  bool exclude_counterfactuals = true;  // keep probe groups unseen
};

struct LamTrainSummary {
  std::vector<float> recon_trace;  // per-step reconstruction loss
  int dead_restarts = 0;
  int64_t samples_seen = 0;
};

// Every (o_t, o_{t+k}) pair with both endpoints in range, k per embodiment.
// Stage-1 training with language skips instruction-free episodes.
// exclude_counterfactuals keeps probe groups out of training.
std::vector<PairRef> enumerate_pairs(const world::Dataset& ds, bool require_instruction,
                                     double skip_first_frac = 0.0, double skip_last_frac = 0.0,
                                     bool exclude_counterfactuals = false);

// Single-writer training loop for the model's configured stage. Deterministic
// given (config, seed): the loop is serial by construction.
LamTrainSummary train_lam(LamModel& model, const world::Dataset& ds, const feat::Featurizer& feat,
                          const InstructionEncoder& instr, const LamTrainConfig& cfg);

// Mean reconstruction error over the given pairs. With use_tc=false the
// stage-2 decoder receives zeroed task-centric tokens (TI-only ablation).
double lam_recon_error(const LamModel& model, const world::Dataset& ds, const feat::Featurizer& feat,
                       const InstructionEncoder& instr, const std::vector<PairRef>& pairs, bool use_tc);

struct Annotations {
  CodeRole role = CodeRole::TaskCentric;
  int n_latents = 4;
  int codebook_size = 16;
  uint64_t lam_hash = 0;
  int skipped_tail = 0;
  // episode id -> (pair start t, code) sorted by t
  std::map<int64_t, std::vector<std::pair<int, LatentCode>>> by_episode;

  const LatentCode* code_at(int64_t episode_id, int t) const;
};

// Deterministic annotation of every frame pair in the dataset with codes from
// the requested codebook. Read-only over the checkpointed model.
Annotations label_latent_actions(const LamModel& model, const world::Dataset& ds,
                                 const feat::Featurizer& feat, const InstructionEncoder& instr,
                                 CodeRole role);

void save_annotations(const Annotations& ann, const std::string& path);
Annotations load_annotations(const std::string& path);
uint64_t annotations_hash(const Annotations& ann);

}  // namespace lact::lam
