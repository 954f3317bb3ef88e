#pragma once

#include "lact/feat/featurizer.hpp"
#include "lact/lam/train.hpp"
#include "lact/policy/model.hpp"
#include "lact/world/dataset.hpp"

namespace lact::policy {

// One weighted source of (frame, annotation) samples for pretraining.
struct PretrainPool {
  const world::Dataset* ds = nullptr;
  const lam::Annotations* ann = nullptr;
  double weight = 1.0;
  std::string tag;
  // optional episode filter (mixture arms select splits of one dataset)
  std::function<bool(const world::EpisodeRecord&)> filter;
};

struct PretrainConfig {
  int steps = 1500;
  int batch = 32;
  float lr = 3e-4f;
  uint64_t seed = 1;
  double holdout_frac = 0.04;  // trailing episodes per pool held out
  int log_every = 50;
  std::string metrics_csv;
  std::string mixture_tag;
  bool use_history = true;  // teacher-forced history from annotations at t-k
};

struct PretrainSummary {
  std::vector<float> loss_trace;
  float final_train_accuracy = 0;
  float holdout_accuracy = 0;
  int64_t samples_seen = 0;
};

// Next-latent-action pretraining over the mixture. Throws on an empty or
// zero-weight mixture. Deterministic given (config, seed).
PretrainSummary pretrain_policy(PolicyModel& model, const std::vector<PretrainPool>& pools,
                                const feat::Featurizer& feat, const PretrainConfig& cfg);

// Greedy ACT-token accuracy over annotated pairs (teacher-forced history).
// max_pairs caps the evaluation cost; pairs are drawn deterministically.
float act_token_accuracy(const PolicyModel& model, const world::Dataset& ds,
                         const lam::Annotations& ann, const feat::Featurizer& feat, bool use_history,
                         double from_frac, double to_frac, int max_pairs = 512);

}  // namespace lact::policy
