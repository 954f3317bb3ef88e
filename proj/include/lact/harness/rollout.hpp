#pragma once

#include <functional>
#include <memory>

#include "lact/act/finetune.hpp"
#include "lact/feat/featurizer.hpp"
#include "lact/world/dataset.hpp"

namespace lact::harness {

struct RolloutResult {
  std::string task_id;
  bool success = false;
  int score = 0;  // 0..3 sub-goal credit
  int episode_length = 0;
  std::vector<lam::LatentCode> emitted_codes;
  std::string failure_reason;  // set when the rollout aborts (divergence)
};

// Produces one executable chunk per call. reset() clears per-episode state
// (latent-action history).
class Actor {
 public:
  virtual ~Actor() = default;
  virtual void reset() {}
  virtual act::ActionChunk plan(const world::WorldState& state, const world::Image& obs,
                                const std::string& instruction,
                                std::vector<lam::LatentCode>* emitted) = 0;
};

// Deployable policy: featurize, predict a latent action (self-referential
// history after the first step), decode a chunk.
class LatentPolicyActor : public Actor {
 public:
  LatentPolicyActor(const policy::PolicyModel& policy, const act::ActionDecoder& head,
                    const feat::Featurizer& feat, bool use_history)
      : policy_(&policy), head_(&head), feat_(&feat), use_history_(use_history) {}
  void reset() override { history_.clear(); }
  act::ActionChunk plan(const world::WorldState& state, const world::Image& obs,
                        const std::string& instruction,
                        std::vector<lam::LatentCode>* emitted) override;

 private:
  const policy::PolicyModel* policy_;
  const act::ActionDecoder* head_;
  const feat::Featurizer* feat_;
  bool use_history_;
  std::vector<lam::LatentCode> history_;
};

class ArBinActor : public Actor {
 public:
  ArBinActor(const policy::PolicyModel& policy, const act::ArBinDecoder& head,
             const feat::Featurizer& feat)
      : policy_(&policy), head_(&head), feat_(&feat) {}
  act::ActionChunk plan(const world::WorldState& state, const world::Image& obs,
                        const std::string& instruction, std::vector<lam::LatentCode>*) override;

 private:
  const policy::PolicyModel* policy_;
  const act::ArBinDecoder* head_;
  const feat::Featurizer* feat_;
};

// Scripted expert behind the Actor interface (harness sanity floor): the next
// k expert actions are computed by forward-simulating the ego dynamics.
class ExpertActor : public Actor {
 public:
  act::ActionChunk plan(const world::WorldState& state, const world::Image&, const std::string&,
                        std::vector<lam::LatentCode>*) override;
};

// Uniform chunk noise; seeded statelessly from the scenario and step so
// results are identical under any rollout partitioning.
class RandomChunkActor : public Actor {
 public:
  explicit RandomChunkActor(uint64_t salt) : salt_(salt) {}
  act::ActionChunk plan(const world::WorldState& state, const world::Image&, const std::string&,
                        std::vector<lam::LatentCode>*) override;

 private:
  uint64_t salt_;
};

struct RolloutConfig {
  uint64_t seed = 0;
  bool distractor = true;
  bool jitter = true;
  int jitter_amplitude = 2;
};

// Closed-loop evaluation: render, plan, execute k steps, repeat until success
// or horizon. Non-finite state marks the rollout failed with a reason.
RolloutResult rollout(Actor& actor, world::Embodiment emb, bool long_horizon,
                      const RolloutConfig& cfg);

struct SuiteSpec {
  std::string name;
  world::Embodiment emb = world::Embodiment::Manip;
  double long_frac = 0.0;  // fraction of long-horizon tasks
  bool distractor = true;
  bool jitter = true;
};

// Named suites: manip, manip_long, manip_distractor (the mixed distractor
// suite), nav, nav_short.
SuiteSpec suite_by_name(const std::string& name);

struct SuiteResult {
  std::vector<RolloutResult> rollouts;
  double mean_success = 0;
  double mean_score = 0;
};

using ActorFactory = std::function<std::unique_ptr<Actor>()>;

// rollouts per seed; rollouts parallelize read-only over actors created per
// worker. Deterministic for a fixed thread count (exact contract at 1).
SuiteResult run_suite(const ActorFactory& make_actor, const SuiteSpec& spec, int rollouts,
                      const std::vector<uint64_t>& seeds);

}  // namespace lact::harness
