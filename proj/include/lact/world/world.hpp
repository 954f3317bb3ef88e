#pragma once

#include <span>

#include "lact/numcore/rng.hpp"
#include "lact/world/types.hpp"

namespace lact::world {

// Advances the world by one control step. Ego motion follows the clipped
// action; a held object tracks the ego; the distractor advances along its
// seeded pattern independent of the action. Out-of-range action components
// are clipped and counted into *clip_counter when provided.
WorldState step(const WorldState& state, std::span<const float> action, uint64_t noise_seed,
                int* clip_counter = nullptr);

// Ego-only state propagation: recovers proprio(t+1) from proprio(t) and the
// action through the same dynamics (used to validate stored trajectories).
std::vector<float> propagate_proprio(Embodiment emb, const std::vector<float>& proprio,
                                     std::span<const float> action);

std::string instruction_for(const TaskSpec& task, const std::vector<Obj>& objects);

// Scene + task sampling. Throws std::invalid_argument if the sampled task
// binds a missing object (never happens for generated scenes; guards loaded
// configs).
struct Scenario {
  WorldState initial;
  std::string instruction;
};
Scenario sample_scenario(Embodiment emb, bool long_horizon, nc::Rng& rng, bool distractor_on,
                         float distractor_noise = 0.035f);

void validate_task(const TaskSpec& task, const std::vector<Obj>& objects);

// Sub-goal progress for the 0-3 step-wise score. Update after every step;
// flags latch once achieved.
class SubgoalTracker {
 public:
  explicit SubgoalTracker(const TaskSpec& task) : task_(task) {}
  void update(const WorldState& s);
  int score() const;
  bool success() const { return success_; }

 private:
  TaskSpec task_;
  bool reached_ = false, grasped_ = false, placed1_ = false, placed2_ = false;
  bool visited1_ = false, half2_ = false, arrived_ = false;
  bool success_ = false;
};

}  // namespace lact::world
