#pragma once

#include "lact/world/types.hpp"

namespace lact::world {

// Greedy proportional controller toward the current sub-goal; deterministic
// function of the state (distractor ignored by construction).
std::vector<float> scripted_expert(const WorldState& state);

}  // namespace lact::world
