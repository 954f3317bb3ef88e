#pragma once

#include <optional>
#include <string>

#include "lact/numcore/rng.hpp"
#include "lact/world/world.hpp"

namespace lact::world {

// Episode source splits. "Human" stands in for action-free egocentric video:
// manipulation scenes with no instruction, heavy distractor drift and heavy
// jitter; stored actions are never read by consumers of that split.
struct DataConfig {
  int episodes = 200;
  double manip_weight = 0.7;
  double nav_weight = 0.3;
  double human_weight = 0.0;
  bool distractor = true;
  bool jitter = true;
  double long_horizon_frac = 0.3;
  int cf_groups = 0;      // pairs sharing ego trajectories, resampled distractor/jitter
  int ego_cf_groups = 0;  // pairs sharing distractor/jitter, different ego
  int episodes_per_shard = 64;
};

struct SplitCounts {
  int manip = 0, nav = 0, human = 0;
};
SplitCounts allocate_mixture(const DataConfig& cfg);

struct Dataset {
  DataConfig config;
  uint64_t seed = 0;
  std::vector<EpisodeRecord> episodes;
  std::vector<std::vector<int>> cf_groups;      // indices into episodes
  std::vector<std::vector<int>> ego_cf_groups;
  int clipped_actions = 0;
  int expert_failures = 0;

  const EpisodeRecord& by_id(int64_t id) const;
};

// Expert rollout from a fixed scenario. Jitter offsets are integer pixels in
// [-amplitude, amplitude], one per frame, drawn from jitter_seed.
EpisodeRecord simulate_expert_episode(const Scenario& scenario, const std::string& instruction,
                                      uint64_t jitter_seed, bool jitter_on, int jitter_amplitude,
                                      int* clip_counter);

// Writes manifest.json + shard_<n>.bin under out_dir. A failure mid-write
// leaves an INCOMPLETE marker file. Regeneration from (config, seed) is
// bit-identical.
void generate_dataset(const DataConfig& cfg, uint64_t seed, const std::string& out_dir);

Dataset load_dataset(const std::string& dir);

// Order-independent content hash over the shard files.
uint64_t dataset_hash(const std::string& dir);

std::vector<float> jitter_for_frame(uint64_t jitter_seed, int frame_idx, int amplitude);

}  // namespace lact::world
