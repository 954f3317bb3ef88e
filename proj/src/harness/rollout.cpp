#include "lact/harness/rollout.hpp"

#include <cmath>

#include "lact/numcore/parallel.hpp"
#include "lact/world/expert.hpp"
#include "lact/world/render.hpp"
#include "lact/world/world.hpp"

namespace lact::harness {

using world::Embodiment;
using world::WorldState;

act::ActionChunk LatentPolicyActor::plan(const WorldState& state, const world::Image& obs,
                                         const std::string& instruction,
                                         std::vector<lam::LatentCode>* emitted) {
  nc::Tensor<float> visual = feat_->encode_frame(obs);
  std::span<const lam::LatentCode> hist;
  if (use_history_ && !history_.empty()) hist = std::span<const lam::LatentCode>(&history_.back(), 1);
  auto pred = policy_->predict_latent_action(visual, instruction, hist);
  if (emitted) emitted->push_back(pred.code);
  history_.push_back(pred.code);

  std::vector<float> proprio;
  if (head_->config().proprio_dim > 0) proprio = state.proprio();
  return head_->decode(pred.act_hidden, pred.vis_hidden, proprio);
}

act::ActionChunk ArBinActor::plan(const WorldState& state, const world::Image& obs,
                                  const std::string& instruction, std::vector<lam::LatentCode>*) {
  nc::Tensor<float> visual = feat_->encode_frame(obs);
  policy::PolicyInput in;
  in.visual = &visual;
  in.instruction = &instruction;
  auto fw = policy_->forward(nullptr, in);
  nc::Tensor<float> ctx =
      nc::slice_rows<float>(nullptr, fw.hidden, fw.seq.total_len - 1, fw.seq.total_len);
  std::vector<float> proprio;
  if (head_->config().proprio_dim > 0) proprio = state.proprio();
  return head_->decode(ctx, proprio);
}

act::ActionChunk ExpertActor::plan(const WorldState& state, const world::Image&, const std::string&,
                                   std::vector<lam::LatentCode>*) {
  const int k = world::frame_interval(state.embodiment);
  act::ActionChunk chunk;
  chunk.embodiment = state.embodiment;
  chunk.actions = nc::Tensor<float>({k, world::action_dim(state.embodiment)});
  WorldState sim = state;
  sim.distractor_active = false;  // expert ignores the distractor anyway
  for (int s = 0; s < k; ++s) {
    const auto a = world::scripted_expert(sim);
    for (size_t d = 0; d < a.size(); ++d)
      chunk.actions.data()[s * static_cast<int>(a.size()) + static_cast<int>(d)] = a[d];
    sim = world::step(sim, a, 0);
  }
  return chunk;
}

act::ActionChunk RandomChunkActor::plan(const WorldState& state, const world::Image&,
                                        const std::string&, std::vector<lam::LatentCode>*) {
  const int k = world::frame_interval(state.embodiment);
  const int ad = world::action_dim(state.embodiment);
  act::ActionChunk chunk;
  chunk.embodiment = state.embodiment;
  chunk.actions = nc::Tensor<float>({k, ad});
  nc::Rng rng(salt_ ^ state.distractor.pattern_seed ^
              (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(state.time + 1)));
  for (size_t i = 0; i < chunk.actions.numel(); ++i)
    chunk.actions.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return chunk;
}

RolloutResult rollout(Actor& actor, Embodiment emb, bool long_horizon, const RolloutConfig& cfg) {
  nc::Rng rng(cfg.seed);
  world::Scenario sc = world::sample_scenario(emb, long_horizon, rng, cfg.distractor);
  const uint64_t jitter_seed = rng.next_u64();

  RolloutResult res;
  res.task_id = std::string(world::embodiment_name(emb)) + (long_horizon ? "_long" : "") + ":" +
                std::to_string(cfg.seed);
  actor.reset();

  WorldState s = sc.initial;
  world::SubgoalTracker tracker(s.task);
  const int k = world::frame_interval(emb);
  int t = 0;
  while (t < s.task.horizon && !tracker.success()) {
    world::Vec2 jit{0, 0};
    if (cfg.jitter) {
      const auto j = world::jitter_for_frame(jitter_seed, t, cfg.jitter_amplitude);
      jit = {j[0], j[1]};
    }
    const world::Image obs = world::render(s, jit);
    act::ActionChunk chunk = actor.plan(s, obs, sc.instruction, &res.emitted_codes);
    const int ad = chunk.actions.dim(1);
    for (int step_i = 0; step_i < k && t < s.task.horizon; ++step_i) {
      std::vector<float> a(chunk.actions.data() + step_i * ad, chunk.actions.data() + (step_i + 1) * ad);
      s = world::step(s, a, s.distractor.pattern_seed);
      ++t;
      if (!std::isfinite(s.ego.x) || !std::isfinite(s.ego.y)) {
        res.failure_reason = "non-finite state";
        res.episode_length = t;
        res.score = tracker.score();
        return res;
      }
      tracker.update(s);
      if (tracker.success()) break;
    }
  }
  res.success = tracker.success();
  res.score = tracker.score();
  res.episode_length = t;
  return res;
}

SuiteSpec suite_by_name(const std::string& name) {
  if (name == "manip") return {"manip", Embodiment::Manip, 0.0, true, true};
  if (name == "manip_long") return {"manip_long", Embodiment::Manip, 1.0, true, true};
  if (name == "manip_distractor") return {"manip_distractor", Embodiment::Manip, 0.5, true, true};
  if (name == "manip_clean") return {"manip_clean", Embodiment::Manip, 0.5, false, false};
  if (name == "nav") return {"nav", Embodiment::Nav, 0.7, true, true};
  if (name == "nav_short") return {"nav_short", Embodiment::Nav, 0.0, true, true};
  throw std::invalid_argument("unknown suite: " + name);
}

SuiteResult run_suite(const ActorFactory& make_actor, const SuiteSpec& spec, int rollouts,
                      const std::vector<uint64_t>& seeds) {
  SuiteResult out;
  const int total = rollouts * static_cast<int>(seeds.size());
  out.rollouts.resize(static_cast<size_t>(total));
  nc::parallel_chunks(total, [&](int, int begin, int end) {
    auto actor = make_actor();
    for (int i = begin; i < end; ++i) {
      const int seed_idx = i / rollouts;
      const int roll_idx = i % rollouts;
      RolloutConfig rc;
      rc.distractor = spec.distractor;
      rc.jitter = spec.jitter;
      // stable per-rollout seed: suite seed + rollout index
      rc.seed = nc::Rng(seeds[static_cast<size_t>(seed_idx)]).fork(static_cast<uint64_t>(roll_idx)).next_u64();
      const bool long_h =
          spec.long_frac > 0 && (roll_idx % 100) < static_cast<int>(spec.long_frac * 100);
      out.rollouts[static_cast<size_t>(i)] = rollout(*actor, spec.emb, long_h, rc);
    }
  });
  double succ = 0, score = 0;
  for (const auto& r : out.rollouts) {
    succ += r.success ? 1 : 0;
    score += r.score;
  }
  out.mean_success = succ / total;
  out.mean_score = score / total;
  return out;
}

}  // namespace lact::harness
