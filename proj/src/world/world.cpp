#include "lact/world/world.hpp"

#include <algorithm>
#include <numbers>
#include <stdexcept>

namespace lact::world {

namespace {

constexpr float kArenaMax = 0.999f;

float clip_component(float v, int* counter) {
  if (v > 1.0f || v < -1.0f) {
    if (counter) ++*counter;
    return std::clamp(v, -1.0f, 1.0f);
  }
  return v;
}

float clamp_pos(float v) { return std::clamp(v, 0.0f, kArenaMax); }

float wrap_angle(float a) {
  while (a > std::numbers::pi_v<float>) a -= 2.0f * std::numbers::pi_v<float>;
  while (a < -std::numbers::pi_v<float>) a += 2.0f * std::numbers::pi_v<float>;
  return a;
}

void advance_distractor(Distractor& d, uint64_t noise_seed, int time) {
  // Ornstein-Uhlenbeck velocity drift; the noise stream is a pure function of
  // (pattern seed, step index) so trajectories replay exactly.
  nc::Rng rng(noise_seed ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(time + 1)));
  d.vel.x = 0.88f * d.vel.x + d.noise_scale * static_cast<float>(rng.gauss());
  d.vel.y = 0.88f * d.vel.y + d.noise_scale * static_cast<float>(rng.gauss());
  d.pos.x += d.vel.x;
  d.pos.y += d.vel.y;
  // reflect off the walls
  if (d.pos.x < 0.04f) { d.pos.x = 0.08f - d.pos.x; d.vel.x = -d.vel.x; }
  if (d.pos.x > 0.96f) { d.pos.x = 1.92f - d.pos.x; d.vel.x = -d.vel.x; }
  if (d.pos.y < 0.04f) { d.pos.y = 0.08f - d.pos.y; d.vel.y = -d.vel.y; }
  if (d.pos.y > 0.96f) { d.pos.y = 1.92f - d.pos.y; d.vel.y = -d.vel.y; }
  d.pos.x = clamp_pos(d.pos.x);
  d.pos.y = clamp_pos(d.pos.y);
}

}  // namespace

WorldState step(const WorldState& state, std::span<const float> action, uint64_t noise_seed,
                int* clip_counter) {
  if (static_cast<int>(action.size()) != action_dim(state.embodiment))
    throw std::invalid_argument("step: action has " + std::to_string(action.size()) +
                                " dims, embodiment expects " +
                                std::to_string(action_dim(state.embodiment)));
  WorldState s = state;

  if (s.embodiment == Embodiment::Manip) {
    const float dx = clip_component(action[0], clip_counter) * kManipStep;
    const float dy = clip_component(action[1], clip_counter) * kManipStep;
    const float grip = clip_component(action[2], clip_counter);
    s.ego.x = clamp_pos(s.ego.x + dx);
    s.ego.y = clamp_pos(s.ego.y + dy);

    const bool was_closed = s.gripper_closed;
    s.gripper_closed = grip > 0.0f;

    if (s.held_object >= 0) {
      s.objects[static_cast<size_t>(s.held_object)].pos = s.ego;
      if (was_closed && !s.gripper_closed) {
        s.objects[static_cast<size_t>(s.held_object)].held = false;
        s.held_object = -1;
      }
    } else if (!was_closed && s.gripper_closed) {
      int best = -1;
      float best_d = kGraspRadius;
      for (size_t i = 0; i < s.objects.size(); ++i) {
        if (s.objects[i].shape == ShapeTag::Marker) continue;
        const float d = dist(s.ego, s.objects[i].pos);
        if (d <= best_d) {
          best_d = d;
          best = static_cast<int>(i);
        }
      }
      if (best >= 0) {
        s.held_object = best;
        s.objects[static_cast<size_t>(best)].held = true;
        s.objects[static_cast<size_t>(best)].pos = s.ego;
      }
    }
  } else {
    const float fwd = clip_component(action[0], clip_counter) * kNavForward;
    const float turn = clip_component(action[1], clip_counter) * kNavTurn;
    s.heading = wrap_angle(s.heading + turn);
    s.ego.x = clamp_pos(s.ego.x + fwd * std::cos(s.heading));
    s.ego.y = clamp_pos(s.ego.y + fwd * std::sin(s.heading));
    if (s.task.kind == TaskKind::NavGotoTwo && !s.nav_first_visited && !s.objects.empty() &&
        dist(s.ego, s.objects[static_cast<size_t>(s.task.targets[0])].pos) <= kNavReach * 0.9f)
      s.nav_first_visited = true;
  }

  if (s.distractor_active) advance_distractor(s.distractor, noise_seed, state.time);
  s.time = state.time + 1;
  return s;
}

std::vector<float> propagate_proprio(Embodiment emb, const std::vector<float>& proprio,
                                     std::span<const float> action) {
  WorldState s;
  s.embodiment = emb;
  s.ego = {proprio[0], proprio[1]};
  s.distractor_active = false;
  if (emb == Embodiment::Manip)
    s.gripper_closed = proprio[2] > 0.5f;
  else
    s.heading = proprio[2];
  return step(s, action, 0).proprio();
}

std::string instruction_for(const TaskSpec& task, const std::vector<Obj>& objects) {
  auto obj_phrase = [&](int id) {
    const Obj& o = objects[static_cast<size_t>(id)];
    return std::string(color_name(o.color)) + " " + shape_name(o.shape);
  };
  switch (task.kind) {
    case TaskKind::ManipPlace:
      return "move the " + obj_phrase(task.targets[0]) + " to the " +
             kCornerNames[static_cast<size_t>(task.corners[0])] + " corner";
    case TaskKind::ManipPlaceTwo:
      return "move the " + obj_phrase(task.targets[0]) + " to the " +
             kCornerNames[static_cast<size_t>(task.corners[0])] + " corner then move the " +
             obj_phrase(task.targets[1]) + " to the " +
             kCornerNames[static_cast<size_t>(task.corners[1])] + " corner";
    case TaskKind::NavGoto:
      return "go to the " + std::string(color_name(objects[static_cast<size_t>(task.targets[0])].color)) +
             " marker";
    case TaskKind::NavGotoTwo:
      return "go to the " + std::string(color_name(objects[static_cast<size_t>(task.targets[0])].color)) +
             " marker then the " +
             std::string(color_name(objects[static_cast<size_t>(task.targets[1])].color)) + " marker";
  }
  return {};
}

void validate_task(const TaskSpec& task, const std::vector<Obj>& objects) {
  const int needed = (task.kind == TaskKind::ManipPlaceTwo || task.kind == TaskKind::NavGotoTwo) ? 2 : 1;
  for (int i = 0; i < needed; ++i) {
    const int id = task.targets[static_cast<size_t>(i)];
    if (id < 0 || id >= static_cast<int>(objects.size()))
      throw std::invalid_argument("task binds object " + std::to_string(id) +
                                  " which is not in the initial state");
    if ((task.kind == TaskKind::ManipPlace || task.kind == TaskKind::ManipPlaceTwo) &&
        objects[static_cast<size_t>(id)].shape == ShapeTag::Marker)
      throw std::invalid_argument("manipulation task bound to a marker");
  }
}

namespace {

Vec2 sample_away(nc::Rng& rng, const std::vector<Vec2>& taken, float min_gap, float lo, float hi,
                 float corner_gap = 0.0f) {
  for (int tries = 0; tries < 256; ++tries) {
    Vec2 p{static_cast<float>(rng.uniform(lo, hi)), static_cast<float>(rng.uniform(lo, hi))};
    bool ok = true;
    for (const auto& q : taken)
      if (dist(p, q) < min_gap) {
        ok = false;
        break;
      }
    // objects near a drop corner would confuse grasping during the second
    // subtask of two-stage tasks
    if (ok && corner_gap > 0.0f)
      for (const auto& corner : kCorners)
        if (dist(p, corner) < corner_gap) {
          ok = false;
          break;
        }
    if (ok) return p;
  }
  throw std::runtime_error("scene sampling failed to place an entity");
}

}  // namespace

Scenario sample_scenario(Embodiment emb, bool long_horizon, nc::Rng& rng, bool distractor_on,
                         float distractor_noise) {
  WorldState s;
  s.embodiment = emb;
  s.distractor_active = distractor_on;
  s.distractor.pattern_seed = rng.next_u64();
  s.distractor.pos = {static_cast<float>(rng.uniform(0.15, 0.85)), static_cast<float>(rng.uniform(0.15, 0.85))};
  s.distractor.noise_scale = distractor_noise;

  std::vector<Vec2> taken;
  if (emb == Embodiment::Manip) {
    // distinct colors keep instructions unambiguous
    int colors[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(colors[i], colors[rng.index(i + 1)]);
    const int n_obj = 2 + rng.index(2);
    for (int i = 0; i < n_obj; ++i) {
      Obj o;
      o.id = i;
      o.color = static_cast<ColorTag>(colors[i]);
      o.shape = static_cast<ShapeTag>(rng.index(3));
      o.pos = sample_away(rng, taken, 0.16f, 0.18f, 0.82f, 0.13f);
      taken.push_back(o.pos);
      s.objects.push_back(o);
    }
    s.ego = sample_away(rng, taken, 0.12f, 0.2f, 0.8f);

    s.task.kind = long_horizon ? TaskKind::ManipPlaceTwo : TaskKind::ManipPlace;
    s.task.long_horizon = long_horizon;
    s.task.horizon = long_horizon ? 112 : 64;
    s.task.targets[0] = rng.index(n_obj);
    s.task.corners[0] = rng.index(4);
    if (long_horizon) {
      do {
        s.task.targets[1] = rng.index(n_obj);
      } while (s.task.targets[1] == s.task.targets[0]);
      do {
        s.task.corners[1] = rng.index(4);
      } while (s.task.corners[1] == s.task.corners[0]);
    }
  } else {
    int colors[4] = {0, 1, 2, 3};
    for (int i = 3; i > 0; --i) std::swap(colors[i], colors[rng.index(i + 1)]);
    for (int i = 0; i < 3; ++i) {
      Obj o;
      o.id = i;
      o.color = static_cast<ColorTag>(colors[i]);
      o.shape = ShapeTag::Marker;
      o.pos = sample_away(rng, taken, 0.25f, 0.15f, 0.85f);
      taken.push_back(o.pos);
      s.objects.push_back(o);
    }
    s.task.kind = long_horizon ? TaskKind::NavGotoTwo : TaskKind::NavGoto;
    s.task.long_horizon = long_horizon;
    s.task.horizon = long_horizon ? 96 : 48;
    s.task.targets[0] = rng.index(3);
    if (long_horizon) {
      do {
        s.task.targets[1] = rng.index(3);
      } while (s.task.targets[1] == s.task.targets[0]);
    }
    // spawn away from the first target so trivial starts don't occur
    for (int tries = 0; tries < 256; ++tries) {
      s.ego = {static_cast<float>(rng.uniform(0.1, 0.9)), static_cast<float>(rng.uniform(0.1, 0.9))};
      if (dist(s.ego, s.objects[static_cast<size_t>(s.task.targets[0])].pos) > 0.4f) break;
    }
    s.heading = static_cast<float>(rng.uniform(-std::numbers::pi, std::numbers::pi));
  }

  validate_task(s.task, s.objects);
  std::string instr = instruction_for(s.task, s.objects);
  return Scenario{std::move(s), std::move(instr)};
}

void SubgoalTracker::update(const WorldState& s) {
  switch (task_.kind) {
    case TaskKind::ManipPlace: {
      const Obj& o = s.objects[static_cast<size_t>(task_.targets[0])];
      const Vec2 corner = kCorners[static_cast<size_t>(task_.corners[0])];
      if (dist(s.ego, o.pos) <= kGraspRadius) reached_ = true;
      if (o.held) grasped_ = true;
      if (!o.held && dist(o.pos, corner) <= kPlaceTolerance) placed1_ = true;
      success_ = placed1_;
      break;
    }
    case TaskKind::ManipPlaceTwo: {
      const Obj& o1 = s.objects[static_cast<size_t>(task_.targets[0])];
      const Obj& o2 = s.objects[static_cast<size_t>(task_.targets[1])];
      const Vec2 c1 = kCorners[static_cast<size_t>(task_.corners[0])];
      const Vec2 c2 = kCorners[static_cast<size_t>(task_.corners[1])];
      if (!o1.held && dist(o1.pos, c1) <= kPlaceTolerance) placed1_ = true;
      if (placed1_ && o2.held) grasped_ = true;
      if (placed1_ && !o2.held && dist(o2.pos, c2) <= kPlaceTolerance) placed2_ = true;
      success_ = placed1_ && placed2_;
      break;
    }
    case TaskKind::NavGoto: {
      const Vec2 goal = s.objects[static_cast<size_t>(task_.targets[0])].pos;
      const float d = dist(s.ego, goal);
      if (d <= 0.3f) reached_ = true;
      if (d <= 0.15f) half2_ = true;
      if (d <= kNavReach) arrived_ = true;
      success_ = arrived_;
      break;
    }
    case TaskKind::NavGotoTwo: {
      const Vec2 g1 = s.objects[static_cast<size_t>(task_.targets[0])].pos;
      const Vec2 g2 = s.objects[static_cast<size_t>(task_.targets[1])].pos;
      if (dist(s.ego, g1) <= kNavReach) visited1_ = true;
      if (visited1_ && dist(s.ego, g2) <= 0.2f) half2_ = true;
      if (visited1_ && dist(s.ego, g2) <= kNavReach) arrived_ = true;
      success_ = arrived_;
      break;
    }
  }
}

int SubgoalTracker::score() const {
  switch (task_.kind) {
    case TaskKind::ManipPlace:
      return (reached_ ? 1 : 0) + (grasped_ ? 1 : 0) + (placed1_ ? 1 : 0);
    case TaskKind::ManipPlaceTwo:
      return (placed1_ ? 1 : 0) + (grasped_ ? 1 : 0) + (placed2_ ? 1 : 0);
    case TaskKind::NavGoto:
      return (reached_ ? 1 : 0) + (half2_ ? 1 : 0) + (arrived_ ? 1 : 0);
    case TaskKind::NavGotoTwo:
      return (visited1_ ? 1 : 0) + (half2_ ? 1 : 0) + (arrived_ ? 1 : 0);
  }
  return 0;
}

}  // namespace lact::world
