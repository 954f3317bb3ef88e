#include "lact/world/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace lact::world {

namespace {

constexpr float kGraspApproach = 0.035f;
constexpr float kPlaceApproach = 0.03f;

float clampf(float v) { return std::clamp(v, -1.0f, 1.0f); }

float wrap_angle(float a) {
  while (a > std::numbers::pi_v<float>) a -= 2.0f * std::numbers::pi_v<float>;
  while (a < -std::numbers::pi_v<float>) a += 2.0f * std::numbers::pi_v<float>;
  return a;
}

std::vector<float> manip_toward(const WorldState& s, Vec2 target, float grip) {
  return {clampf((target.x - s.ego.x) / kManipStep), clampf((target.y - s.ego.y) / kManipStep), grip};
}

std::vector<float> manip_subtask(const WorldState& s, int obj_id, int corner_id) {
  const Obj& o = s.objects[static_cast<size_t>(obj_id)];
  const Vec2 corner = kCorners[static_cast<size_t>(corner_id)];
  if (s.held_object == obj_id) {
    if (dist(s.ego, corner) > kPlaceApproach) return manip_toward(s, corner, 1.0f);
    return {0.0f, 0.0f, -1.0f};  // over the target: release
  }
  if (dist(s.ego, o.pos) > kGraspApproach) return manip_toward(s, o.pos, -1.0f);
  return {0.0f, 0.0f, 1.0f};  // close on the object
}

bool placed(const WorldState& s, int obj_id, int corner_id) {
  const Obj& o = s.objects[static_cast<size_t>(obj_id)];
  return !o.held && dist(o.pos, kCorners[static_cast<size_t>(corner_id)]) <= kPlaceTolerance;
}

std::vector<float> nav_toward(const WorldState& s, Vec2 target) {
  const float dx = target.x - s.ego.x, dy = target.y - s.ego.y;
  const float d = std::sqrt(dx * dx + dy * dy);
  const float err = wrap_angle(std::atan2(dy, dx) - s.heading);
  const float turn = clampf(err / kNavTurn);
  float fwd = 0.0f;
  if (std::abs(err) < 1.2f) fwd = std::clamp(d / kNavForward, 0.0f, 1.0f) * std::max(0.0f, std::cos(err));
  return {fwd, turn};
}

}  // namespace

std::vector<float> scripted_expert(const WorldState& s) {
  switch (s.task.kind) {
    case TaskKind::ManipPlace:
      return manip_subtask(s, s.task.targets[0], s.task.corners[0]);
    case TaskKind::ManipPlaceTwo:
      if (!placed(s, s.task.targets[0], s.task.corners[0]))
        return manip_subtask(s, s.task.targets[0], s.task.corners[0]);
      return manip_subtask(s, s.task.targets[1], s.task.corners[1]);
    case TaskKind::NavGoto:
      return nav_toward(s, s.objects[static_cast<size_t>(s.task.targets[0])].pos);
    case TaskKind::NavGotoTwo: {
      const int target = s.nav_first_visited ? s.task.targets[1] : s.task.targets[0];
      return nav_toward(s, s.objects[static_cast<size_t>(target)].pos);
    }
  }
  return {};
}

}  // namespace lact::world
