#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace lact::world {

enum class Embodiment : uint8_t { Manip = 0, Nav = 1 };

inline const char* embodiment_name(Embodiment e) { return e == Embodiment::Manip ? "MANIP" : "NAV"; }

inline int action_dim(Embodiment e) { return e == Embodiment::Manip ? 3 : 2; }
inline int proprio_dim(Embodiment) { return 3; }  // MANIP: x,y,gripper  NAV: x,y,heading

// Frame interval between latent-action endpoints; equals the executable
// chunk size so one latent spans exactly one chunk.
inline int frame_interval(Embodiment e) { return e == Embodiment::Manip ? 8 : 4; }

// Per-step motion scales, world units per unit action.
constexpr float kManipStep = 0.05f;
constexpr float kNavForward = 0.04f;
constexpr float kNavTurn = 0.35f;  // radians per unit action
constexpr float kGraspRadius = 0.06f;
constexpr float kPlaceTolerance = 0.05f;
constexpr float kNavReach = 0.08f;

constexpr int kImageSize = 64;

enum class ColorTag : uint8_t { Red = 0, Green = 1, Blue = 2, Yellow = 3 };
enum class ShapeTag : uint8_t { Circle = 0, Square = 1, Triangle = 2, Marker = 3 };

inline const char* color_name(ColorTag c) {
  switch (c) {
    case ColorTag::Red: return "red";
    case ColorTag::Green: return "green";
    case ColorTag::Blue: return "blue";
    default: return "yellow";
  }
}
inline const char* shape_name(ShapeTag s) {
  switch (s) {
    case ShapeTag::Circle: return "circle";
    case ShapeTag::Square: return "square";
    case ShapeTag::Triangle: return "triangle";
    default: return "marker";
  }
}

struct Vec2 {
  float x = 0, y = 0;
};
inline float dist(Vec2 a, Vec2 b) {
  const float dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

struct Obj {
  int id = 0;
  ColorTag color = ColorTag::Red;
  ShapeTag shape = ShapeTag::Circle;
  Vec2 pos;
  bool held = false;
};

struct Distractor {
  Vec2 pos;
  Vec2 vel;
  uint64_t pattern_seed = 0;
  float noise_scale = 0.035f;  // "heavy" splits raise this
};

// Task templates. Corners are fixed named locations; markers are objects
// with ShapeTag::Marker.
enum class TaskKind : uint8_t { ManipPlace = 0, ManipPlaceTwo = 1, NavGoto = 2, NavGotoTwo = 3 };

constexpr std::array<Vec2, 4> kCorners = {{{0.85f, 0.85f}, {0.15f, 0.85f}, {0.85f, 0.15f}, {0.15f, 0.15f}}};
constexpr std::array<const char*, 4> kCornerNames = {"north east", "north west", "south east", "south west"};

struct TaskSpec {
  TaskKind kind = TaskKind::ManipPlace;
  // ManipPlace*: object ids + corner indices; NavGoto*: marker object ids
  std::array<int, 2> targets = {-1, -1};
  std::array<int, 2> corners = {-1, -1};
  int horizon = 64;
  bool long_horizon = false;
};

struct WorldState {
  Embodiment embodiment = Embodiment::Manip;
  Vec2 ego;
  float heading = 0;           // NAV only
  bool gripper_closed = false; // MANIP only
  int held_object = -1;
  std::vector<Obj> objects;
  Distractor distractor;
  bool distractor_active = true;
  TaskSpec task;
  int time = 0;
  // Two-waypoint NAV progress. Tracked in the state (the env knows it) but
  // deliberately not rendered, so a single frame aliases the task phase.
  bool nav_first_visited = false;

  std::vector<float> proprio() const {
    if (embodiment == Embodiment::Manip) return {ego.x, ego.y, gripper_closed ? 1.0f : 0.0f};
    return {ego.x, ego.y, heading};
  }
};

struct Image {
  std::vector<uint8_t> px;  // kImageSize^2 * 3, row-major RGB
  Image() : px(static_cast<size_t>(kImageSize) * kImageSize * 3, 0) {}
  uint8_t& at(int r, int c, int ch) { return px[(static_cast<size_t>(r) * kImageSize + c) * 3 + ch]; }
  uint8_t at(int r, int c, int ch) const { return px[(static_cast<size_t>(r) * kImageSize + c) * 3 + ch]; }
  float fat(int r, int c, int ch) const { return static_cast<float>(at(r, c, ch)) / 255.0f; }
};

struct EpisodeRecord {
  int64_t episode_id = 0;
  Embodiment embodiment = Embodiment::Manip;
  std::vector<Image> frames;                // T+1
  std::vector<std::vector<float>> actions;  // T x action_dim
  std::vector<std::vector<float>> proprio;  // T+1 x proprio_dim
  std::string instruction;                  // empty for the action-free split
  bool success = false;
  int32_t counterfactual_group = -1;      // same ego traj, resampled distractor/jitter
  int32_t ego_counterfactual_group = -1;  // same distractor, different ego traj

  int length() const { return static_cast<int>(actions.size()); }
};

}  // namespace lact::world
