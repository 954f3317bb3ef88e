#include "lact/world/render.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lact::world {

namespace {

struct Rgb {
  uint8_t r, g, b;
};

constexpr Rgb kBackground{26, 26, 26};
constexpr Rgb kDistractorColor{135, 135, 135};
constexpr Rgb kEgoOpen{245, 245, 245};
constexpr Rgb kEgoClosed{255, 80, 255};

Rgb object_color(ColorTag c) {
  switch (c) {
    case ColorTag::Red: return {220, 50, 50};
    case ColorTag::Green: return {60, 200, 60};
    case ColorTag::Blue: return {70, 100, 235};
    default: return {230, 220, 50};
  }
}

constexpr float kObjRadius = 3.0f;
constexpr float kMarkerOuter = 3.6f;
constexpr float kMarkerInner = 1.8f;
constexpr float kDistractorRadius = 3.0f;
constexpr float kEgoArm = 3.4f;
constexpr float kEgoNavRadius = 2.6f;

// world -> pixel, content shifted by jitter
inline float px_x(float wx, float jx) { return wx * kImageSize + jx; }
inline float px_y(float wy, float jy) { return (1.0f - wy) * kImageSize + jy; }

enum class Kind { Disc, Square, Triangle, Ring, Plus };

void draw(Image& img, Kind kind, Vec2 world, Vec2 jitter, float radius, Rgb color) {
  const float cx = px_x(world.x, jitter.x);
  const float cy = px_y(world.y, jitter.y);
  const int r0 = std::max(0, static_cast<int>(std::floor(cy - radius - 1)));
  const int r1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cy + radius + 1)));
  const int c0 = std::max(0, static_cast<int>(std::floor(cx - radius - 1)));
  const int c1 = std::min(kImageSize - 1, static_cast<int>(std::ceil(cx + radius + 1)));
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const float dx = (static_cast<float>(c) + 0.5f) - cx;
      const float dy = (static_cast<float>(r) + 0.5f) - cy;
      bool inside = false;
      switch (kind) {
        case Kind::Disc:
          inside = dx * dx + dy * dy <= radius * radius;
          break;
        case Kind::Square:
          inside = std::abs(dx) <= radius * 0.85f && std::abs(dy) <= radius * 0.85f;
          break;
        case Kind::Triangle:
          // apex up: row offset dy in [-radius, radius]
          inside = dy >= -radius && dy <= radius && std::abs(dx) <= (dy + radius) * 0.55f;
          break;
        case Kind::Ring: {
          const float d2 = dx * dx + dy * dy;
          inside = d2 <= radius * radius && d2 >= kMarkerInner * kMarkerInner;
          break;
        }
        case Kind::Plus:
          inside = (std::abs(dx) <= 1.0f && std::abs(dy) <= radius) ||
                   (std::abs(dy) <= 1.0f && std::abs(dx) <= radius);
          break;
      }
      if (inside) {
        img.at(r, c, 0) = color.r;
        img.at(r, c, 1) = color.g;
        img.at(r, c, 2) = color.b;
      }
    }
  }
}

}  // namespace

Image render(const WorldState& state, Vec2 jitter) {
  if (std::abs(jitter.x) > 4.0f || std::abs(jitter.y) > 4.0f)
    throw std::invalid_argument("render: |jitter| must be <= 4 pixels per axis");
  Image img;
  for (int r = 0; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c) {
      img.at(r, c, 0) = kBackground.r;
      img.at(r, c, 1) = kBackground.g;
      img.at(r, c, 2) = kBackground.b;
    }

  for (const auto& o : state.objects) {
    const Rgb col = object_color(o.color);
    switch (o.shape) {
      case ShapeTag::Circle: draw(img, Kind::Disc, o.pos, jitter, kObjRadius, col); break;
      case ShapeTag::Square: draw(img, Kind::Square, o.pos, jitter, kObjRadius, col); break;
      case ShapeTag::Triangle: draw(img, Kind::Triangle, o.pos, jitter, kObjRadius + 0.5f, col); break;
      case ShapeTag::Marker: draw(img, Kind::Ring, o.pos, jitter, kMarkerOuter, col); break;
    }
  }
  if (state.distractor_active)
    draw(img, Kind::Disc, state.distractor.pos, jitter, kDistractorRadius, kDistractorColor);

  if (state.embodiment == Embodiment::Manip)
    draw(img, Kind::Plus, state.ego, jitter, kEgoArm, state.gripper_closed ? kEgoClosed : kEgoOpen);
  else
    // plain disc: heading deliberately not rendered
    draw(img, Kind::Disc, state.ego, jitter, kEgoNavRadius, kEgoOpen);

  return img;
}

PixBox pixel_box(Vec2 p, float radius_px, Vec2 jitter) {
  const float cx = px_x(p.x, jitter.x);
  const float cy = px_y(p.y, jitter.y);
  return PixBox{std::max(0, static_cast<int>(std::floor(cy - radius_px - 1))),
                std::min(kImageSize, static_cast<int>(std::ceil(cy + radius_px + 2))),
                std::max(0, static_cast<int>(std::floor(cx - radius_px - 1))),
                std::min(kImageSize, static_cast<int>(std::ceil(cx + radius_px + 2)))};
}

}  // namespace lact::world
