#pragma once

#include "lact/world/types.hpp"

namespace lact::world {

// Deterministic rasterization of a world state at 64x64. The whole viewport
// is translated by the jitter offset (pixels, |jitter| <= 4 per axis).
Image render(const WorldState& state, Vec2 jitter = {0, 0});

// Pixel bounding box (row0,row1,col0,col1, half-open) of an entity drawn at
// world position p with the given pixel radius and jitter; used by the
// pixel-mask test oracles.
struct PixBox {
  int r0, r1, c0, c1;
};
PixBox pixel_box(Vec2 p, float radius_px, Vec2 jitter = {0, 0});

}  // namespace lact::world
