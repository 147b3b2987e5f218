#pragma once

#include <cstdint>
#include <vector>

#include "flowattack/types.hpp"

namespace flowattack {

enum class SpriteShape { Rectangle, Ellipse };

// Similarity motion: p -> center + scale*(p - center) + (dx, dy), applied
// over one frame interval.
struct SpriteMotion {
  double dx = 0.0, dy = 0.0;
  double scale = 1.0;
  double cx = 0.0, cy = 0.0;
};

struct Sprite {
  Category category = Category::Vehicle;
  SpriteShape shape = SpriteShape::Rectangle;
  // bounding box in I1 coordinates; ellipses are inscribed
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  uint64_t texture_seed = 0;
  double texture_contrast = 0.26;   // intensity standard deviation
  double brightness_offset = 0.0;   // shifts the whole sprite, e.g. a dark car
  SpriteMotion motion;
};

struct SceneSpec {
  int width = 64, height = 64;
  uint64_t background_seed = 1;
  double background_contrast = 0.26;
  // background similarity motion (translation plus optional scaling about
  // a center, e.g. a gently receding scene)
  double background_dx = 0.0, background_dy = 0.0;
  double background_scale = 1.0;
  double background_cx = 0.0, background_cy = 0.0;
  std::vector<Sprite> sprites;  // painter's order, later on top
  uint64_t rng_seed = 0;
};

struct SceneInstance {
  Image i1, i2;
  FlowField gt_flow;
  LabelMap labels;
  std::vector<int16_t> owner_i1;  // sprite index per pixel, -1 = background
};

// Renders the pair with analytic ground-truth flow. Rejects sprites that
// leave the frame (in either image).
SceneInstance render(const SceneSpec& spec);

// Pixels whose ground-truth correspondence is visible in I2 (excluding a
// 1-px frame border); the complement is occluded/out-of-frame.
Mask non_occluded_mask(const SceneSpec& spec, const SceneInstance& scene);

// Deterministic varied suite: each scene holds one expanding vehicle and one
// translating human over a gently moving textured background. Sprite
// placement scales with the frame size (64x64 default).
std::vector<SceneSpec> scene_suite(int count, uint64_t base_seed, int width = 64,
                                   int height = 64);

}  // namespace flowattack
