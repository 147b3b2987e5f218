#include <doctest.h>

#include <cmath>

#include "flowattack/defense.hpp"
#include "flowattack/scene_gen.hpp"
#include "support.hpp"

using namespace flowattack;

namespace {

SceneSpec single_sprite_spec(SpriteMotion motion) {
  SceneSpec spec;
  spec.width = 64;
  spec.height = 64;
  spec.background_seed = 5;
  Sprite s;
  s.category = Category::Vehicle;
  s.shape = SpriteShape::Rectangle;
  s.x0 = 20;
  s.y0 = 24;
  s.x1 = 40;
  s.y1 = 40;
  s.texture_seed = 17;
  s.motion = motion;
  spec.sprites.push_back(s);
  return spec;
}

}  // namespace

TEST_CASE("render: zero motion reproduces the first frame exactly") {
  SpriteMotion still;
  still.cx = 30;
  still.cy = 32;
  const SceneInstance scene = render(single_sprite_spec(still));
  CHECK(testsupport::max_abs(scene.gt_flow.u) == 0.0);
  CHECK(testsupport::max_abs(scene.gt_flow.v) == 0.0);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < scene.i1.channels[c].size(); ++i) {
      CHECK(scene.i1.channels[c].values[i] == scene.i2.channels[c].values[i]);
    }
  }
}

TEST_CASE("render: translation writes the exact flow on sprite and background") {
  SpriteMotion move;
  move.dx = 2.0;
  move.cx = 30;
  move.cy = 32;
  SceneSpec spec = single_sprite_spec(move);
  spec.background_dx = 0.5;
  spec.background_dy = -0.25;
  const SceneInstance scene = render(spec);
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      if (scene.labels.at(y, x) == Category::Vehicle) {
        CHECK(scene.gt_flow.u.at(y, x) == 2.0);
        CHECK(scene.gt_flow.v.at(y, x) == 0.0);
      } else {
        CHECK(scene.gt_flow.u.at(y, x) == 0.5);
        CHECK(scene.gt_flow.v.at(y, x) == -0.25);
      }
    }
  }
}

TEST_CASE("render: expansion flow has the analytic divergence") {
  SpriteMotion expand;
  expand.scale = 1.1;
  expand.cx = 30;
  expand.cy = 32;
  const SceneInstance scene = render(single_sprite_spec(expand));
  // central differences of the linear flow recover (scale - 1) exactly
  for (int y = 26; y < 38; ++y) {
    for (int x = 24; x < 36; ++x) {
      REQUIRE(scene.labels.at(y, x) == Category::Vehicle);
      const double dudx = 0.5 * (scene.gt_flow.u.at(y, x + 1) - scene.gt_flow.u.at(y, x - 1));
      const double dvdy = 0.5 * (scene.gt_flow.v.at(y + 1, x) - scene.gt_flow.v.at(y - 1, x));
      CHECK(dudx == doctest::Approx(0.1).epsilon(1e-12));
      CHECK(dvdy == doctest::Approx(0.1).epsilon(1e-12));
    }
  }
}

TEST_CASE("render: warping I2 by the ground truth reconstructs I1 off occlusions") {
  const std::vector<SceneSpec> suite = scene_suite(4, 21);
  for (const SceneSpec& spec : suite) {
    const SceneInstance scene = render(spec);
    const Image warped = warp_image(scene.i2, scene.gt_flow);
    const Mask visible = non_occluded_mask(spec, scene);
    REQUIRE(visible.count > 1000);
    double acc = 0.0;
    long n = 0;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
          if (!visible.at(y, x)) continue;
          acc += std::fabs(warped.channels[c].at(y, x) - scene.i1.channels[c].at(y, x));
          ++n;
        }
      }
    }
    CHECK(acc / n < 1e-2);
  }
}

TEST_CASE("render: sprite leaving the frame is rejected") {
  SpriteMotion escape;
  escape.dx = 30.0;
  escape.cx = 30;
  escape.cy = 32;
  CHECK_THROWS_WITH_AS((void)render(single_sprite_spec(escape)),
                       doctest::Contains("leaves the frame"), std::invalid_argument);
}

TEST_CASE("render: deterministic for a fixed spec") {
  const SceneSpec spec = scene_suite(3, 77)[2];
  const SceneInstance a = render(spec);
  const SceneInstance b = render(spec);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < a.i1.channels[c].size(); ++i) {
      CHECK(a.i1.channels[c].values[i] == b.i1.channels[c].values[i]);
      CHECK(a.i2.channels[c].values[i] == b.i2.channels[c].values[i]);
    }
  }
  CHECK(a.labels.ids == b.labels.ids);
}

TEST_CASE("scene_suite: deterministic, vehicles everywhere, valid members") {
  const auto a = scene_suite(20, 123);
  const auto b = scene_suite(20, 123);
  REQUIRE(a.size() == 20);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].background_seed == b[i].background_seed);
    REQUIRE(a[i].sprites.size() == b[i].sprites.size());
    bool has_vehicle = false;
    for (const Sprite& s : a[i].sprites) has_vehicle |= s.category == Category::Vehicle;
    CHECK(has_vehicle);
    const SceneInstance scene = render(a[i]);  // must not throw
    CHECK(scene.labels.size() == 64 * 64);
    for (int c = 0; c < 3; ++c) {
      for (double v : scene.i1.channels[c].values) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }
    }
  }
}
