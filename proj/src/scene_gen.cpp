#include "flowattack/scene_gen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "flowattack/tape.hpp"

namespace flowattack {

namespace {

constexpr int kTextureMargin = 16;

// Band-limited seeded noise on an oversized lattice; sampled bilinearly in
// frame coordinates so motions can pull texture from outside the frame.
class Texture {
 public:
  Texture(int frame_h, int frame_w, uint64_t seed, double contrast, double offset = 0.0)
      : h_(frame_h + 2 * kTextureMargin), w_(frame_w + 2 * kTextureMargin) {
    Field2D lattice(h_, w_);
    Rng rng(seed);
    for (double& v : lattice.values) v = rng.uniform();
    // band-limit hard enough that bilinear resampling stays accurate and
    // 3x3 smoothing kernels change the texture only marginally
    const std::vector<double> box(25, 1.0 / 25.0);
    for (int pass = 0; pass < 5; ++pass) {
      lattice = ad::conv_replicate(lattice, 5, 5, box);
    }
    double mean = 0.0;
    for (double v : lattice.values) mean += v;
    mean /= static_cast<double>(lattice.size());
    double var = 0.0;
    for (double v : lattice.values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(lattice.size());
    const double sd = std::sqrt(std::max(var, 1e-12));
    for (double& v : lattice.values) {
      v = 0.5 + offset + contrast * (v - mean) / sd;
      v = std::min(std::max(v, 0.02), 0.98);
    }
    lattice_ = std::move(lattice);
  }

  double sample(double x, double y) const {
    const double fx = std::min(std::max(x + kTextureMargin, 0.0), w_ - 1.0);
    const double fy = std::min(std::max(y + kTextureMargin, 0.0), h_ - 1.0);
    const int x0 = static_cast<int>(fx);
    const int x1 = std::min(x0 + 1, w_ - 1);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h_ - 1);
    const double wx = fx - x0;
    const double wy = fy - y0;
    return (1.0 - wy) * ((1.0 - wx) * lattice_.at(y0, x0) + wx * lattice_.at(y0, x1)) +
           wy * ((1.0 - wx) * lattice_.at(y1, x0) + wx * lattice_.at(y1, x1));
  }

  // per-channel variations keep the grayscale contrast of the base lattice
  double sample_channel(double x, double y, int c) const {
    const double base = sample(x, y);
    switch (c) {
      case 0: return base;
      case 1: return std::min(std::max(0.85 * base + 0.08, 0.0), 1.0);
      default: return std::min(std::max(0.70 * base + 0.18, 0.0), 1.0);
    }
  }

 private:
  int h_, w_;
  Field2D lattice_;
};

struct Vec2 {
  double x, y;
};

Vec2 motion_forward(const SpriteMotion& m, double x, double y) {
  return {m.cx + m.scale * (x - m.cx) + m.dx, m.cy + m.scale * (y - m.cy) + m.dy};
}

Vec2 motion_inverse(const SpriteMotion& m, double x, double y) {
  return {m.cx + (x - m.dx - m.cx) / m.scale, m.cy + (y - m.dy - m.cy) / m.scale};
}

bool inside_sprite(const Sprite& s, double x, double y) {
  if (s.shape == SpriteShape::Rectangle) {
    return x >= s.x0 && x <= s.x1 && y >= s.y0 && y <= s.y1;
  }
  const double cx = 0.5 * (s.x0 + s.x1), cy = 0.5 * (s.y0 + s.y1);
  const double rx = 0.5 * (s.x1 - s.x0), ry = 0.5 * (s.y1 - s.y0);
  if (rx <= 0.0 || ry <= 0.0) return false;
  const double nx = (x - cx) / rx, ny = (y - cy) / ry;
  return nx * nx + ny * ny <= 1.0;
}

// topmost sprite covering an I2 location, resolved through inverse motion
int owner_in_i2(const SceneSpec& spec, double x, double y) {
  for (int i = static_cast<int>(spec.sprites.size()) - 1; i >= 0; --i) {
    const Sprite& s = spec.sprites[i];
    const Vec2 p = motion_inverse(s.motion, x, y);
    if (inside_sprite(s, p.x, p.y)) return i;
  }
  return -1;
}

void validate_sprite(const SceneSpec& spec, const Sprite& s, int index) {
  const double lo = 1.0;
  const double hix = spec.width - 2.0, hiy = spec.height - 2.0;
  auto reject = [&](const char* which) {
    throw std::invalid_argument("render: sprite " + std::to_string(index) +
                                " leaves the frame (" + which + ")");
  };
  if (s.x0 < lo || s.y0 < lo || s.x1 > hix || s.y1 > hiy || s.x0 >= s.x1 || s.y0 >= s.y1) {
    reject("I1");
  }
  if (s.motion.scale <= 0.0) {
    throw std::invalid_argument("render: sprite " + std::to_string(index) +
                                " has non-positive scale");
  }
  const double xs[2] = {s.x0, s.x1};
  const double ys[2] = {s.y0, s.y1};
  for (double x : xs) {
    for (double y : ys) {
      const Vec2 q = motion_forward(s.motion, x, y);
      if (q.x < lo || q.y < lo || q.x > hix || q.y > hiy) reject("I2");
    }
  }
}

Category background_category(const SceneSpec& spec, int y) {
  return y < spec.height / 2 ? Category::Nature : Category::Flat;
}

SpriteMotion background_motion(const SceneSpec& spec) {
  SpriteMotion m;
  m.dx = spec.background_dx;
  m.dy = spec.background_dy;
  m.scale = spec.background_scale;
  m.cx = spec.background_cx;
  m.cy = spec.background_cy;
  return m;
}

}  // namespace

SceneInstance render(const SceneSpec& spec) {
  if (spec.width < 8 || spec.height < 8) {
    throw std::invalid_argument("render: scene must be at least 8x8");
  }
  for (size_t i = 0; i < spec.sprites.size(); ++i) {
    validate_sprite(spec, spec.sprites[i], static_cast<int>(i));
  }

  const int h = spec.height, w = spec.width;
  Texture background(h, w, spec.background_seed, spec.background_contrast);
  std::vector<Texture> textures;
  textures.reserve(spec.sprites.size());
  for (const Sprite& s : spec.sprites) {
    textures.emplace_back(h, w, s.texture_seed, s.texture_contrast, s.brightness_offset);
  }

  SceneInstance out;
  out.i1 = Image(h, w);
  out.i2 = Image(h, w);
  out.gt_flow = FlowField(h, w);
  out.labels = LabelMap(h, w);
  out.owner_i1.assign(static_cast<size_t>(h) * w, -1);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int owner = -1;
      for (int i = static_cast<int>(spec.sprites.size()) - 1; i >= 0; --i) {
        if (inside_sprite(spec.sprites[i], x, y)) {
          owner = i;
          break;
        }
      }
      out.owner_i1[static_cast<size_t>(y) * w + x] = static_cast<int16_t>(owner);
      if (owner >= 0) {
        const Sprite& s = spec.sprites[owner];
        for (int c = 0; c < 3; ++c) {
          out.i1.channels[c].at(y, x) = textures[owner].sample_channel(x, y, c);
        }
        out.labels.set(y, x, s.category);
        const Vec2 q = motion_forward(s.motion, x, y);
        out.gt_flow.u.at(y, x) = q.x - x;
        out.gt_flow.v.at(y, x) = q.y - y;
      } else {
        for (int c = 0; c < 3; ++c) {
          out.i1.channels[c].at(y, x) = background.sample_channel(x, y, c);
        }
        out.labels.set(y, x, background_category(spec, y));
        const Vec2 q = motion_forward(background_motion(spec), x, y);
        out.gt_flow.u.at(y, x) = q.x - x;
        out.gt_flow.v.at(y, x) = q.y - y;
      }
    }
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int owner = owner_in_i2(spec, x, y);
      if (owner >= 0) {
        const Sprite& s = spec.sprites[owner];
        const Vec2 p = motion_inverse(s.motion, x, y);
        for (int c = 0; c < 3; ++c) {
          out.i2.channels[c].at(y, x) = textures[owner].sample_channel(p.x, p.y, c);
        }
        (void)s;
      } else {
        const Vec2 p = motion_inverse(background_motion(spec), x, y);
        for (int c = 0; c < 3; ++c) {
          out.i2.channels[c].at(y, x) = background.sample_channel(p.x, p.y, c);
        }
      }
    }
  }

  return out;
}

Mask non_occluded_mask(const SceneSpec& spec, const SceneInstance& scene) {
  const int h = spec.height, w = spec.width;
  Mask m(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int owner = scene.owner_i1[static_cast<size_t>(y) * w + x];
      const double qx = x + scene.gt_flow.u.at(y, x);
      const double qy = y + scene.gt_flow.v.at(y, x);
      if (qx < 1.0 || qy < 1.0 || qx > w - 2.0 || qy > h - 2.0) continue;
      bool visible = true;
      for (int dy = 0; dy <= 1 && visible; ++dy) {
        for (int dx = 0; dx <= 1 && visible; ++dx) {
          const int nx = static_cast<int>(qx) + dx;
          const int ny = static_cast<int>(qy) + dy;
          visible = owner_in_i2(spec, nx, ny) == owner;
        }
      }
      if (visible) m.mark(y, x);
    }
  }
  return m;
}

std::vector<SceneSpec> scene_suite(int count, uint64_t base_seed, int width, int height) {
  if (count < 1) throw std::invalid_argument("scene_suite: count must be >= 1");
  if (width < 16 || height < 16) {
    throw std::invalid_argument("scene_suite: frame must be at least 16x16");
  }
  const double fx = width / 64.0, fy = height / 64.0;
  const double fm = std::min(fx, fy);  // scales motion magnitudes

  std::vector<SceneSpec> suite;
  suite.reserve(count);
  for (int i = 0; i < count; ++i) {
    Rng rng(base_seed ^ (0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(i + 1)));
    SceneSpec spec;
    spec.width = width;
    spec.height = height;
    spec.rng_seed = base_seed + static_cast<uint64_t>(i);
    spec.background_seed = rng.next_u64();
    spec.background_contrast = 0.30;
    spec.background_dx = rng.uniform(-0.6, 0.6) * fm;
    spec.background_dy = rng.uniform(-0.4, 0.4) * fm;
    // gently receding scene: negative divergence keeps background TTC
    // invalid so TTC metrics isolate the approaching vehicle
    spec.background_scale = rng.uniform(0.955, 0.97);
    spec.background_cx = width / 2.0 + rng.uniform(-8.0, 8.0) * fx;
    spec.background_cy = height / 2.0 + rng.uniform(-8.0, 8.0) * fy;

    // expanding vehicle in the lower half
    Sprite vehicle;
    vehicle.category = Category::Vehicle;
    vehicle.shape = SpriteShape::Rectangle;
    vehicle.texture_seed = rng.next_u64();
    vehicle.texture_contrast = 0.16;
    vehicle.brightness_offset = -0.24;  // dark body against the bright scene
    {
      const double sw = rng.uniform(16.0, 26.0) * fx;
      const double sh = rng.uniform(12.0, 18.0) * fy;
      vehicle.motion.scale = rng.uniform(1.08, 1.16);
      vehicle.motion.dx = rng.uniform(-1.2, 1.2) * fm;
      vehicle.motion.dy = rng.uniform(-0.6, 0.6) * fm;
      // margins keep the sprite inside both frames for any draw
      const double mx = 0.5 * sw * vehicle.motion.scale + std::fabs(vehicle.motion.dx) + 2.1;
      const double my = 0.5 * sh * vehicle.motion.scale + std::fabs(vehicle.motion.dy) + 2.1;
      const double cx = rng.uniform(mx, width - mx);
      const double cy = rng.uniform(std::max(height * 0.45, my), height - my);
      vehicle.x0 = cx - sw / 2;
      vehicle.x1 = cx + sw / 2;
      vehicle.y0 = cy - sh / 2;
      vehicle.y1 = cy + sh / 2;
      vehicle.motion.cx = cx;
      vehicle.motion.cy = cy;
    }
    spec.sprites.push_back(vehicle);

    // translating human, kept clear of the vehicle
    Sprite human;
    human.category = Category::Human;
    human.shape = SpriteShape::Ellipse;
    human.texture_seed = rng.next_u64();
    human.texture_contrast = 0.22;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double rx = rng.uniform(3.0, 5.0) * fx;
      const double ry = rng.uniform(6.0, 9.0) * fy;
      human.motion.dx = rng.uniform(-1.6, 1.6) * fm;
      human.motion.dy = rng.uniform(-0.8, 0.8) * fm;
      human.motion.scale = 1.0;
      const double mx = rx + std::fabs(human.motion.dx) + 2.1;
      const double my = ry + std::fabs(human.motion.dy) + 2.1;
      const double cx = rng.uniform(mx, width - mx);
      const double cy = rng.uniform(my, height - my);
      human.x0 = cx - rx;
      human.x1 = cx + rx;
      human.y0 = cy - ry;
      human.y1 = cy + ry;
      human.motion.cx = cx;
      human.motion.cy = cy;
      const bool clear = human.x1 + 3 < vehicle.x0 || human.x0 - 3 > vehicle.x1 ||
                         human.y1 + 3 < vehicle.y0 || human.y0 - 3 > vehicle.y1;
      if (clear) break;
    }
    spec.sprites.push_back(human);
    suite.push_back(std::move(spec));
  }
  return suite;
}

}  // namespace flowattack
