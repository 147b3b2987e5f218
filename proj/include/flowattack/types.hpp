#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowattack/field.hpp"

namespace flowattack {

// H x W x 3 intensity image, channels in [0,1].
struct Image {
  std::array<Field2D, 3> channels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : channels{Field2D(h, w, fill), Field2D(h, w, fill), Field2D(h, w, fill)} {}

  int height() const { return channels[0].height; }
  int width() const { return channels[0].width; }
};

// H x W x 2 displacement field, (u, v) in pixels/frame.
struct FlowField {
  Field2D u, v;

  FlowField() = default;
  FlowField(int h, int w) : u(h, w), v(h, w) {}

  int height() const { return u.height; }
  int width() const { return u.width; }
};

// Semantic categories. Ids are the on-disk label-PNG convention and are
// stable across the artifact.
enum class Category : uint8_t {
  Void = 0,
  Construction = 1,
  Flat = 2,
  Human = 3,
  Nature = 4,
  Object = 5,
  Sky = 6,
  Vehicle = 7,
};

inline constexpr std::array<Category, 8> kAllCategories = {
    Category::Void,   Category::Construction, Category::Flat,
    Category::Human,  Category::Nature,       Category::Object,
    Category::Sky,    Category::Vehicle};

const char* category_name(Category c);
std::optional<Category> category_from_name(const std::string& name);

// Per-pixel semantic labels.
struct LabelMap {
  int height = 0, width = 0;
  std::vector<uint8_t> ids;

  LabelMap() = default;
  LabelMap(int h, int w, Category fill = Category::Void)
      : height(h), width(w),
        ids(static_cast<size_t>(h) * w, static_cast<uint8_t>(fill)) {}

  Category at(int y, int x) const {
    return static_cast<Category>(ids[static_cast<size_t>(y) * width + x]);
  }
  void set(int y, int x, Category c) {
    ids[static_cast<size_t>(y) * width + x] = static_cast<uint8_t>(c);
  }
  size_t size() const { return ids.size(); }
};

// Boolean pixel mask with a cached set-pixel count.
struct Mask {
  int height = 0, width = 0;
  std::vector<uint8_t> set;
  int count = 0;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), set(static_cast<size_t>(h) * w, 0) {}

  bool at(int y, int x) const { return set[static_cast<size_t>(y) * width + x] != 0; }
  void mark(int y, int x) {
    uint8_t& s = set[static_cast<size_t>(y) * width + x];
    if (!s) {
      s = 1;
      ++count;
    }
  }
  size_t size() const { return set.size(); }

  static Mask all(int h, int w) {
    Mask m(h, w);
    std::fill(m.set.begin(), m.set.end(), uint8_t{1});
    m.count = h * w;
    return m;
  }

  static Mask of_category(const LabelMap& labels, Category c) {
    Mask m(labels.height, labels.width);
    for (size_t i = 0; i < labels.ids.size(); ++i) {
      if (labels.ids[i] == static_cast<uint8_t>(c)) {
        m.set[i] = 1;
        ++m.count;
      }
    }
    return m;
  }

  Mask complement() const {
    Mask m(height, width);
    for (size_t i = 0; i < set.size(); ++i) m.set[i] = set[i] ? 0 : 1;
    m.count = height * width - count;
    return m;
  }
};

// mt19937_64 with hand-rolled variate transforms so streams are identical
// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    // xorshift* keeps the generator header-only and portable
    uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545F4914F6CDD1DULL;
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
  }

  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace flowattack
