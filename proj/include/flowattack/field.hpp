#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowattack {

// Dense row-major 2D scalar field. Scalars are represented as 1x1 fields.
struct Field2D {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Field2D() = default;
  Field2D(int h, int w, double fill = 0.0) : height(h), width(w) {
    if (h < 1 || w < 1) {
      throw std::invalid_argument("Field2D: dimensions must be >= 1, got " +
                                  std::to_string(h) + "x" + std::to_string(w));
    }
    values.assign(static_cast<size_t>(h) * w, fill);
  }

  static Field2D zeros(int h, int w) { return Field2D(h, w, 0.0); }
  static Field2D full(int h, int w, double v) { return Field2D(h, w, v); }
  static Field2D scalar(double v) { return Field2D(1, 1, v); }

  double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }

  size_t size() const { return values.size(); }
  bool is_scalar() const { return height == 1 && width == 1; }
  bool same_shape(const Field2D& o) const { return height == o.height && width == o.width; }

  std::string shape_str() const {
    return std::to_string(height) + "x" + std::to_string(width);
  }

  bool all_finite() const {
    for (double v : values) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

}  // namespace flowattack
