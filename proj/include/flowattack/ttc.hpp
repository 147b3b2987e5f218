#pragma once

#include <cstdint>
#include <vector>

#include "flowattack/types.hpp"

namespace flowattack {

// Per-pixel time-to-collision in frames, from the local flow-field scale
// rate. Invalid where the scene recedes or the fit is degenerate.
struct TTCMap {
  int height = 0, width = 0;
  Field2D ttc;
  std::vector<uint8_t> valid;

  TTCMap() = default;
  TTCMap(int h, int w)
      : height(h), width(w), ttc(h, w), valid(static_cast<size_t>(h) * w, 0) {}
};

inline constexpr double kMinScaleRate = 1e-4;  // per frame

// Least-squares affine fit of the flow over an odd window around each
// pixel; TTC = 1 / scale-rate where the rate exceeds kMinScaleRate.
TTCMap ttc_from_flow(const FlowField& flow, int window);

struct TTCErrorReport {
  double mean_relative_error = 0.0;  // |T_A - T_O| / T_O over jointly-valid pixels
  double validity_churn = 0.0;       // fraction of pixels whose validity flag changed
  int jointly_valid = 0;
};

TTCErrorReport ttc_error(const TTCMap& attacked, const TTCMap& original);

// 0 = hottest (shortest TTC), 1 = coldest; log-scaled between the map's
// valid extremes.
double ttc_ramp_coord(double ttc_frames, double log_lo, double log_hi);

// Hot-to-cold rendering; invalid pixels are neutral gray (0.5, 0.5, 0.5).
Image ttc_colormap(const TTCMap& map);

}  // namespace flowattack
