#include "flowattack/ttc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowattack {

TTCMap ttc_from_flow(const FlowField& flow, int window) {
  const int h = flow.height(), w = flow.width();
  if (window < 3 || window % 2 == 0) {
    throw std::invalid_argument("ttc_from_flow: window must be odd and >= 3");
  }
  if (window > h || window > w) {
    throw std::invalid_argument("ttc_from_flow: window larger than image");
  }
  const int r = window / 2;
  TTCMap map(h, w);

  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      // rectangular window keeps the x and y regressors orthogonal, so the
      // affine fit reduces to two 1D slopes
      const double xbar = 0.5 * (x0 + x1);
      const double ybar = 0.5 * (y0 + y1);
      double sxx = 0.0, sxu = 0.0, syy = 0.0, syv = 0.0;
      for (int yy = y0; yy <= y1; ++yy) {
        for (int xx = x0; xx <= x1; ++xx) {
          const double dx = xx - xbar;
          const double dy = yy - ybar;
          sxx += dx * dx;
          syy += dy * dy;
          sxu += dx * flow.u.at(yy, xx);
          syv += dy * flow.v.at(yy, xx);
        }
      }
      const double du_dx = sxx > 0.0 ? sxu / sxx : 0.0;
      const double dv_dy = syy > 0.0 ? syv / syy : 0.0;
      const double rate = 0.5 * (du_dx + dv_dy);
      if (rate > kMinScaleRate) {
        map.ttc.at(y, x) = 1.0 / rate;
        map.valid[static_cast<size_t>(y) * w + x] = 1;
      }
    }
  }
  return map;
}

TTCErrorReport ttc_error(const TTCMap& attacked, const TTCMap& original) {
  if (attacked.height != original.height || attacked.width != original.width) {
    throw std::invalid_argument("ttc_error: shape mismatch");
  }
  TTCErrorReport report;
  double acc = 0.0;
  int churn = 0;
  for (size_t i = 0; i < attacked.valid.size(); ++i) {
    if (attacked.valid[i] != original.valid[i]) ++churn;
    if (attacked.valid[i] && original.valid[i]) {
      acc += std::fabs(attacked.ttc.values[i] - original.ttc.values[i]) /
             original.ttc.values[i];
      ++report.jointly_valid;
    }
  }
  if (report.jointly_valid == 0) {
    throw std::invalid_argument("ttc_error: no jointly-valid pixels");
  }
  report.mean_relative_error = acc / report.jointly_valid;
  report.validity_churn = static_cast<double>(churn) / attacked.valid.size();
  return report;
}

double ttc_ramp_coord(double ttc_frames, double log_lo, double log_hi) {
  if (!(log_hi > log_lo)) return 0.5;
  const double t = (std::log(ttc_frames) - log_lo) / (log_hi - log_lo);
  return std::min(std::max(t, 0.0), 1.0);
}

Image ttc_colormap(const TTCMap& map) {
  double log_lo = 0.0, log_hi = 0.0;
  bool any = false;
  for (size_t i = 0; i < map.valid.size(); ++i) {
    if (!map.valid[i]) continue;
    const double lt = std::log(map.ttc.values[i]);
    if (!any) {
      log_lo = log_hi = lt;
      any = true;
    } else {
      log_lo = std::min(log_lo, lt);
      log_hi = std::max(log_hi, lt);
    }
  }

  // red -> yellow -> near-white as TTC grows
  auto ramp = [](double c, int channel) {
    if (channel == 0) return 0.95;
    if (channel == 1) return c < 0.5 ? 0.10 + 1.50 * c : 0.85 + 0.10 * (c - 0.5);
    return c < 0.5 ? 0.05 + 0.10 * c : 0.10 + 1.60 * (c - 0.5);
  };

  Image out(map.height, map.width);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const size_t i = static_cast<size_t>(y) * map.width + x;
      if (!map.valid[i]) {
        for (int c = 0; c < 3; ++c) out.channels[c].at(y, x) = 0.5;
        continue;
      }
      const double t = ttc_ramp_coord(map.ttc.values[i], log_lo, log_hi);
      for (int c = 0; c < 3; ++c) {
        out.channels[c].at(y, x) = std::min(std::max(ramp(t, c), 0.0), 1.0);
      }
    }
  }
  return out;
}

}  // namespace flowattack
