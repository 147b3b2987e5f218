#include "flowattack/defense.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "flowattack/metrics.hpp"
#include "flowattack/tape.hpp"
#include "flowattack/ttc.hpp"

namespace flowattack {

const char* defense_method_name(DefenseMethod m) {
  switch (m) {
    case DefenseMethod::Warping: return "warping";
    case DefenseMethod::Gaussian: return "gaussian";
    case DefenseMethod::Median: return "median";
  }
  return "?";
}

const char* downstream_metric_name(DownstreamMetric m) {
  switch (m) {
    case DownstreamMetric::TtcError: return "ttc_error";
    case DownstreamMetric::TargetEpe: return "target_epe";
  }
  return "?";
}

Image warp_image(const Image& i2, const FlowField& flow) {
  if (i2.height() != flow.height() || i2.width() != flow.width()) {
    throw std::invalid_argument("warp_image: shape mismatch");
  }
  Image out(i2.height(), i2.width());
  for (int c = 0; c < 3; ++c) {
    out.channels[c] = ad::warp_bilinear(i2.channels[c], flow.u, flow.v);
  }
  return out;
}

namespace {

double mean_abs_diff(const Image& a, const Image& b, int margin) {
  const int h = a.height(), w = a.width();
  if (2 * margin >= h || 2 * margin >= w) {
    throw std::invalid_argument("warping_error: margin eats the whole image");
  }
  double acc = 0.0;
  long n = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = margin; y < h - margin; ++y) {
      for (int x = margin; x < w - margin; ++x) {
        acc += std::fabs(a.channels[c].at(y, x) - b.channels[c].at(y, x));
        ++n;
      }
    }
  }
  return acc / static_cast<double>(n);
}

}  // namespace

double warping_error(const Image& i1, const Image& i2, const FlowField& flow) {
  return mean_abs_diff(warp_image(i2, flow), i1, 0);
}

double warping_error_interior(const Image& i1, const Image& i2, const FlowField& flow,
                              int margin) {
  return mean_abs_diff(warp_image(i2, flow), i1, margin);
}

Image smooth_image(const Image& img, SmoothingKernel kernel) {
  Image out(img.height(), img.width());
  if (kernel == SmoothingKernel::Gaussian3x3) {
    const std::vector<double> taps = {1.0 / 16, 2.0 / 16, 1.0 / 16, 2.0 / 16, 4.0 / 16,
                                      2.0 / 16, 1.0 / 16, 2.0 / 16, 1.0 / 16};
    for (int c = 0; c < 3; ++c) {
      out.channels[c] = ad::conv_replicate(img.channels[c], 3, 3, taps);
    }
    return out;
  }
  // 3x3 median, replicate padding
  const int h = img.height(), w = img.width();
  for (int c = 0; c < 3; ++c) {
    const Field2D& in = img.channels[c];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        std::array<double, 9> window;
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          const int sy = std::min(std::max(y + dy, 0), h - 1);
          for (int dx = -1; dx <= 1; ++dx) {
            const int sx = std::min(std::max(x + dx, 0), w - 1);
            window[k++] = in.at(sy, sx);
          }
        }
        std::nth_element(window.begin(), window.begin() + 4, window.end());
        out.channels[c].at(y, x) = window[4];
      }
    }
  }
  return out;
}

double smoothing_defense(const Image& i1_attacked, const Image& i2,
                         const FlowModelParams& model, SmoothingKernel kernel) {
  const FlowField direct = estimate_flow(i1_attacked, i2, model);
  const FlowField smoothed = estimate_flow(smooth_image(i1_attacked, kernel), i2, model);
  double acc = 0.0;
  for (size_t i = 0; i < direct.u.size(); ++i) {
    acc += std::fabs(direct.u.values[i] - smoothed.u.values[i]) +
           std::fabs(direct.v.values[i] - smoothed.v.values[i]);
  }
  return acc / static_cast<double>(direct.u.size());
}

double detection_score(DefenseMethod method, const Image& i1_attacked, const Image& i2,
                       const FlowField& attacked_flow, const FlowModelParams& model) {
  switch (method) {
    case DefenseMethod::Warping:
      return warping_error(i1_attacked, i2, attacked_flow);
    case DefenseMethod::Gaussian:
      return smoothing_defense(i1_attacked, i2, model, SmoothingKernel::Gaussian3x3);
    case DefenseMethod::Median:
      return smoothing_defense(i1_attacked, i2, model, SmoothingKernel::Median3x3);
  }
  throw std::invalid_argument("detection_score: unknown method");
}

std::vector<CurvePoint> detection_impact_curve(const std::vector<SceneSpec>& scenes,
                                               const AttackConfig& base_config,
                                               const FlowModelParams& model,
                                               const std::vector<double>& magnitudes,
                                               DefenseMethod method,
                                               DownstreamMetric downstream,
                                               int ttc_window) {
  if (magnitudes.empty()) {
    throw std::invalid_argument("detection_impact_curve: empty magnitude list");
  }
  for (size_t i = 0; i < magnitudes.size(); ++i) {
    if (magnitudes[i] <= 0.0 || (i > 0 && magnitudes[i] <= magnitudes[i - 1])) {
      throw std::invalid_argument(
          "detection_impact_curve: magnitudes must be positive ascending");
    }
  }
  if (scenes.empty()) {
    throw std::invalid_argument("detection_impact_curve: no scenes");
  }

  std::vector<CurvePoint> curve;
  curve.reserve(magnitudes.size());
  for (double magnitude : magnitudes) {
    AttackConfig config = base_config;
    config.budget = magnitude;
    CurvePoint point;
    point.magnitude = magnitude;
    double det_acc = 0.0, impact_acc = 0.0;
    int impact_n = 0;
    for (const SceneSpec& spec : scenes) {
      const SceneInstance scene = render(spec);
      const AttackResult result = run_attack(scene.i1, scene.i2, scene.labels, config, model);
      det_acc += detection_score(method, result.perturbed_image, scene.i2,
                                 result.attacked_flow, model);
      if (downstream == DownstreamMetric::TargetEpe) {
        const Mask target = Mask::of_category(scene.labels, config.target_category);
        impact_acc += epe_masked(result.attacked_flow, result.original_flow, target);
        ++impact_n;
      } else {
        const TTCMap t_orig = ttc_from_flow(result.original_flow, ttc_window);
        const TTCMap t_atk = ttc_from_flow(result.attacked_flow, ttc_window);
        try {
          impact_acc += ttc_error(t_atk, t_orig).mean_relative_error;
          ++impact_n;
        } catch (const std::invalid_argument&) {
          // no jointly-valid pixels on this scene; skip it
        }
      }
    }
    point.detection = det_acc / static_cast<double>(scenes.size());
    point.impact = impact_n > 0 ? impact_acc / impact_n : 0.0;
    point.scenes_used = impact_n;
    curve.push_back(point);
  }
  return curve;
}

}  // namespace flowattack
