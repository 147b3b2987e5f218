#pragma once

#include <vector>

#include "flowattack/attack.hpp"
#include "flowattack/flow_model.hpp"
#include "flowattack/scene_gen.hpp"
#include "flowattack/types.hpp"

namespace flowattack {

enum class DefenseMethod { Warping, Gaussian, Median };

const char* defense_method_name(DefenseMethod m);

enum class SmoothingKernel { Gaussian3x3, Median3x3 };

// Backward warp of I2 by the flow, border-clamped bilinear sampling.
Image warp_image(const Image& i2, const FlowField& flow);

// Mean |W_V(I2) - I1| over all pixel-channels.
double warping_error(const Image& i1, const Image& i2, const FlowField& flow);

// Interior-cropped variant for synthetic-oracle checks; margin should cover
// the maximum displacement.
double warping_error_interior(const Image& i1, const Image& i2, const FlowField& flow,
                              int margin);

Image smooth_image(const Image& img, SmoothingKernel kernel);

// Flow discrepancy induced by smoothing the (possibly attacked) first image:
// mean per-pixel |delta u| + |delta v| between the two estimates.
double smoothing_defense(const Image& i1_attacked, const Image& i2,
                         const FlowModelParams& model, SmoothingKernel kernel);

// Score for one already-attacked input under a detection method.
double detection_score(DefenseMethod method, const Image& i1_attacked, const Image& i2,
                       const FlowField& attacked_flow, const FlowModelParams& model);

enum class DownstreamMetric { TtcError, TargetEpe };

const char* downstream_metric_name(DownstreamMetric m);

struct CurvePoint {
  double magnitude = 0.0;
  double detection = 0.0;
  double impact = 0.0;
  int scenes_used = 0;  // scenes contributing to the impact average
};

// For each magnitude: attack every scene at that budget, then average the
// detection score and the downstream impact. Scenes without jointly-valid
// TTC pixels are skipped in the TTC-error average.
std::vector<CurvePoint> detection_impact_curve(const std::vector<SceneSpec>& scenes,
                                               const AttackConfig& base_config,
                                               const FlowModelParams& model,
                                               const std::vector<double>& magnitudes,
                                               DefenseMethod method,
                                               DownstreamMetric downstream,
                                               int ttc_window = 5);

}  // namespace flowattack
