#pragma once

#include <array>
#include <vector>

#include "flowattack/tape.hpp"
#include "flowattack/types.hpp"

namespace flowattack {

// Differentiable multi-scale Horn-Schunck estimator with a fixed number of
// unrolled Jacobi iterations per pyramid level.
struct FlowModelParams {
  double smoothness_weight = 0.1;
  int pyramid_levels = 3;
  int jacobi_iters_per_level = 20;
  int warps_per_level = 1;
  double pyramid_scale = 0.5;

  bool operator==(const FlowModelParams&) const = default;
};

struct FlowNodes {
  ad::NodeId u, v;
};

// Records the full coarse-to-fine computation on the tape. i1_channels must
// already be registered (leaves when the gradient w.r.t. I1 is wanted); I2
// enters as constants.
FlowNodes estimate_flow_on_tape(ad::Tape& tape,
                                const std::array<ad::NodeId, 3>& i1_channels,
                                const Image& i2, const FlowModelParams& params);

// Convenience: registers i1's channels as differentiable leaves first.
struct RecordedFlow {
  std::array<ad::NodeId, 3> i1_leaves;
  FlowNodes flow;
};
RecordedFlow estimate_flow_recorded(ad::Tape& tape, const Image& i1,
                                    const Image& i2, const FlowModelParams& params);

// Plain evaluation; runs the recorded path on a scratch tape so both call
// styles produce identical numbers.
FlowField estimate_flow(const Image& i1, const Image& i2,
                        const FlowModelParams& params);

// Pyramid level dims for an input size; index 0 is full resolution.
// Throws when the coarsest level would fall below 4x4.
std::vector<std::pair<int, int>> pyramid_level_dims(int height, int width,
                                                    const FlowModelParams& params);

// Deterministic parameter variants emulating distinct models for black-box
// transfer runs. First entry equals seed.
std::vector<FlowModelParams> model_family(const FlowModelParams& seed, int count);

}  // namespace flowattack
