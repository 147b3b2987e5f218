#include "flowattack/flow_model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace flowattack {

namespace {

using ad::NodeId;
using ad::Tape;

const std::vector<double> kBinomial5 = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
const std::vector<double> kCentralDiff = {-0.5, 0.0, 0.5};
// 4-neighbour average used by the Jacobi sweep
const std::vector<double> kNeighborAvg = {0.0,  0.25, 0.0,  0.25, 0.0,
                                          0.25, 0.0,  0.25, 0.0};

void validate_params(const FlowModelParams& p) {
  if (p.smoothness_weight <= 0.0) {
    throw std::invalid_argument("estimate_flow: smoothness_weight must be positive");
  }
  if (p.pyramid_levels < 1 || p.jacobi_iters_per_level < 1 || p.warps_per_level < 1) {
    throw std::invalid_argument("estimate_flow: iteration counts must be >= 1");
  }
  if (!(p.pyramid_scale > 0.0 && p.pyramid_scale < 1.0)) {
    throw std::invalid_argument("estimate_flow: pyramid_scale must lie in (0,1)");
  }
}

NodeId smooth_and_resize(Tape& t, NodeId src, int out_h, int out_w) {
  NodeId s = t.conv(src, 1, 5, kBinomial5);
  s = t.conv(s, 5, 1, kBinomial5);
  return t.downsample2(s, out_h, out_w);
}

}  // namespace

std::vector<std::pair<int, int>> pyramid_level_dims(int height, int width,
                                                    const FlowModelParams& params) {
  validate_params(params);
  std::vector<std::pair<int, int>> dims;
  dims.emplace_back(height, width);
  for (int l = 1; l < params.pyramid_levels; ++l) {
    const int h = static_cast<int>(std::lround(dims.back().first * params.pyramid_scale));
    const int w = static_cast<int>(std::lround(dims.back().second * params.pyramid_scale));
    if (h < 4 || w < 4) {
      throw std::invalid_argument(
          "estimate_flow: coarsest pyramid level would be " + std::to_string(h) + "x" +
          std::to_string(w) + " (< 4x4) for a " + std::to_string(height) + "x" +
          std::to_string(width) + " image with " + std::to_string(params.pyramid_levels) +
          " levels");
    }
    dims.emplace_back(h, w);
  }
  return dims;
}

FlowNodes estimate_flow_on_tape(Tape& t, const std::array<NodeId, 3>& i1_channels,
                                const Image& i2, const FlowModelParams& params) {
  const Field2D& c0 = t.value(i1_channels[0]);
  const int h = c0.height, w = c0.width;
  for (const NodeId c : i1_channels) {
    if (!t.value(c).same_shape(c0)) {
      throw std::invalid_argument("estimate_flow: I1 channel shapes disagree");
    }
  }
  if (i2.height() != h || i2.width() != w) {
    throw std::invalid_argument("estimate_flow: image shapes disagree (" +
                                std::to_string(h) + "x" + std::to_string(w) + " vs " +
                                std::to_string(i2.height()) + "x" +
                                std::to_string(i2.width()) + ")");
  }
  if (h < 8 || w < 8) {
    throw std::invalid_argument("estimate_flow: images must be at least 8x8");
  }
  for (const NodeId c : i1_channels) {
    if (!t.value(c).all_finite()) {
      throw std::invalid_argument("estimate_flow: non-finite values in I1");
    }
  }
  for (const Field2D& c : i2.channels) {
    if (!c.all_finite()) {
      throw std::invalid_argument("estimate_flow: non-finite values in I2");
    }
  }

  const auto dims = pyramid_level_dims(h, w, params);
  const int levels = static_cast<int>(dims.size());

  // grayscale as channel mean
  NodeId g1 = t.scalar_mul(
      t.add(t.add(i1_channels[0], i1_channels[1]), i1_channels[2]), 1.0 / 3.0);
  NodeId g2 = t.scalar_mul(
      t.add(t.add(t.constant(i2.channels[0]), t.constant(i2.channels[1])),
            t.constant(i2.channels[2])),
      1.0 / 3.0);

  std::vector<NodeId> pyr1(levels), pyr2(levels);
  pyr1[0] = g1;
  pyr2[0] = g2;
  for (int l = 1; l < levels; ++l) {
    pyr1[l] = smooth_and_resize(t, pyr1[l - 1], dims[l].first, dims[l].second);
    pyr2[l] = smooth_and_resize(t, pyr2[l - 1], dims[l].first, dims[l].second);
  }

  NodeId u = t.constant(Field2D::zeros(dims[levels - 1].first, dims[levels - 1].second));
  NodeId v = t.constant(Field2D::zeros(dims[levels - 1].first, dims[levels - 1].second));

  for (int l = levels - 1; l >= 0; --l) {
    const int lh = dims[l].first, lw = dims[l].second;
    if (l != levels - 1) {
      const int ch = dims[l + 1].first, cw = dims[l + 1].second;
      u = t.scalar_mul(t.upsample2(u, lh, lw), static_cast<double>(lw) / cw);
      v = t.scalar_mul(t.upsample2(v, lh, lw), static_cast<double>(lh) / ch);
    }

    for (int wi = 0; wi < params.warps_per_level; ++wi) {
      const NodeId uw = u, vw = v;  // linearization point
      NodeId g2w = t.warp(pyr2[l], uw, vw);
      NodeId avg = t.scalar_mul(t.add(pyr1[l], g2w), 0.5);
      NodeId ix = t.conv(avg, 1, 3, kCentralDiff);
      NodeId iy = t.conv(avg, 3, 1, kCentralDiff);
      NodeId it = t.sub(g2w, pyr1[l]);
      // residual rewritten around zero: it_adj = it - ix*uw - iy*vw, so the
      // Jacobi sweep can iterate on the full flow
      NodeId it_adj = t.sub(t.sub(it, t.mul(ix, uw)), t.mul(iy, vw));
      NodeId denom = t.add(t.add(t.square(ix), t.square(iy)),
                           t.constant(Field2D::full(lh, lw, 4.0 * params.smoothness_weight)));

      for (int k = 0; k < params.jacobi_iters_per_level; ++k) {
        NodeId ubar = t.conv(u, 3, 3, kNeighborAvg);
        NodeId vbar = t.conv(v, 3, 3, kNeighborAvg);
        NodeId resid = t.add(t.add(t.mul(ix, ubar), t.mul(iy, vbar)), it_adj);
        NodeId step = t.div(resid, denom);
        u = t.sub(ubar, t.mul(ix, step));
        v = t.sub(vbar, t.mul(iy, step));
      }
    }
  }

  return FlowNodes{u, v};
}

RecordedFlow estimate_flow_recorded(Tape& t, const Image& i1, const Image& i2,
                                    const FlowModelParams& params) {
  RecordedFlow r;
  for (int c = 0; c < 3; ++c) r.i1_leaves[c] = t.leaf(i1.channels[c]);
  r.flow = estimate_flow_on_tape(t, r.i1_leaves, i2, params);
  return r;
}

FlowField estimate_flow(const Image& i1, const Image& i2,
                        const FlowModelParams& params) {
  ad::Tape scratch;
  const RecordedFlow r = estimate_flow_recorded(scratch, i1, i2, params);
  FlowField out;
  out.u = scratch.value(r.flow.u);
  out.v = scratch.value(r.flow.v);
  return out;
}

std::vector<FlowModelParams> model_family(const FlowModelParams& seed, int count) {
  if (count < 1) {
    throw std::invalid_argument("model_family: count must be >= 1");
  }
  validate_params(seed);

  const std::array<double, 3> lambda_mul = {1.0, 2.0, 0.5};
  const std::array<double, 3> jacobi_mul = {1.0, 2.0, 0.5};
  const std::array<int, 3> level_delta = {0, 1, -1};

  std::vector<FlowModelParams> family;
  // seed first, then single-field variants, then compound ones
  for (int changed = 0; changed <= 3 && static_cast<int>(family.size()) < count; ++changed) {
    for (int li = 0; li < 3; ++li) {
      for (int ji = 0; ji < 3; ++ji) {
        for (int pi = 0; pi < 3; ++pi) {
          const int n_changed = (li != 0) + (ji != 0) + (pi != 0);
          if (n_changed != changed) continue;
          FlowModelParams p = seed;
          p.smoothness_weight = seed.smoothness_weight * lambda_mul[li];
          p.jacobi_iters_per_level = std::max(
              1, static_cast<int>(std::lround(seed.jacobi_iters_per_level * jacobi_mul[ji])));
          p.pyramid_levels = std::max(1, seed.pyramid_levels + level_delta[pi]);
          bool duplicate = false;
          for (const FlowModelParams& q : family) duplicate = duplicate || q == p;
          if (!duplicate) family.push_back(p);
          if (static_cast<int>(family.size()) == count) return family;
        }
      }
    }
  }
  if (static_cast<int>(family.size()) < count) {
    throw std::invalid_argument("model_family: cannot derive " + std::to_string(count) +
                                " distinct variants");
  }
  return family;
}

}  // namespace flowattack
