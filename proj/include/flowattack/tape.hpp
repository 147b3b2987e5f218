#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "flowattack/field.hpp"

namespace flowattack::ad {

// Primitive op kinds recorded on a tape. Every op evaluates eagerly on
// record() and caches the forward value; backward() replays the tape in
// reverse to accumulate adjoints.
enum class Op {
  Add,
  Sub,
  Mul,         // pointwise
  ScalarMul,   // field * compile-time constant
  Abs,
  Square,
  Div,         // pointwise; denominator must be nonzero
  SumReduce,
  MaskedSumReduce,
  Conv,        // fixed odd-sized kernel, replicate padding
  Warp,        // backward bilinear warp, border-clamped coordinates
  Downsample2, // bilinear resize to smaller explicit dims
  Upsample2,   // bilinear resize to larger explicit dims
  ClampStopGrad,
  Leaf,
  Constant,
};

const char* op_name(Op op);

struct NodeId {
  int32_t index = -1;
  bool valid() const { return index >= 0; }
};

struct ScalarAttr {
  double factor = 1.0;
};

struct ConvAttr {
  int kh = 1, kw = 1;      // odd kernel dims
  std::vector<double> taps; // row-major, size kh*kw
};

struct ResizeAttr {
  int out_height = 0, out_width = 0;
};

struct ClampAttr {
  double lo = 0.0, hi = 1.0;
};

struct MaskAttr {
  int height = 0, width = 0;
  std::vector<uint8_t> keep; // nonzero entries participate in the sum
};

using OpAttr = std::variant<std::monostate, ScalarAttr, ConvAttr, ResizeAttr,
                            ClampAttr, MaskAttr>;

// Single-writer linear tape. One attack iteration builds and sweeps one
// tape; distinct tapes share no state.
class Tape {
 public:
  NodeId leaf(Field2D value);      // differentiable input
  NodeId constant(Field2D value);  // non-differentiable input

  NodeId record(Op op, std::span<const NodeId> inputs, OpAttr attr = {});

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scalar_mul(NodeId a, double factor);
  NodeId abs(NodeId a);
  NodeId square(NodeId a);
  NodeId div(NodeId num, NodeId den);
  NodeId sum(NodeId a);
  NodeId masked_sum(NodeId a, MaskAttr mask);
  NodeId conv(NodeId a, int kh, int kw, std::vector<double> taps);
  NodeId warp(NodeId img, NodeId u, NodeId v);
  NodeId downsample2(NodeId a, int out_h, int out_w);
  NodeId upsample2(NodeId a, int out_h, int out_w);
  NodeId clamp_stopgrad(NodeId a, double lo, double hi);

  const Field2D& value(NodeId id) const;
  bool requires_grad(NodeId id) const;
  int node_count() const { return static_cast<int>(values_.size()); }

  // Reverse sweep from a scalar loss node; returns d(loss)/d(wrt[i]) in
  // order. Pure with respect to the tape: replaying gives bit-identical
  // gradients.
  std::vector<Field2D> backward(NodeId loss, std::span<const NodeId> wrt) const;

 private:
  struct Entry {
    Op op;
    std::array<NodeId, 3> in{};
    int n_in = 0;
    NodeId out;
    OpAttr attr;
  };

  NodeId push_node(Field2D value, bool needs_grad);
  void check_node(NodeId id, const char* who) const;

  std::vector<Entry> entries_;
  std::vector<Field2D> values_;
  std::vector<uint8_t> needs_grad_;
};

// Plain-field kernels shared between the tape ops and the non-recorded
// code paths (defense warping, scene rendering checks).
Field2D conv_replicate(const Field2D& in, int kh, int kw,
                       const std::vector<double>& taps);
Field2D resize_bilinear(const Field2D& in, int out_h, int out_w);
Field2D warp_bilinear(const Field2D& img, const Field2D& u, const Field2D& v);

}  // namespace flowattack::ad
