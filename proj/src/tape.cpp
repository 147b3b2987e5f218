#include "flowattack/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flowattack::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "pointwise_mul";
    case Op::ScalarMul: return "scalar_mul";
    case Op::Abs: return "abs";
    case Op::Square: return "square";
    case Op::Div: return "pointwise_div";
    case Op::SumReduce: return "sum_reduce";
    case Op::MaskedSumReduce: return "masked_sum_reduce";
    case Op::Conv: return "conv_fixed_kernel";
    case Op::Warp: return "bilinear_warp";
    case Op::Downsample2: return "downsample2";
    case Op::Upsample2: return "upsample2";
    case Op::ClampStopGrad: return "clamp_stopgrad";
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
  }
  return "?";
}

namespace {

[[noreturn]] void op_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

void require_same_shape(Op op, const Field2D& a, const Field2D& b) {
  if (!a.same_shape(b)) {
    op_error(op, "shape mismatch (" + a.shape_str() + " vs " + b.shape_str() + ")");
  }
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace

Field2D conv_replicate(const Field2D& in, int kh, int kw,
                       const std::vector<double>& taps) {
  Field2D out(in.height, in.width);
  const int ry = kh / 2, rx = kw / 2;
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double acc = 0.0;
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = clampi(y + ky - ry, 0, in.height - 1);
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = clampi(x + kx - rx, 0, in.width - 1);
          acc += taps[static_cast<size_t>(ky) * kw + kx] * in.at(sy, sx);
        }
      }
      out.at(y, x) = acc;
    }
  }
  return out;
}

Field2D resize_bilinear(const Field2D& in, int out_h, int out_w) {
  Field2D out(out_h, out_w);
  const double sy = static_cast<double>(in.height) / out_h;
  const double sx = static_cast<double>(in.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      out.at(y, x) = (1.0 - wy) * ((1.0 - wx) * in.at(y0, x0) + wx * in.at(y0, x1)) +
                     wy * ((1.0 - wx) * in.at(y1, x0) + wx * in.at(y1, x1));
    }
  }
  return out;
}

Field2D warp_bilinear(const Field2D& img, const Field2D& u, const Field2D& v) {
  Field2D out(img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double sx = x + u.at(y, x);
      double sy = y + v.at(y, x);
      sx = std::min(std::max(sx, 0.0), static_cast<double>(img.width - 1));
      sy = std::min(std::max(sy, 0.0), static_cast<double>(img.height - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wx = sx - x0;
      const double wy = sy - y0;
      out.at(y, x) = (1.0 - wy) * ((1.0 - wx) * img.at(y0, x0) + wx * img.at(y0, x1)) +
                     wy * ((1.0 - wx) * img.at(y1, x0) + wx * img.at(y1, x1));
    }
  }
  return out;
}

NodeId Tape::push_node(Field2D value, bool needs_grad) {
  values_.push_back(std::move(value));
  needs_grad_.push_back(needs_grad ? 1 : 0);
  return NodeId{static_cast<int32_t>(values_.size() - 1)};
}

void Tape::check_node(NodeId id, const char* who) const {
  if (!id.valid() || id.index >= static_cast<int32_t>(values_.size())) {
    throw std::invalid_argument(std::string(who) + ": node not on this tape");
  }
}

NodeId Tape::leaf(Field2D value) {
  if (!value.all_finite()) throw std::invalid_argument("leaf: non-finite values");
  return push_node(std::move(value), true);
}

NodeId Tape::constant(Field2D value) {
  if (!value.all_finite()) throw std::invalid_argument("constant: non-finite values");
  return push_node(std::move(value), false);
}

const Field2D& Tape::value(NodeId id) const {
  check_node(id, "value");
  return values_[id.index];
}

bool Tape::requires_grad(NodeId id) const {
  check_node(id, "requires_grad");
  return needs_grad_[id.index] != 0;
}

NodeId Tape::record(Op op, std::span<const NodeId> inputs, OpAttr attr) {
  for (NodeId in : inputs) check_node(in, op_name(op));

  auto input = [&](size_t i) -> const Field2D& { return values_[inputs[i].index]; };
  auto expect_inputs = [&](size_t n) {
    if (inputs.size() != n) {
      op_error(op, "expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(inputs.size()));
    }
  };

  Field2D out;
  switch (op) {
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      expect_inputs(2);
      const Field2D& a = input(0);
      const Field2D& b = input(1);
      require_same_shape(op, a, b);
      out = Field2D(a.height, a.width);
      for (size_t i = 0; i < a.size(); ++i) {
        switch (op) {
          case Op::Add: out.values[i] = a.values[i] + b.values[i]; break;
          case Op::Sub: out.values[i] = a.values[i] - b.values[i]; break;
          case Op::Mul: out.values[i] = a.values[i] * b.values[i]; break;
          default: out.values[i] = a.values[i] / b.values[i]; break;
        }
      }
      break;
    }
    case Op::ScalarMul: {
      expect_inputs(1);
      const auto* s = std::get_if<ScalarAttr>(&attr);
      if (!s) op_error(op, "missing scalar attribute");
      const Field2D& a = input(0);
      out = Field2D(a.height, a.width);
      for (size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] * s->factor;
      break;
    }
    case Op::Abs: {
      expect_inputs(1);
      const Field2D& a = input(0);
      out = Field2D(a.height, a.width);
      for (size_t i = 0; i < a.size(); ++i) out.values[i] = std::fabs(a.values[i]);
      break;
    }
    case Op::Square: {
      expect_inputs(1);
      const Field2D& a = input(0);
      out = Field2D(a.height, a.width);
      for (size_t i = 0; i < a.size(); ++i) out.values[i] = a.values[i] * a.values[i];
      break;
    }
    case Op::SumReduce: {
      expect_inputs(1);
      const Field2D& a = input(0);
      double acc = 0.0;
      for (double x : a.values) acc += x;
      out = Field2D::scalar(acc);
      break;
    }
    case Op::MaskedSumReduce: {
      expect_inputs(1);
      const auto* m = std::get_if<MaskAttr>(&attr);
      if (!m) op_error(op, "missing mask attribute");
      const Field2D& a = input(0);
      if (m->height != a.height || m->width != a.width) {
        op_error(op, "mask shape mismatch (" + a.shape_str() + " vs " +
                         std::to_string(m->height) + "x" + std::to_string(m->width) + ")");
      }
      double acc = 0.0;
      for (size_t i = 0; i < a.size(); ++i) {
        if (m->keep[i]) acc += a.values[i];
      }
      out = Field2D::scalar(acc);
      break;
    }
    case Op::Conv: {
      expect_inputs(1);
      const auto* c = std::get_if<ConvAttr>(&attr);
      if (!c) op_error(op, "missing kernel attribute");
      if (c->kh < 1 || c->kw < 1 || c->kh % 2 == 0 || c->kw % 2 == 0) {
        op_error(op, "kernel dims must be odd and >= 1");
      }
      if (c->taps.size() != static_cast<size_t>(c->kh) * c->kw) {
        op_error(op, "kernel taps size mismatch");
      }
      out = conv_replicate(input(0), c->kh, c->kw, c->taps);
      break;
    }
    case Op::Warp: {
      expect_inputs(3);
      require_same_shape(op, input(0), input(1));
      require_same_shape(op, input(0), input(2));
      out = warp_bilinear(input(0), input(1), input(2));
      break;
    }
    case Op::Downsample2:
    case Op::Upsample2: {
      expect_inputs(1);
      const auto* r = std::get_if<ResizeAttr>(&attr);
      if (!r) op_error(op, "missing resize attribute");
      if (r->out_height < 1 || r->out_width < 1) op_error(op, "bad output dims");
      const Field2D& a = input(0);
      if (op == Op::Downsample2 && (r->out_height > a.height || r->out_width > a.width)) {
        op_error(op, "output larger than input (" + a.shape_str() + " -> " +
                         std::to_string(r->out_height) + "x" + std::to_string(r->out_width) + ")");
      }
      if (op == Op::Upsample2 && (r->out_height < a.height || r->out_width < a.width)) {
        op_error(op, "output smaller than input");
      }
      out = resize_bilinear(a, r->out_height, r->out_width);
      break;
    }
    case Op::ClampStopGrad: {
      expect_inputs(1);
      const auto* c = std::get_if<ClampAttr>(&attr);
      if (!c) op_error(op, "missing clamp attribute");
      if (c->lo > c->hi) op_error(op, "lo > hi");
      const Field2D& a = input(0);
      out = Field2D(a.height, a.width);
      for (size_t i = 0; i < a.size(); ++i) {
        out.values[i] = std::min(std::max(a.values[i], c->lo), c->hi);
      }
      break;
    }
    case Op::Leaf:
    case Op::Constant:
      op_error(op, "leaves are created via leaf()/constant(), not record()");
  }

  bool needs_grad = false;
  if (op != Op::ClampStopGrad) {
    for (NodeId in : inputs) needs_grad = needs_grad || needs_grad_[in.index];
  }

  Entry e;
  e.op = op;
  e.n_in = static_cast<int>(inputs.size());
  for (int i = 0; i < e.n_in; ++i) e.in[i] = inputs[i];
  e.attr = std::move(attr);
  e.out = push_node(std::move(out), needs_grad);
  entries_.push_back(std::move(e));
  return entries_.back().out;
}

NodeId Tape::add(NodeId a, NodeId b) { return record(Op::Add, std::array{a, b}); }
NodeId Tape::sub(NodeId a, NodeId b) { return record(Op::Sub, std::array{a, b}); }
NodeId Tape::mul(NodeId a, NodeId b) { return record(Op::Mul, std::array{a, b}); }
NodeId Tape::div(NodeId num, NodeId den) { return record(Op::Div, std::array{num, den}); }

NodeId Tape::scalar_mul(NodeId a, double factor) {
  return record(Op::ScalarMul, std::array{a}, ScalarAttr{factor});
}
NodeId Tape::abs(NodeId a) { return record(Op::Abs, std::array{a}); }
NodeId Tape::square(NodeId a) { return record(Op::Square, std::array{a}); }
NodeId Tape::sum(NodeId a) { return record(Op::SumReduce, std::array{a}); }

NodeId Tape::masked_sum(NodeId a, MaskAttr mask) {
  return record(Op::MaskedSumReduce, std::array{a}, std::move(mask));
}

NodeId Tape::conv(NodeId a, int kh, int kw, std::vector<double> taps) {
  return record(Op::Conv, std::array{a}, ConvAttr{kh, kw, std::move(taps)});
}

NodeId Tape::warp(NodeId img, NodeId u, NodeId v) {
  return record(Op::Warp, std::array{img, u, v});
}

NodeId Tape::downsample2(NodeId a, int out_h, int out_w) {
  return record(Op::Downsample2, std::array{a}, ResizeAttr{out_h, out_w});
}

NodeId Tape::upsample2(NodeId a, int out_h, int out_w) {
  return record(Op::Upsample2, std::array{a}, ResizeAttr{out_h, out_w});
}

NodeId Tape::clamp_stopgrad(NodeId a, double lo, double hi) {
  return record(Op::ClampStopGrad, std::array{a}, ClampAttr{lo, hi});
}

std::vector<Field2D> Tape::backward(NodeId loss, std::span<const NodeId> wrt) const {
  check_node(loss, "backward");
  if (!values_[loss.index].is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar-shaped, got " +
                                values_[loss.index].shape_str());
  }
  for (NodeId w : wrt) check_node(w, "backward");

  const size_t n = values_.size();
  std::vector<Field2D> adj(n);
  std::vector<uint8_t> seeded(n, 0);
  auto grad_of = [&](NodeId id) -> Field2D& {
    if (!seeded[id.index]) {
      const Field2D& v = values_[id.index];
      adj[id.index] = Field2D::zeros(v.height, v.width);
      seeded[id.index] = 1;
    }
    return adj[id.index];
  };

  grad_of(loss).values[0] = 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    const Entry& e = *it;
    if (e.out.index > loss.index) continue;     // past the loss; cannot contribute
    if (!needs_grad_[e.out.index]) continue;
    if (!seeded[e.out.index]) continue;
    const Field2D& g = adj[e.out.index];
    auto in_val = [&](int i) -> const Field2D& { return values_[e.in[i].index]; };
    auto wants = [&](int i) { return needs_grad_[e.in[i].index] != 0; };

    switch (e.op) {
      case Op::Add: {
        for (int k = 0; k < 2; ++k) {
          if (!wants(k)) continue;
          Field2D& gi = grad_of(e.in[k]);
          for (size_t i = 0; i < g.size(); ++i) gi.values[i] += g.values[i];
        }
        break;
      }
      case Op::Sub: {
        if (wants(0)) {
          Field2D& ga = grad_of(e.in[0]);
          for (size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i];
        }
        if (wants(1)) {
          Field2D& gb = grad_of(e.in[1]);
          for (size_t i = 0; i < g.size(); ++i) gb.values[i] -= g.values[i];
        }
        break;
      }
      case Op::Mul: {
        const Field2D& a = in_val(0);
        const Field2D& b = in_val(1);
        if (wants(0)) {
          Field2D& ga = grad_of(e.in[0]);
          for (size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * b.values[i];
        }
        if (wants(1)) {
          Field2D& gb = grad_of(e.in[1]);
          for (size_t i = 0; i < g.size(); ++i) gb.values[i] += g.values[i] * a.values[i];
        }
        break;
      }
      case Op::Div: {
        const Field2D& a = in_val(0);
        const Field2D& b = in_val(1);
        if (wants(0)) {
          Field2D& ga = grad_of(e.in[0]);
          for (size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] / b.values[i];
        }
        if (wants(1)) {
          Field2D& gb = grad_of(e.in[1]);
          for (size_t i = 0; i < g.size(); ++i) {
            gb.values[i] -= g.values[i] * a.values[i] / (b.values[i] * b.values[i]);
          }
        }
        break;
      }
      case Op::ScalarMul: {
        if (!wants(0)) break;
        const double s = std::get<ScalarAttr>(e.attr).factor;
        Field2D& ga = grad_of(e.in[0]);
        for (size_t i = 0; i < g.size(); ++i) ga.values[i] += s * g.values[i];
        break;
      }
      case Op::Abs: {
        if (!wants(0)) break;
        const Field2D& a = in_val(0);
        Field2D& ga = grad_of(e.in[0]);
        // subgradient: sign(x), with sign(0) = 0
        for (size_t i = 0; i < g.size(); ++i) {
          const double x = a.values[i];
          ga.values[i] += g.values[i] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
        }
        break;
      }
      case Op::Square: {
        if (!wants(0)) break;
        const Field2D& a = in_val(0);
        Field2D& ga = grad_of(e.in[0]);
        for (size_t i = 0; i < g.size(); ++i) ga.values[i] += 2.0 * g.values[i] * a.values[i];
        break;
      }
      case Op::SumReduce: {
        if (!wants(0)) break;
        Field2D& ga = grad_of(e.in[0]);
        const double gs = g.values[0];
        for (double& v : ga.values) v += gs;
        break;
      }
      case Op::MaskedSumReduce: {
        if (!wants(0)) break;
        const auto& m = std::get<MaskAttr>(e.attr);
        Field2D& ga = grad_of(e.in[0]);
        const double gs = g.values[0];
        for (size_t i = 0; i < ga.size(); ++i) {
          if (m.keep[i]) ga.values[i] += gs;
        }
        break;
      }
      case Op::Conv: {
        if (!wants(0)) break;
        const auto& c = std::get<ConvAttr>(e.attr);
        Field2D& ga = grad_of(e.in[0]);
        const int ry = c.kh / 2, rx = c.kw / 2;
        const int h = ga.height, w = ga.width;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double gv = g.at(y, x);
            if (gv == 0.0) continue;
            for (int ky = 0; ky < c.kh; ++ky) {
              const int sy = clampi(y + ky - ry, 0, h - 1);
              for (int kx = 0; kx < c.kw; ++kx) {
                const int sx = clampi(x + kx - rx, 0, w - 1);
                ga.at(sy, sx) += c.taps[static_cast<size_t>(ky) * c.kw + kx] * gv;
              }
            }
          }
        }
        break;
      }
      case Op::Warp: {
        const Field2D& img = in_val(0);
        const Field2D& u = in_val(1);
        const Field2D& v = in_val(2);
        const int h = img.height, w = img.width;
        Field2D* gimg = wants(0) ? &grad_of(e.in[0]) : nullptr;
        Field2D* gu = wants(1) ? &grad_of(e.in[1]) : nullptr;
        Field2D* gv = wants(2) ? &grad_of(e.in[2]) : nullptr;
        if (!gimg && !gu && !gv) break;
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const double gval = g.at(y, x);
            if (gval == 0.0) continue;
            const double rx_ = x + u.at(y, x);
            const double ry_ = y + v.at(y, x);
            const bool clamped_x = rx_ < 0.0 || rx_ > w - 1;
            const bool clamped_y = ry_ < 0.0 || ry_ > h - 1;
            const double sx = std::min(std::max(rx_, 0.0), static_cast<double>(w - 1));
            const double sy = std::min(std::max(ry_, 0.0), static_cast<double>(h - 1));
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, w - 1);
            const int y0 = static_cast<int>(sy);
            const int y1 = std::min(y0 + 1, h - 1);
            const double wx = sx - x0;
            const double wy = sy - y0;
            if (gimg) {
              gimg->at(y0, x0) += gval * (1.0 - wy) * (1.0 - wx);
              gimg->at(y0, x1) += gval * (1.0 - wy) * wx;
              gimg->at(y1, x0) += gval * wy * (1.0 - wx);
              gimg->at(y1, x1) += gval * wy * wx;
            }
            // coordinate adjoints are zeroed where border clamping is active
            if (gu && !clamped_x) {
              const double ddx = (1.0 - wy) * (img.at(y0, x1) - img.at(y0, x0)) +
                                 wy * (img.at(y1, x1) - img.at(y1, x0));
              gu->at(y, x) += gval * ddx;
            }
            if (gv && !clamped_y) {
              const double ddy = (1.0 - wx) * (img.at(y1, x0) - img.at(y0, x0)) +
                                 wx * (img.at(y1, x1) - img.at(y0, x1));
              gv->at(y, x) += gval * ddy;
            }
          }
        }
        break;
      }
      case Op::Downsample2:
      case Op::Upsample2: {
        if (!wants(0)) break;
        const Field2D& a = in_val(0);
        Field2D& ga = grad_of(e.in[0]);
        const double scy = static_cast<double>(a.height) / g.height;
        const double scx = static_cast<double>(a.width) / g.width;
        for (int y = 0; y < g.height; ++y) {
          double fy = (y + 0.5) * scy - 0.5;
          fy = std::min(std::max(fy, 0.0), static_cast<double>(a.height - 1));
          const int y0 = static_cast<int>(fy);
          const int y1 = std::min(y0 + 1, a.height - 1);
          const double wy = fy - y0;
          for (int x = 0; x < g.width; ++x) {
            const double gval = g.at(y, x);
            if (gval == 0.0) continue;
            double fx = (x + 0.5) * scx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(a.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, a.width - 1);
            const double wx = fx - x0;
            ga.at(y0, x0) += gval * (1.0 - wy) * (1.0 - wx);
            ga.at(y0, x1) += gval * (1.0 - wy) * wx;
            ga.at(y1, x0) += gval * wy * (1.0 - wx);
            ga.at(y1, x1) += gval * wy * wx;
          }
        }
        break;
      }
      case Op::ClampStopGrad:
      case Op::Leaf:
      case Op::Constant:
        break;
    }
  }

  std::vector<Field2D> result;
  result.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (seeded[w.index]) {
      result.push_back(adj[w.index]);
    } else {
      const Field2D& v = values_[w.index];
      result.push_back(Field2D::zeros(v.height, v.width));
    }
  }
  return result;
}

}  // namespace flowattack::ad
