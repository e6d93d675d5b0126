// SPDX-License-Identifier: Apache-2.0
//
// Graph construction and build-time shape checking.

#include "seat/graph.hpp"

#include <stdexcept>
#include <utility>

namespace seat::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("graph: " + msg); }

bool is_scalar(const Shape& s) { return shape_numel(s) == 1 && s.empty(); }

std::shared_ptr<Node> make(Op op, Shape shape, std::vector<Graph> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->shape = std::move(shape);
  n->inputs = std::move(inputs);
  return n;
}

// Elementwise binary ops accept equal shapes or a rank-0 scalar on either
// side; anything else must be made explicit with broadcast().
Shape binary_shape(const char* what, const Graph& a, const Graph& b) {
  if (a->shape == b->shape) return a->shape;
  if (is_scalar(a->shape)) return b->shape;
  if (is_scalar(b->shape)) return a->shape;
  fail(std::string(what) + ": incompatible shapes " + shape_str(a->shape) + " vs " +
       shape_str(b->shape));
}

void check_broadcastable(const char* what, const Shape& from, const Shape& to) {
  if (is_scalar(from)) return;
  if (from.size() != to.size())
    fail(std::string(what) + ": rank mismatch " + shape_str(from) + " -> " + shape_str(to));
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from[i] != to[i] && from[i] != 1)
      fail(std::string(what) + ": cannot map " + shape_str(from) + " -> " + shape_str(to));
}

}  // namespace

Graph leaf(std::string name, Shape shape) {
  if (name.empty()) fail("leaf needs a name");
  auto n = std::make_shared<Node>();
  n->op = Op::kLeaf;
  n->shape = std::move(shape);
  n->leaf_name = std::move(name);
  return n;
}

Graph constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->op = Op::kConst;
  n->shape = value.shape();
  n->value = std::move(value);
  return n;
}

Graph constant(float scalar) { return constant(Tensor::scalar(scalar)); }

Graph add(Graph a, Graph b) {
  Shape s = binary_shape("add", a, b);
  return make(Op::kAdd, std::move(s), {std::move(a), std::move(b)});
}

Graph sub(Graph a, Graph b) {
  Shape s = binary_shape("sub", a, b);
  return make(Op::kSub, std::move(s), {std::move(a), std::move(b)});
}

Graph mul(Graph a, Graph b) {
  Shape s = binary_shape("mul", a, b);
  return make(Op::kMul, std::move(s), {std::move(a), std::move(b)});
}

Graph div(Graph a, Graph b) {
  Shape s = binary_shape("div", a, b);
  return make(Op::kDiv, std::move(s), {std::move(a), std::move(b)});
}

Graph neg(Graph a) { return mul(std::move(a), constant(-1.0f)); }

Graph scale(Graph a, float s) { return mul(std::move(a), constant(s)); }

Graph matmul(Graph a, Graph b) {
  if (a->shape.size() != 2 || b->shape.size() != 2) fail("matmul expects 2-D operands");
  if (a->shape[1] != b->shape[0])
    fail("matmul inner extents differ: " + shape_str(a->shape) + " x " + shape_str(b->shape));
  Shape s{a->shape[0], b->shape[1]};
  return make(Op::kMatMul, std::move(s), {std::move(a), std::move(b)});
}

Graph transpose(Graph a) {
  if (a->shape.size() != 2) fail("transpose expects a 2-D operand");
  Shape s{a->shape[1], a->shape[0]};
  return make(Op::kTranspose, std::move(s), {std::move(a)});
}

namespace {
void check_conv_args(const Shape& x, const Shape& w, int pad) {
  if (x.size() != 4 || w.size() != 4) fail("conv2d expects x[B,Ci,H,W] and w[Co,Ci,kh,kw]");
  if (x[1] != w[1]) fail("conv2d channel mismatch");
  if (pad < 0) fail("conv2d pad must be >= 0");
  if (w[2] > x[2] + 2 * pad || w[3] > x[3] + 2 * pad) fail("conv2d kernel larger than padded input");
}
}  // namespace

Graph conv2d(Graph x, Graph w, int pad) {
  check_conv_args(x->shape, w->shape, pad);
  int out_h = x->shape[2] + 2 * pad - w->shape[2] + 1;
  int out_w = x->shape[3] + 2 * pad - w->shape[3] + 1;
  Shape s{x->shape[0], w->shape[0], out_h, out_w};
  auto n = make(Op::kConv2d, std::move(s), {std::move(x), std::move(w)});
  n->pad = pad;
  return n;
}

Graph conv2d_input_grad(Graph g, Graph w, int pad, int in_h, int in_w) {
  if (g->shape.size() != 4 || w->shape.size() != 4) fail("conv2d_input_grad expects 4-D operands");
  if (g->shape[1] != w->shape[0]) fail("conv2d_input_grad channel mismatch");
  Shape s{g->shape[0], w->shape[1], in_h, in_w};
  auto n = make(Op::kConv2dInputGrad, std::move(s), {std::move(g), std::move(w)});
  n->pad = pad;
  return n;
}

Graph conv2d_weight_grad(Graph x, Graph g, int pad, int kh, int kw) {
  if (x->shape.size() != 4 || g->shape.size() != 4) fail("conv2d_weight_grad expects 4-D operands");
  if (x->shape[0] != g->shape[0]) fail("conv2d_weight_grad batch mismatch");
  Shape s{g->shape[1], x->shape[1], kh, kw};
  auto n = make(Op::kConv2dWeightGrad, std::move(s), {std::move(x), std::move(g)});
  n->pad = pad;
  return n;
}

Graph relu(Graph a) { return make(Op::kRelu, a->shape, {std::move(a)}); }
Graph step(Graph a) { return make(Op::kStep, a->shape, {std::move(a)}); }
Graph sign(Graph a) { return make(Op::kSign, a->shape, {std::move(a)}); }
Graph abs(Graph a) { return make(Op::kAbs, a->shape, {std::move(a)}); }
Graph exp(Graph a) { return make(Op::kExp, a->shape, {std::move(a)}); }

Graph clamp(Graph a, float lo, float hi) {
  if (lo > hi) fail("clamp: lo > hi");
  auto n = make(Op::kClamp, a->shape, {std::move(a)});
  n->lo = lo;
  n->hi = hi;
  return n;
}

Graph box_mask(Graph a, float lo, float hi) {
  if (lo > hi) fail("box_mask: lo > hi");
  auto n = make(Op::kBoxMask, a->shape, {std::move(a)});
  n->lo = lo;
  n->hi = hi;
  return n;
}

Graph avg_pool2(Graph a) {
  if (a->shape.size() != 4) fail("avg_pool2 expects [B,C,H,W]");
  if (a->shape[2] % 2 != 0 || a->shape[3] % 2 != 0) fail("avg_pool2 needs even spatial extents");
  Shape s{a->shape[0], a->shape[1], a->shape[2] / 2, a->shape[3] / 2};
  return make(Op::kAvgPool2, std::move(s), {std::move(a)});
}

Graph avg_unpool2(Graph a) {
  if (a->shape.size() != 4) fail("avg_unpool2 expects [B,C,H,W]");
  Shape s{a->shape[0], a->shape[1], a->shape[2] * 2, a->shape[3] * 2};
  return make(Op::kAvgUnpool2, std::move(s), {std::move(a)});
}

Graph reshape(Graph a, Shape target) {
  if (shape_numel(target) != shape_numel(a->shape))
    fail("reshape: element count changes " + shape_str(a->shape) + " -> " + shape_str(target));
  return make(Op::kReshape, std::move(target), {std::move(a)});
}

Graph broadcast(Graph a, Shape target) {
  check_broadcastable("broadcast", a->shape, target);
  return make(Op::kBroadcast, std::move(target), {std::move(a)});
}

Graph sum_to(Graph a, Shape target) {
  check_broadcastable("sum_to", target, a->shape);
  return make(Op::kSumTo, std::move(target), {std::move(a)});
}

Graph sum_all(Graph a) { return sum_to(std::move(a), Shape{}); }

namespace {
Shape rowwise_shape(const char* what, const Graph& a) {
  if (a->shape.empty()) fail(std::string(what) + " expects rank >= 1");
  Shape s = a->shape;
  s.back() = 1;
  return s;
}
}  // namespace

Graph row_logsumexp(Graph a) {
  Shape s = rowwise_shape("row_logsumexp", a);
  return make(Op::kRowLogSumExp, std::move(s), {std::move(a)});
}

Graph row_max(Graph a) {
  Shape s = rowwise_shape("row_max", a);
  return make(Op::kRowMax, std::move(s), {std::move(a)});
}

Graph row_max_mask(Graph a) {
  if (a->shape.empty()) fail("row_max_mask expects rank >= 1");
  return make(Op::kRowMaxMask, a->shape, {std::move(a)});
}

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kConv2d: return "conv2d";
    case Op::kConv2dInputGrad: return "conv2d_input_grad";
    case Op::kConv2dWeightGrad: return "conv2d_weight_grad";
    case Op::kRelu: return "relu";
    case Op::kStep: return "step";
    case Op::kSign: return "sign";
    case Op::kAbs: return "abs";
    case Op::kExp: return "exp";
    case Op::kClamp: return "clamp";
    case Op::kBoxMask: return "box_mask";
    case Op::kAvgPool2: return "avg_pool2";
    case Op::kAvgUnpool2: return "avg_unpool2";
    case Op::kReshape: return "reshape";
    case Op::kBroadcast: return "broadcast";
    case Op::kSumTo: return "sum_to";
    case Op::kRowLogSumExp: return "row_logsumexp";
    case Op::kRowMax: return "row_max";
    case Op::kRowMaxMask: return "row_max_mask";
  }
  return "?";
}

}  // namespace seat::ad
