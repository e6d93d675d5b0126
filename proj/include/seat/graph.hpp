// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "seat/tensor.hpp"

namespace seat::ad {

// Primitive operations of the recorded computation graph. The set is closed
// under differentiation: every backward rule is expressed with ops from this
// list, so gradients are themselves graphs and can be differentiated again.
enum class Op : std::uint8_t {
  kLeaf,            // named differentiable input
  kConst,           // embedded value
  kAdd,             // elementwise; one operand may be a scalar
  kSub,             //
  kMul,             //
  kDiv,             //
  kMatMul,          // [m,k] x [k,n] -> [m,n]
  kTranspose,       // 2-D transpose
  kConv2d,          // (x[B,Ci,H,W], w[Co,Ci,kh,kw]) stride 1, symmetric pad
  kConv2dInputGrad, // adjoint of kConv2d in x: (g[B,Co,H',W'], w) -> x-shaped
  kConv2dWeightGrad,// adjoint of kConv2d in w: (x, g) -> w-shaped
  kRelu,            //
  kStep,            // 1 if x>0 else 0; derivative defined as 0
  kSign,            // sign(0)=0; derivative defined as 0
  kAbs,             //
  kExp,             //
  kClamp,           // clamp to [lo,hi]
  kBoxMask,         // 1 if lo<x<hi else 0; derivative defined as 0
  kAvgPool2,        // 2x2 average pool, stride 2
  kAvgUnpool2,      // adjoint of kAvgPool2 (spread /4)
  kReshape,         //
  kBroadcast,       // expand dims of extent 1 (or a scalar) to a target shape
  kSumTo,           // sum down to a target shape; adjoint of kBroadcast
  kRowLogSumExp,    // log-sum-exp over the last axis, keepdim
  kRowMax,          // max over the last axis, keepdim
  kRowMaxMask,      // one-hot of the first row maximum; derivative 0
};

struct Node;
using Graph = std::shared_ptr<const Node>;

/// A single graph node. Immutable after construction; shape is a pure
/// function of the input shapes, fixed at build time.
struct Node {
  Op op;
  Shape shape;
  std::vector<Graph> inputs;

  std::string leaf_name;  // kLeaf
  Tensor value;           // kConst
  float lo = 0.0f;        // kClamp / kBoxMask
  float hi = 0.0f;
  int pad = 0;            // conv family
};

// --- construction -----------------------------------------------------------

Graph leaf(std::string name, Shape shape);
Graph constant(Tensor value);
Graph constant(float scalar);

Graph add(Graph a, Graph b);
Graph sub(Graph a, Graph b);
Graph mul(Graph a, Graph b);
Graph div(Graph a, Graph b);
Graph neg(Graph a);
Graph scale(Graph a, float s);

Graph matmul(Graph a, Graph b);
Graph transpose(Graph a);
Graph conv2d(Graph x, Graph w, int pad);
Graph conv2d_input_grad(Graph g, Graph w, int pad, int in_h, int in_w);
Graph conv2d_weight_grad(Graph x, Graph g, int pad, int kh, int kw);

Graph relu(Graph a);
Graph step(Graph a);
Graph sign(Graph a);
Graph abs(Graph a);
Graph exp(Graph a);
Graph clamp(Graph a, float lo, float hi);
Graph box_mask(Graph a, float lo, float hi);

Graph avg_pool2(Graph a);
Graph avg_unpool2(Graph a);

Graph reshape(Graph a, Shape target);
Graph broadcast(Graph a, Shape target);
Graph sum_to(Graph a, Shape target);
Graph sum_all(Graph a);  // sum_to scalar

Graph row_logsumexp(Graph a);
Graph row_max(Graph a);
Graph row_max_mask(Graph a);

// --- evaluation --------------------------------------------------------------

using Bindings = std::unordered_map<std::string, const Tensor*>;

/// Evaluates several roots with a shared memo, so gradient graphs reuse the
/// forward values they reference. Deterministic: same graphs and bindings
/// give bit-identical outputs.
std::vector<Tensor> evaluate(std::span<const Graph> roots, const Bindings& bindings);
Tensor evaluate(const Graph& root, const Bindings& bindings);

// --- differentiation ----------------------------------------------------------

/// Reverse-mode gradients of a scalar root with respect to the given leaves.
/// Each returned gradient is itself a Graph (referencing forward nodes), so it
/// can be evaluated alongside the root or differentiated again. Leaves the
/// root does not depend on get a zero-constant graph.
std::vector<Graph> gradient(const Graph& root, std::span<const Graph> wrt);
Graph gradient(const Graph& root, const Graph& wrt);

const char* op_name(Op op);

}  // namespace seat::ad
