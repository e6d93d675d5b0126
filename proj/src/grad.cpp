// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation as a graph-to-graph transform. Adjoints are
// built from the same primitive set, so the result of gradient() can be fed
// back into gradient() for second-order terms.

#include <stdexcept>
#include <unordered_map>

#include "seat/graph.hpp"

namespace seat::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("gradient: " + msg); }

/// sum_to(g, shape) when the operand of a binary op was a scalar; identity otherwise.
Graph adapt(Graph g, const Shape& target) {
  if (g->shape == target) return g;
  return sum_to(std::move(g), target);
}

struct Backprop {
  std::vector<Graph> topo;
  std::unordered_map<const Node*, Graph> adjoint;

  void build_topo(const Graph& root) {
    std::unordered_map<const Node*, int> state;
    std::vector<std::pair<Graph, std::size_t>> stack;
    stack.emplace_back(root, 0);
    state[root.get()] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const Graph& child = node->inputs[next++];
        int& st = state[child.get()];
        if (st == 0) {
          st = 1;
          stack.emplace_back(child, 0);
        }
      } else {
        state[node.get()] = 2;
        topo.push_back(node);
        stack.pop_back();
      }
    }
  }

  void accumulate(const Graph& node, Graph contrib) {
    Graph& slot = adjoint[node.get()];
    slot = slot ? add(slot, std::move(contrib)) : std::move(contrib);
  }

  void backward(const Graph& n, const Graph& g) {
    const auto& in = n->inputs;
    switch (n->op) {
      case Op::kLeaf:
      case Op::kConst:
        return;
      case Op::kAdd:
        accumulate(in[0], adapt(g, in[0]->shape));
        accumulate(in[1], adapt(g, in[1]->shape));
        return;
      case Op::kSub:
        accumulate(in[0], adapt(g, in[0]->shape));
        accumulate(in[1], neg(adapt(g, in[1]->shape)));
        return;
      case Op::kMul:
        accumulate(in[0], adapt(mul(g, in[1]), in[0]->shape));
        accumulate(in[1], adapt(mul(g, in[0]), in[1]->shape));
        return;
      case Op::kDiv:
        // d(a/b): da = g/b ; db = -g*(a/b)/b
        accumulate(in[0], adapt(div(g, in[1]), in[0]->shape));
        accumulate(in[1], adapt(neg(div(mul(g, n), in[1])), in[1]->shape));
        return;
      case Op::kMatMul:
        accumulate(in[0], matmul(g, transpose(in[1])));
        accumulate(in[1], matmul(transpose(in[0]), g));
        return;
      case Op::kTranspose:
        accumulate(in[0], transpose(g));
        return;
      case Op::kConv2d:
        accumulate(in[0], conv2d_input_grad(g, in[1], n->pad, in[0]->shape[2], in[0]->shape[3]));
        accumulate(in[1], conv2d_weight_grad(in[0], g, n->pad, in[1]->shape[2], in[1]->shape[3]));
        return;
      case Op::kConv2dInputGrad:
        // n = Cx(G, W); <H, Cx(G,W)> = <C(H,W), G> = <Cw(H,G), W>
        accumulate(in[0], conv2d(g, in[1], n->pad));
        accumulate(in[1], conv2d_weight_grad(g, in[0], n->pad, in[1]->shape[2], in[1]->shape[3]));
        return;
      case Op::kConv2dWeightGrad:
        // n = Cw(X, G); <K, Cw(X,G)> = <Cx(G,K), X> = <C(X,K), G>
        accumulate(in[0], conv2d_input_grad(in[1], g, n->pad, in[0]->shape[2], in[0]->shape[3]));
        accumulate(in[1], conv2d(in[0], g, n->pad));
        return;
      case Op::kRelu:
        accumulate(in[0], mul(g, step(in[0])));
        return;
      case Op::kStep:
      case Op::kSign:
      case Op::kBoxMask:
      case Op::kRowMaxMask:
        return;  // defined derivative: zero everywhere
      case Op::kAbs:
        accumulate(in[0], mul(g, sign(in[0])));
        return;
      case Op::kExp:
        accumulate(in[0], mul(g, n));
        return;
      case Op::kClamp:
        accumulate(in[0], mul(g, box_mask(in[0], n->lo, n->hi)));
        return;
      case Op::kAvgPool2:
        accumulate(in[0], avg_unpool2(g));
        return;
      case Op::kAvgUnpool2:
        accumulate(in[0], avg_pool2(g));
        return;
      case Op::kReshape:
        accumulate(in[0], reshape(g, in[0]->shape));
        return;
      case Op::kBroadcast:
        accumulate(in[0], sum_to(g, in[0]->shape));
        return;
      case Op::kSumTo:
        accumulate(in[0], broadcast(g, in[0]->shape));
        return;
      case Op::kRowLogSumExp: {
        // d lse = softmax(x); reuses this node as the subtracted max-free term.
        Graph soft = exp(sub(in[0], broadcast(n, in[0]->shape)));
        accumulate(in[0], mul(broadcast(g, in[0]->shape), soft));
        return;
      }
      case Op::kRowMax:
        accumulate(in[0], mul(broadcast(g, in[0]->shape), row_max_mask(in[0])));
        return;
    }
    fail("unknown op");
  }
};

}  // namespace

std::vector<Graph> gradient(const Graph& root, std::span<const Graph> wrt) {
  if (!root) fail("null root");
  if (!root->shape.empty()) fail("root must be a scalar, got shape " + shape_str(root->shape));
  for (const Graph& w : wrt) {
    if (!w || w->op != Op::kLeaf) fail("gradient target must be a leaf node");
  }

  Backprop bp;
  bp.build_topo(root);
  bp.adjoint[root.get()] = constant(1.0f);

  for (auto it = bp.topo.rbegin(); it != bp.topo.rend(); ++it) {
    const Graph& node = *it;
    auto found = bp.adjoint.find(node.get());
    if (found == bp.adjoint.end()) continue;  // does not influence the root
    bp.backward(node, found->second);
  }

  std::vector<Graph> out;
  out.reserve(wrt.size());
  for (const Graph& w : wrt) {
    auto found = bp.adjoint.find(w.get());
    if (found != bp.adjoint.end())
      out.push_back(found->second);
    else
      out.push_back(constant(Tensor::zeros(w->shape)));
  }
  return out;
}

Graph gradient(const Graph& root, const Graph& wrt) {
  return gradient(root, std::span<const Graph>(&wrt, 1))[0];
}

}  // namespace seat::ad
