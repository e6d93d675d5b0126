// SPDX-License-Identifier: Apache-2.0
//
// Graph evaluation. Kernels accumulate in a fixed index order that does not
// depend on batch size, so per-sample results are identical whether a sample
// is evaluated alone or inside a larger batch.

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "seat/graph.hpp"

namespace seat::ad {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error("evaluate: " + msg); }

// --- kernels ------------------------------------------------------------------

void matmul_kernel(const float* __restrict__ a, const float* __restrict__ b, float* __restrict__ c,
                   int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = 0.0f;
    const float* arow = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const float av = arow[l];
      const float* brow = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void conv2d_kernel(const float* x, const float* w, float* out, int batch, int ci, int h, int wd,
                   int co, int kh, int kw, int pad) {
  const int oh = h + 2 * pad - kh + 1;
  const int ow = wd + 2 * pad - kw + 1;
  const std::size_t x_c = static_cast<std::size_t>(h) * wd;
  const std::size_t o_c = static_cast<std::size_t>(oh) * ow;
  for (int b = 0; b < batch; ++b) {
    const float* xb = x + static_cast<std::size_t>(b) * ci * x_c;
    float* ob = out + static_cast<std::size_t>(b) * co * o_c;
    for (int oc = 0; oc < co; ++oc) {
      float* oplane = ob + static_cast<std::size_t>(oc) * o_c;
      for (std::size_t i = 0; i < o_c; ++i) oplane[i] = 0.0f;
      for (int ic = 0; ic < ci; ++ic) {
        const float* xplane = xb + static_cast<std::size_t>(ic) * x_c;
        const float* wbase = w + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const float wv = wbase[ky * kw + kx];
            const int ox_lo = std::max(0, pad - kx);
            const int ox_hi = std::min(ow, wd + pad - kx);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              float* __restrict__ orow = oplane + static_cast<std::size_t>(oy) * ow;
              const float* __restrict__ xrow = xplane + static_cast<std::size_t>(iy) * wd + (kx - pad);
              for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xrow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_input_grad_kernel(const float* g, const float* w, float* gx, int batch, int ci, int h,
                              int wd, int co, int kh, int kw, int pad) {
  const int oh = h + 2 * pad - kh + 1;
  const int ow = wd + 2 * pad - kw + 1;
  const std::size_t x_c = static_cast<std::size_t>(h) * wd;
  const std::size_t o_c = static_cast<std::size_t>(oh) * ow;
  for (int b = 0; b < batch; ++b) {
    float* gxb = gx + static_cast<std::size_t>(b) * ci * x_c;
    for (std::size_t i = 0; i < static_cast<std::size_t>(ci) * x_c; ++i) gxb[i] = 0.0f;
    const float* gb = g + static_cast<std::size_t>(b) * co * o_c;
    for (int oc = 0; oc < co; ++oc) {
      const float* gplane = gb + static_cast<std::size_t>(oc) * o_c;
      for (int ic = 0; ic < ci; ++ic) {
        float* gxplane = gxb + static_cast<std::size_t>(ic) * x_c;
        const float* wbase = w + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const float wv = wbase[ky * kw + kx];
            const int ox_lo = std::max(0, pad - kx);
            const int ox_hi = std::min(ow, wd + pad - kx);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const float* __restrict__ grow = gplane + static_cast<std::size_t>(oy) * ow;
              float* __restrict__ gxrow = gxplane + static_cast<std::size_t>(iy) * wd + (kx - pad);
              for (int ox = ox_lo; ox < ox_hi; ++ox) gxrow[ox] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_weight_grad_kernel(const float* x, const float* g, float* gw, int batch, int ci, int h,
                               int wd, int co, int kh, int kw, int pad) {
  const int oh = h + 2 * pad - kh + 1;
  const int ow = wd + 2 * pad - kw + 1;
  const std::size_t x_c = static_cast<std::size_t>(h) * wd;
  const std::size_t o_c = static_cast<std::size_t>(oh) * ow;
  const std::size_t wn = static_cast<std::size_t>(co) * ci * kh * kw;
  for (std::size_t i = 0; i < wn; ++i) gw[i] = 0.0f;
  for (int b = 0; b < batch; ++b) {
    const float* xb = x + static_cast<std::size_t>(b) * ci * x_c;
    const float* gb = g + static_cast<std::size_t>(b) * co * o_c;
    for (int oc = 0; oc < co; ++oc) {
      const float* gplane = gb + static_cast<std::size_t>(oc) * o_c;
      for (int ic = 0; ic < ci; ++ic) {
        const float* xplane = xb + static_cast<std::size_t>(ic) * x_c;
        float* wbase = gw + ((static_cast<std::size_t>(oc) * ci + ic) * kh) * kw;
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const int ox_lo = std::max(0, pad - kx);
            const int ox_hi = std::min(ow, wd + pad - kx);
            float acc = 0.0f;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy + ky - pad;
              if (iy < 0 || iy >= h) continue;
              const float* __restrict__ grow = gplane + static_cast<std::size_t>(oy) * ow;
              const float* __restrict__ xrow = xplane + static_cast<std::size_t>(iy) * wd + (kx - pad);
              float rowacc = 0.0f;
              for (int ox = ox_lo; ox < ox_hi; ++ox) rowacc += xrow[ox] * grow[ox];
              acc += rowacc;
            }
            wbase[ky * kw + kx] += acc;
          }
        }
      }
    }
  }
}

// Index arithmetic for broadcast/sum_to between equal-rank shapes (dims of
// extent 1 in the smaller shape) or a rank-0 scalar.
struct DimMap {
  std::vector<int> extents;      // full shape extents
  std::vector<std::size_t> strides;  // strides into the reduced shape (0 where reduced)
};

DimMap make_dim_map(const Shape& full, const Shape& reduced) {
  DimMap m;
  m.extents = full;
  m.strides.assign(full.size(), 0);
  if (reduced.empty()) return m;  // scalar: all strides 0
  std::size_t stride = 1;
  for (int i = static_cast<int>(full.size()) - 1; i >= 0; --i) {
    const std::size_t idx = static_cast<std::size_t>(i);
    if (reduced[idx] == full[idx]) {
      m.strides[idx] = stride;
      stride *= static_cast<std::size_t>(reduced[idx]);
    } else {
      m.strides[idx] = 0;  // reduced dim has extent 1
      stride *= 1;
    }
  }
  return m;
}

template <typename Fn>
void for_each_mapped(const DimMap& m, Fn&& fn) {
  const std::size_t rank = m.extents.size();
  if (rank == 0) {
    fn(0, 0);
    return;
  }
  std::vector<int> idx(rank, 0);
  std::size_t full_i = 0;
  std::size_t reduced_i = 0;
  const std::size_t total = [&] {
    std::size_t t = 1;
    for (int e : m.extents) t *= static_cast<std::size_t>(e);
    return t;
  }();
  for (std::size_t c = 0; c < total; ++c) {
    fn(full_i, reduced_i);
    ++full_i;
    for (int d = static_cast<int>(rank) - 1; d >= 0; --d) {
      const std::size_t ud = static_cast<std::size_t>(d);
      reduced_i += m.strides[ud];
      if (++idx[ud] < m.extents[ud]) break;
      idx[ud] = 0;
      reduced_i -= m.strides[ud] * static_cast<std::size_t>(m.extents[ud]);
    }
  }
}

// --- node computation ----------------------------------------------------------

Tensor compute(const Node& n, const std::vector<const Tensor*>& in) {
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      fail("terminal node reached compute()");
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out(n.shape);
      const bool sa = a.numel() == 1 && a.rank() == 0;
      const bool sb = b.numel() == 1 && b.rank() == 0;
      const std::size_t cnt = out.numel();
      auto apply = [&](auto fn) {
        if (!sa && !sb)
          for (std::size_t i = 0; i < cnt; ++i) out[i] = fn(a[i], b[i]);
        else if (sb) {
          const float bv = b[0];
          for (std::size_t i = 0; i < cnt; ++i) out[i] = fn(a[i], bv);
        } else {
          const float av = a[0];
          for (std::size_t i = 0; i < cnt; ++i) out[i] = fn(av, b[i]);
        }
      };
      if (n.op == Op::kAdd) apply([](float x, float y) { return x + y; });
      else if (n.op == Op::kSub) apply([](float x, float y) { return x - y; });
      else if (n.op == Op::kMul) apply([](float x, float y) { return x * y; });
      else apply([](float x, float y) { return x / y; });
      return out;
    }
    case Op::kMatMul: {
      Tensor out(n.shape);
      matmul_kernel(in[0]->data(), in[1]->data(), out.data(), in[0]->dim(0), in[0]->dim(1),
                    in[1]->dim(1));
      return out;
    }
    case Op::kTranspose: {
      Tensor out(n.shape);
      const int r = in[0]->dim(0), c = in[0]->dim(1);
      const float* a = in[0]->data();
      float* o = out.data();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) o[static_cast<std::size_t>(j) * r + i] = a[static_cast<std::size_t>(i) * c + j];
      return out;
    }
    case Op::kConv2d: {
      Tensor out(n.shape);
      const Shape& xs = n.inputs[0]->shape;
      const Shape& ws = n.inputs[1]->shape;
      conv2d_kernel(in[0]->data(), in[1]->data(), out.data(), xs[0], xs[1], xs[2], xs[3], ws[0],
                    ws[2], ws[3], n.pad);
      return out;
    }
    case Op::kConv2dInputGrad: {
      Tensor out(n.shape);
      const Shape& ws = n.inputs[1]->shape;
      conv2d_input_grad_kernel(in[0]->data(), in[1]->data(), out.data(), n.shape[0], n.shape[1],
                               n.shape[2], n.shape[3], ws[0], ws[2], ws[3], n.pad);
      return out;
    }
    case Op::kConv2dWeightGrad: {
      Tensor out(n.shape);
      const Shape& xs = n.inputs[0]->shape;
      conv2d_weight_grad_kernel(in[0]->data(), in[1]->data(), out.data(), xs[0], xs[1], xs[2],
                                xs[3], n.shape[0], n.shape[2], n.shape[3], n.pad);
      return out;
    }
    case Op::kRelu: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
      return out;
    }
    case Op::kStep: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0f ? 1.0f : 0.0f;
      return out;
    }
    case Op::kSign: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i)
        out[i] = a[i] > 0.0f ? 1.0f : (a[i] < 0.0f ? -1.0f : 0.0f);
      return out;
    }
    case Op::kAbs: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::fabs(a[i]);
      return out;
    }
    case Op::kExp: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a[i]);
      return out;
    }
    case Op::kClamp: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::min(n.hi, std::max(n.lo, a[i]));
      return out;
    }
    case Op::kBoxMask: {
      Tensor out(n.shape);
      const Tensor& a = *in[0];
      for (std::size_t i = 0; i < a.numel(); ++i)
        out[i] = (a[i] > n.lo && a[i] < n.hi) ? 1.0f : 0.0f;
      return out;
    }
    case Op::kAvgPool2: {
      Tensor out(n.shape);
      const Shape& s = n.inputs[0]->shape;
      const int planes = s[0] * s[1], h = s[2], w = s[3];
      const int oh = h / 2, ow = w / 2;
      const float* a = in[0]->data();
      float* o = out.data();
      for (int p = 0; p < planes; ++p) {
        const float* ap = a + static_cast<std::size_t>(p) * h * w;
        float* op = o + static_cast<std::size_t>(p) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x) {
            const float* r0 = ap + static_cast<std::size_t>(2 * y) * w + 2 * x;
            const float* r1 = r0 + w;
            op[static_cast<std::size_t>(y) * ow + x] = ((r0[0] + r0[1]) + (r1[0] + r1[1])) * 0.25f;
          }
      }
      return out;
    }
    case Op::kAvgUnpool2: {
      Tensor out(n.shape);
      const Shape& s = n.inputs[0]->shape;
      const int planes = s[0] * s[1], h = s[2], w = s[3];
      const int oh = h * 2, ow = w * 2;
      const float* a = in[0]->data();
      float* o = out.data();
      for (int p = 0; p < planes; ++p) {
        const float* ap = a + static_cast<std::size_t>(p) * h * w;
        float* op = o + static_cast<std::size_t>(p) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int x = 0; x < ow; ++x)
            op[static_cast<std::size_t>(y) * ow + x] =
                ap[static_cast<std::size_t>(y / 2) * w + x / 2] * 0.25f;
      }
      return out;
    }
    case Op::kReshape: {
      Tensor out(n.shape, std::vector<float>(in[0]->values().begin(), in[0]->values().end()));
      return out;
    }
    case Op::kBroadcast: {
      Tensor out(n.shape);
      const float* a = in[0]->data();
      DimMap m = make_dim_map(n.shape, n.inputs[0]->shape);
      float* o = out.data();
      for_each_mapped(m, [&](std::size_t oi, std::size_t ai) { o[oi] = a[ai]; });
      return out;
    }
    case Op::kSumTo: {
      Tensor out(n.shape);  // zero-initialized
      const float* a = in[0]->data();
      DimMap m = make_dim_map(n.inputs[0]->shape, n.shape);
      float* o = out.data();
      for_each_mapped(m, [&](std::size_t ai, std::size_t oi) { o[oi] += a[ai]; });
      return out;
    }
    case Op::kRowLogSumExp: {
      Tensor out(n.shape);
      const int cols = n.inputs[0]->shape.back();
      const std::size_t rows = in[0]->numel() / static_cast<std::size_t>(cols);
      const float* a = in[0]->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* row = a + r * static_cast<std::size_t>(cols);
        float m = row[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, row[j]);
        float s = 0.0f;
        for (int j = 0; j < cols; ++j) s += std::exp(row[j] - m);
        out[r] = m + std::log(s);
      }
      return out;
    }
    case Op::kRowMax: {
      Tensor out(n.shape);
      const int cols = n.inputs[0]->shape.back();
      const std::size_t rows = in[0]->numel() / static_cast<std::size_t>(cols);
      const float* a = in[0]->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* row = a + r * static_cast<std::size_t>(cols);
        float m = row[0];
        for (int j = 1; j < cols; ++j) m = std::max(m, row[j]);
        out[r] = m;
      }
      return out;
    }
    case Op::kRowMaxMask: {
      Tensor out(n.shape);
      const int cols = n.inputs[0]->shape.back();
      const std::size_t rows = in[0]->numel() / static_cast<std::size_t>(cols);
      const float* a = in[0]->data();
      for (std::size_t r = 0; r < rows; ++r) {
        const float* row = a + r * static_cast<std::size_t>(cols);
        int arg = 0;
        for (int j = 1; j < cols; ++j)
          if (row[j] > row[arg]) arg = j;  // first maximum wins
        out[r * static_cast<std::size_t>(cols) + static_cast<std::size_t>(arg)] = 1.0f;
      }
      return out;
    }
  }
  fail("unknown op");
}

}  // namespace

std::vector<Tensor> evaluate(std::span<const Graph> roots, const Bindings& bindings) {
  // Iterative DFS: deterministic topological order, cycle detection.
  std::vector<const Node*> order;
  std::unordered_map<const Node*, int> state;  // 0 new, 1 open, 2 done
  std::vector<std::pair<const Node*, std::size_t>> stack;
  for (const Graph& root : roots) {
    if (!root) fail("null root");
    if (state[root.get()] == 2) continue;
    stack.emplace_back(root.get(), 0);
    state[root.get()] = 1;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const Node* child = node->inputs[next++].get();
        int& st = state[child];
        if (st == 1) fail("cycle detected");
        if (st == 0) {
          st = 1;
          stack.emplace_back(child, 0);
        }
      } else {
        state[node] = 2;
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<const Node*, Tensor> memo;
  memo.reserve(order.size());
  for (const Node* node : order) {
    if (node->op == Op::kConst) {
      memo.emplace(node, node->value);
      continue;
    }
    if (node->op == Op::kLeaf) {
      auto it = bindings.find(node->leaf_name);
      if (it == bindings.end() || it->second == nullptr)
        fail("unbound leaf '" + node->leaf_name + "'");
      if (it->second->shape() != node->shape)
        fail("binding for leaf '" + node->leaf_name + "' has shape " +
             shape_str(it->second->shape()) + ", expected " + shape_str(node->shape));
      memo.emplace(node, *it->second);
      continue;
    }
    std::vector<const Tensor*> in;
    in.reserve(node->inputs.size());
    for (const Graph& g : node->inputs) in.push_back(&memo.at(g.get()));
    memo.emplace(node, compute(*node, in));
  }

  std::vector<Tensor> out;
  out.reserve(roots.size());
  for (const Graph& root : roots) out.push_back(memo.at(root.get()));
  return out;
}

Tensor evaluate(const Graph& root, const Bindings& bindings) {
  return evaluate(std::span<const Graph>(&root, 1), bindings)[0];
}

}  // namespace seat::ad
