// SPDX-License-Identifier: Apache-2.0
#include "seat/attacks.hpp"

#include <cmath>
#include <stdexcept>

namespace seat::attacks {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("attacks: " + msg); }

using models::ModelSpec;
using models::ParamSet;

ad::Graph loss_per_sample(LossKind kind, ad::Graph logits, ad::Graph onehot) {
  return kind == LossKind::kCe ? models::ce_per_sample(std::move(logits), std::move(onehot))
                               : models::margin_per_sample(std::move(logits), std::move(onehot));
}

/// Ascent objective plus the pieces needed to score per-sample results.
struct AscentGraph {
  ad::Graph x_adv;        // leaf bound to x+delta
  ad::Graph per_sample;   // [B,1] value being ascended
  ad::Graph grad_x;       // d(sum per_sample)/d(x_adv)
};

AscentGraph build_ascent(const ModelSpec& spec, int batch, LossKind kind,
                         std::span<const int> labels, bool targeted) {
  AscentGraph g;
  Shape in_shape{batch};
  for (int d : spec.input_shape) in_shape.push_back(d);
  g.x_adv = ad::leaf("x", in_shape);
  std::vector<ad::Graph> params;
  ad::Graph logits = models::forward_from(spec, g.x_adv, params);
  ad::Graph per = loss_per_sample(kind, std::move(logits), models::onehot(labels, spec.classes));
  // Targeted attacks descend the loss toward the target class; expressed as
  // ascent of the negated loss so restart selection stays "max final value".
  g.per_sample = targeted ? ad::neg(std::move(per)) : std::move(per);
  g.grad_x = ad::gradient(ad::sum_all(g.per_sample), g.x_adv);
  return g;
}

struct StepEval {
  Tensor grad;
  std::vector<float> per_sample;
};

StepEval eval_step(const AscentGraph& g, const ParamSet& params, const Tensor& x_adv) {
  ad::Bindings b;
  for (std::size_t i = 0; i < params.size(); ++i) b.emplace(params.name(i), &params.tensor(i));
  b.emplace("x", &x_adv);
  std::vector<ad::Graph> roots{g.grad_x, g.per_sample};
  auto vals = ad::evaluate(roots, b);
  StepEval out;
  out.grad = std::move(vals[0]);
  out.per_sample.assign(vals[1].values().begin(), vals[1].values().end());
  return out;
}

Tensor uniform_delta(const Shape& shape, float eps, Rng& rng) {
  Tensor d(shape);
  for (std::size_t i = 0; i < d.numel(); ++i) d[i] = rng.uniform(-eps, eps);
  return d;
}

void signed_step_inplace(Tensor& delta, const Tensor& grad, float alpha) {
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    const float gi = grad[i];
    delta[i] += alpha * (gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f));
  }
}

}  // namespace

void AttackSpec::validate() const {
  if (epsilon < 0.0f) fail("epsilon must be >= 0");
  if (alpha <= 0.0f) fail("alpha must be > 0");
  if (steps < 1 || restarts < 1) fail("steps and restarts must be >= 1");
  if (static_cast<long long>(steps) * restarts > 1'000'000) fail("steps*restarts exceeds limit");
  if (momentum < 0.0f) fail("momentum must be >= 0");
  if (lambda < 0.0f) fail("lambda must be >= 0");
}

Tensor project(const Tensor& delta, const Tensor& x, float eps) {
  if (!delta.same_shape(x)) fail("project: delta/x shape mismatch");
  if (eps < 0.0f) fail("project: eps must be >= 0");
  Tensor out(delta.shape());
  for (std::size_t i = 0; i < delta.numel(); ++i) {
    const float xi = x[i];
    float lo = std::max(-eps, -xi);
    float hi = std::min(eps, 1.0f - xi);
    // Float rounding of 1-x can push x+hi over the box; nudge inward.
    while (xi + hi > 1.0f) hi = std::nextafter(hi, -2.0f);
    while (xi + lo < 0.0f) lo = std::nextafter(lo, 2.0f);
    out[i] = std::min(hi, std::max(lo, delta[i]));
  }
  return out;
}

Tensor fgsm(const ModelSpec& spec, const ParamSet& params, const Tensor& x, std::span<const int> y,
            float eps, LossKind loss) {
  AscentGraph g = build_ascent(spec, x.dim(0), loss, y, /*targeted=*/false);
  StepEval ev = eval_step(g, params, x);
  Tensor delta = ops::scale(ops::sign(ev.grad), eps);
  return project(delta, x, eps);
}

Tensor rs_fgsm(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
               std::span<const int> y, float eps, float alpha, Rng& rng, LossKind loss) {
  Tensor delta = project(uniform_delta(x.shape(), eps, rng), x, eps);
  AscentGraph g = build_ascent(spec, x.dim(0), loss, y, /*targeted=*/false);
  StepEval ev = eval_step(g, params, ops::add(x, delta));
  signed_step_inplace(delta, ev.grad, alpha);
  return project(delta, x, eps);
}

std::vector<int> pick_targets(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                              std::span<const int> y, TargetMode mode, Rng& rng) {
  std::vector<int> targets(y.begin(), y.end());
  if (mode == TargetMode::kUntargeted) return targets;
  if (mode == TargetMode::kRandomClass) {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      int t = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.classes - 1)));
      if (t >= y[i]) ++t;  // uniform over classes != y
      targets[i] = t;
    }
    return targets;
  }
  // Least likely: argmin of the clean logits.
  Tensor logits = models::forward(spec, params, x);
  const int c = logits.dim(1);
  for (int i = 0; i < logits.dim(0); ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * c;
    int arg = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] < row[arg]) arg = j;
    targets[static_cast<std::size_t>(i)] = arg;
  }
  return targets;
}

Tensor pgd(const ModelSpec& spec, const ParamSet& params, const Tensor& x, std::span<const int> y,
           const AttackSpec& spec_attack, Rng& rng) {
  spec_attack.validate();
  const int batch = x.dim(0);
  const bool targeted = spec_attack.target != TargetMode::kUntargeted;
  std::vector<int> labels = pick_targets(spec, params, x, y, spec_attack.target, rng);
  // Targeted runs always drive the CE toward the target class.
  const LossKind kind = targeted ? LossKind::kCe : spec_attack.loss;
  AscentGraph g = build_ascent(spec, batch, kind, labels, targeted);

  Tensor best_delta(x.shape());
  std::vector<float> best(static_cast<std::size_t>(batch), -std::numeric_limits<float>::infinity());

  for (int r = 0; r < spec_attack.restarts; ++r) {
    Tensor delta = spec_attack.init == InitKind::kUniform
                       ? project(uniform_delta(x.shape(), spec_attack.epsilon, rng), x, spec_attack.epsilon)
                       : Tensor(x.shape());
    for (int s = 0; s < spec_attack.steps; ++s) {
      StepEval ev = eval_step(g, params, ops::add(x, delta));
      signed_step_inplace(delta, ev.grad, spec_attack.alpha);
      delta = project(delta, x, spec_attack.epsilon);
    }
    // Score the final iterate and keep the strongest restart per sample.
    ad::Bindings b;
    for (std::size_t i = 0; i < params.size(); ++i) b.emplace(params.name(i), &params.tensor(i));
    Tensor x_adv = ops::add(x, delta);
    b.emplace("x", &x_adv);
    Tensor per = ad::evaluate(g.per_sample, b);
    const std::size_t n = x.numel() / static_cast<std::size_t>(batch);
    for (int i = 0; i < batch; ++i) {
      const std::size_t ui = static_cast<std::size_t>(i);
      if (per[ui] > best[ui]) {
        best[ui] = per[ui];
        for (std::size_t j = 0; j < n; ++j) best_delta[ui * n + j] = delta[ui * n + j];
      }
    }
  }
  return best_delta;
}

Tensor mi_fgsm(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
               std::span<const int> y, const AttackSpec& spec_attack, Rng& rng) {
  spec_attack.validate();
  (void)rng;  // zero init; kept for interface symmetry
  const int batch = x.dim(0);
  AscentGraph g = build_ascent(spec, batch, spec_attack.loss, y, /*targeted=*/false);
  const std::size_t n = x.numel() / static_cast<std::size_t>(batch);

  Tensor delta(x.shape());
  Tensor accum(x.shape());
  for (int s = 0; s < spec_attack.steps; ++s) {
    StepEval ev = eval_step(g, params, ops::add(x, delta));
    for (int i = 0; i < batch; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      float l1 = 0.0f;
      for (std::size_t j = 0; j < n; ++j) l1 += std::fabs(ev.grad[off + j]);
      // A zero gradient contributes nothing rather than dividing by zero.
      const float inv = l1 > 0.0f ? 1.0f / l1 : 0.0f;
      for (std::size_t j = 0; j < n; ++j)
        accum[off + j] = spec_attack.momentum * accum[off + j] + inv * ev.grad[off + j];
    }
    signed_step_inplace(delta, accum, spec_attack.alpha);
    delta = project(delta, x, spec_attack.epsilon);
  }
  return delta;
}

Tensor seat_inner(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                  std::span<const int> y, float eps, float alpha, float lambda, Rng& rng,
                  LossKind inner_loss) {
  const int batch = x.dim(0);
  Tensor delta = project(uniform_delta(x.shape(), eps, rng), x, eps);

  // Linearization anchor at the clean point: per-sample CE and its input
  // gradient, both constants of the delta subproblem.
  Tensor anchor_ce, anchor_grad;
  if (lambda > 0.0f) {
    AscentGraph clean = build_ascent(spec, batch, LossKind::kCe, y, false);
    StepEval ev = eval_step(clean, params, x);
    anchor_grad = std::move(ev.grad);
    anchor_ce = Tensor({batch, 1}, std::move(ev.per_sample));
  }

  Shape in_shape{batch};
  for (int d : spec.input_shape) in_shape.push_back(d);
  ad::Graph dleaf = ad::leaf("delta", in_shape);
  ad::Graph x_adv = ad::add(ad::constant(x), dleaf);
  std::vector<ad::Graph> pleaves;
  ad::Graph logits = models::forward_from(spec, x_adv, pleaves);
  ad::Graph oh = models::onehot(y, spec.classes);
  ad::Graph objective = ad::sum_all(loss_per_sample(inner_loss, logits, oh));

  if (lambda > 0.0f) {
    Shape keep(in_shape.size(), 1);
    keep[0] = batch;
    ad::Graph dot = ad::reshape(ad::sum_to(ad::mul(dleaf, ad::constant(anchor_grad)), keep), {batch, 1});
    ad::Graph ce_adv = models::ce_per_sample(logits, oh);
    ad::Graph xi = ad::abs(ad::sub(ad::sub(std::move(ce_adv), ad::constant(anchor_ce)), std::move(dot)));
    objective = ad::add(std::move(objective), ad::scale(ad::sum_all(std::move(xi)), lambda));
  }

  ad::Graph grad = ad::gradient(objective, dleaf);
  ad::Bindings b;
  for (std::size_t i = 0; i < params.size(); ++i) b.emplace(params.name(i), &params.tensor(i));
  b.emplace("delta", &delta);
  Tensor gv = ad::evaluate(grad, b);
  signed_step_inplace(delta, gv, alpha);
  return project(delta, x, eps);
}

Tensor generate(const ModelSpec& spec, const ParamSet& params, const Tensor& x,
                std::span<const int> y, const AttackSpec& a, Rng& rng) {
  switch (a.family) {
    case Family::kFgsm: return fgsm(spec, params, x, y, a.epsilon, a.loss);
    case Family::kRsFgsm: return rs_fgsm(spec, params, x, y, a.epsilon, a.alpha, rng, a.loss);
    case Family::kPgd: return pgd(spec, params, x, y, a, rng);
    case Family::kMiFgsm: return mi_fgsm(spec, params, x, y, a, rng);
    case Family::kSeatInner:
      return seat_inner(spec, params, x, y, a.epsilon, a.alpha, a.lambda, rng, a.loss);
  }
  fail("unknown attack family");
}

Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() < 1) fail("slice_batch expects a batched tensor");
  const std::size_t b = static_cast<std::size_t>(t.dim(0));
  if (begin > end || end > b) fail("slice_batch: bad range");
  const std::size_t n = t.numel() / b;
  Shape s = t.shape();
  s[0] = static_cast<int>(end - begin);
  Tensor out(s);
  for (std::size_t i = 0; i < (end - begin) * n; ++i) out[i] = t[begin * n + i];
  return out;
}

}  // namespace seat::attacks
