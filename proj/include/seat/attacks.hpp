// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "seat/model.hpp"
#include "seat/rng.hpp"
#include "seat/tensor.hpp"

namespace seat::attacks {

enum class Family { kFgsm, kRsFgsm, kPgd, kMiFgsm, kSeatInner };
enum class LossKind { kCe, kMargin };
enum class TargetMode { kUntargeted, kRandomClass, kLeastLikely };
enum class InitKind { kUniform, kZero };

struct AttackSpec {
  Family family = Family::kPgd;
  float epsilon = 8.0f / 255.0f;
  float alpha = 2.0f / 255.0f;       // l_inf iterative step size
  int steps = 1;
  int restarts = 1;
  LossKind loss = LossKind::kCe;
  TargetMode target = TargetMode::kUntargeted;
  InitKind init = InitKind::kUniform;
  float momentum = 1.0f;             // MI-FGSM decay
  float lambda = 0.5f;               // linearity weight of the inner objective

  void validate() const;
};

/// Projects delta onto the l_inf ball of radius eps intersected with the
/// [0,1] pixel box around x. Exactly idempotent: a second application is a
/// no-op bit for bit.
Tensor project(const Tensor& delta, const Tensor& x, float eps);

/// Single signed gradient step from the clean point, zero init.
Tensor fgsm(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
            std::span<const int> y, float eps, LossKind loss = LossKind::kCe);

/// Uniform init in the ball, then one signed step of size alpha.
Tensor rs_fgsm(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
               std::span<const int> y, float eps, float alpha, Rng& rng,
               LossKind loss = LossKind::kCe);

/// Iterated projected signed-gradient ascent, best restart kept per sample.
Tensor pgd(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
           std::span<const int> y, const AttackSpec& spec_attack, Rng& rng);

/// Momentum-accumulated iterative FGSM; per-sample l1-normalized gradients.
Tensor mi_fgsm(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
               std::span<const int> y, const AttackSpec& spec_attack, Rng& rng);

/// One-step inner maximization of margin (or CE) plus the weighted linearity
/// term, with the clean-point gradient held constant inside the term.
Tensor seat_inner(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
                  std::span<const int> y, float eps, float alpha, float lambda, Rng& rng,
                  LossKind inner_loss = LossKind::kMargin);

/// Dispatch by spec_attack.family.
Tensor generate(const models::ModelSpec& spec, const models::ParamSet& params, const Tensor& x,
                std::span<const int> y, const AttackSpec& spec_attack, Rng& rng);

/// Draws per-sample target labels for targeted evaluation.
std::vector<int> pick_targets(const models::ModelSpec& spec, const models::ParamSet& params,
                              const Tensor& x, std::span<const int> y, TargetMode mode, Rng& rng);

// Batch row slicing shared by the shard-parallel callers.
Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t end);

}  // namespace seat::attacks
