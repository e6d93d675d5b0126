// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "seat/graph.hpp"
#include "seat/tensor.hpp"

namespace seat::models {

/// Architecture descriptor: a small MLP or the two-conv SmallCNN. Input shape
/// is [C,H,W] without the batch dimension.
struct ModelSpec {
  enum class Arch { kMlp, kSmallCnn };

  Arch arch = Arch::kSmallCnn;
  Shape input_shape;            // [C,H,W]
  int classes = 10;
  std::vector<int> hidden;      // MLP hidden widths
  int conv1 = 16;               // SmallCNN channel plan
  int conv2 = 32;
  int dense = 128;

  static ModelSpec mlp(Shape input, std::vector<int> hidden, int classes);
  static ModelSpec small_cnn(Shape input, int classes);

  std::size_t input_numel() const { return shape_numel(input_shape); }

  /// Stable text form used in checkpoints; parse() must round-trip it.
  std::string descriptor() const;
  static ModelSpec parse(const std::string& descriptor);
};

/// Named parameter tensors with a deterministic order.
class ParamSet {
 public:
  void add(std::string name, Tensor t);
  std::size_t size() const { return tensors_.size(); }
  std::size_t total_params() const;

  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& tensor(std::size_t i) { return tensors_[i]; }
  const Tensor& tensor(std::size_t i) const { return tensors_[i]; }
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

/// Forward pass recorded as a graph. Parameters and the input are leaves so
/// both d/dtheta and d/dx are available from the same recording.
struct ForwardGraph {
  ad::Graph x;                     // [B,C,H,W] leaf
  std::vector<ad::Graph> params;   // aligned with ParamSet order
  ad::Graph logits;                // [B,classes]
};

ForwardGraph build_forward(const ModelSpec& spec, int batch);

/// Builds logits from an arbitrary input node (e.g. a perturbed input that is
/// itself a graph). Parameter leaves are appended to params_out in ParamSet
/// order.
ad::Graph forward_from(const ModelSpec& spec, ad::Graph input, std::vector<ad::Graph>& params_out);

/// Binds parameter leaves (and optionally the input leaf) for evaluation.
ad::Bindings bind(const ForwardGraph& fg, const ParamSet& params, const Tensor* x = nullptr);

/// Convenience eager forward: logits for a batch of inputs.
Tensor forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x);

/// argmax with lowest-index tie breaking.
std::vector<int> predict(const Tensor& logits);

// --- loss builders ------------------------------------------------------------
// Per-sample forms return [B,1]; *_mean forms reduce to a rank-0 scalar.

ad::Graph onehot(std::span<const int> labels, int classes);

ad::Graph ce_per_sample(ad::Graph logits, ad::Graph onehot);
ad::Graph ce_mean(ad::Graph logits, ad::Graph onehot);
ad::Graph margin_per_sample(ad::Graph logits, ad::Graph onehot);
ad::Graph margin_mean(ad::Graph logits, ad::Graph onehot);
ad::Graph kl_per_sample(ad::Graph p_logits, ad::Graph q_logits);
ad::Graph kl_mean(ad::Graph p_logits, ad::Graph q_logits);

// Eager single-sample forms (logits of shape [C]).
float cross_entropy(const Tensor& logits, int label);
float margin_loss(const Tensor& logits, int label);
float kl_divergence(const Tensor& p_logits, const Tensor& q_logits);

}  // namespace seat::models
