// SPDX-License-Identifier: Apache-2.0
#include "seat/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "seat/rng.hpp"

namespace seat::models {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument("model: " + msg); }

// Large enough to exclude the true class from a row max, small enough to stay
// exact in float32 against desk-scale logits.
constexpr float kMarginMaskShift = 1.0e4f;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

ModelSpec ModelSpec::mlp(Shape input, std::vector<int> hidden, int classes) {
  ModelSpec s;
  s.arch = Arch::kMlp;
  s.input_shape = std::move(input);
  s.hidden = std::move(hidden);
  s.classes = classes;
  if (s.classes < 2) fail("need at least 2 classes");
  if (shape_numel(s.input_shape) == 0) fail("empty input shape");
  return s;
}

ModelSpec ModelSpec::small_cnn(Shape input, int classes) {
  ModelSpec s;
  s.arch = Arch::kSmallCnn;
  s.input_shape = std::move(input);
  s.classes = classes;
  if (s.classes < 2) fail("need at least 2 classes");
  if (s.input_shape.size() != 3) fail("SmallCNN input must be [C,H,W]");
  const int h = s.input_shape[1], w = s.input_shape[2];
  if (h % 2 || w % 2 || (h / 2) % 2 || (w / 2) % 2)
    fail("SmallCNN spatial extents must survive two 2x2 pools");
  return s;
}

std::string ModelSpec::descriptor() const {
  std::ostringstream os;
  if (arch == Arch::kMlp) {
    os << "mlp;in=";
    for (std::size_t i = 0; i < input_shape.size(); ++i) os << (i ? "x" : "") << input_shape[i];
    os << ";hidden=";
    for (std::size_t i = 0; i < hidden.size(); ++i) os << (i ? "," : "") << hidden[i];
    os << ";classes=" << classes;
  } else {
    os << "smallcnn;in=";
    for (std::size_t i = 0; i < input_shape.size(); ++i) os << (i ? "x" : "") << input_shape[i];
    os << ";conv=" << conv1 << "," << conv2 << ";dense=" << dense << ";classes=" << classes;
  }
  return os.str();
}

ModelSpec ModelSpec::parse(const std::string& descriptor) {
  auto fields = split(descriptor, ';');
  if (fields.empty()) fail("empty descriptor");
  std::unordered_map<std::string, std::string> kv;
  for (std::size_t i = 1; i < fields.size(); ++i) {
    auto eq = fields[i].find('=');
    if (eq == std::string::npos) fail("bad descriptor field '" + fields[i] + "'");
    kv[fields[i].substr(0, eq)] = fields[i].substr(eq + 1);
  }
  auto parse_ints = [](const std::string& s, char sep) {
    std::vector<int> out;
    if (s.empty()) return out;
    for (const auto& p : split(s, sep)) out.push_back(std::stoi(p));
    return out;
  };
  Shape in = parse_ints(kv.at("in"), 'x');
  int classes = std::stoi(kv.at("classes"));
  if (fields[0] == "mlp") return mlp(std::move(in), parse_ints(kv.at("hidden"), ','), classes);
  if (fields[0] == "smallcnn") {
    ModelSpec s = small_cnn(std::move(in), classes);
    auto conv = parse_ints(kv.at("conv"), ',');
    if (conv.size() != 2) fail("bad conv plan");
    s.conv1 = conv[0];
    s.conv2 = conv[1];
    s.dense = std::stoi(kv.at("dense"));
    return s;
  }
  fail("unknown architecture '" + fields[0] + "'");
}

void ParamSet::add(std::string name, Tensor t) {
  if (has(name)) fail("duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

std::size_t ParamSet::total_params() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

const Tensor& ParamSet::at(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  fail("no parameter '" + name + "'");
}

bool ParamSet::has(const std::string& name) const {
  for (const auto& n : names_)
    if (n == name) return true;
  return false;
}

namespace {

Tensor kaiming_uniform(Rng& rng, Shape shape, int fan_in) {
  Tensor t(std::move(shape));
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

Tensor bias_uniform(Rng& rng, Shape shape, int fan_in) {
  Tensor t(std::move(shape));
  const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

struct LayerPlan {
  // Flattened feature size feeding the dense stack, after conv/pool stages.
  int flat = 0;
};

LayerPlan cnn_plan(const ModelSpec& s) {
  const int h = s.input_shape[1] / 4, w = s.input_shape[2] / 4;
  return {s.conv2 * h * w};
}

}  // namespace

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "param-init");
  ParamSet p;
  if (spec.arch == ModelSpec::Arch::kMlp) {
    int in = static_cast<int>(spec.input_numel());
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const int out = spec.hidden[i];
      p.add("fc" + std::to_string(i) + ".w", kaiming_uniform(rng, {in, out}, in));
      p.add("fc" + std::to_string(i) + ".b", bias_uniform(rng, {out}, in));
      in = out;
    }
    p.add("head.w", kaiming_uniform(rng, {in, spec.classes}, in));
    p.add("head.b", bias_uniform(rng, {spec.classes}, in));
  } else {
    const int ci = spec.input_shape[0];
    p.add("conv1.w", kaiming_uniform(rng, {spec.conv1, ci, 3, 3}, ci * 9));
    p.add("conv1.b", bias_uniform(rng, {spec.conv1}, ci * 9));
    p.add("conv2.w", kaiming_uniform(rng, {spec.conv2, spec.conv1, 3, 3}, spec.conv1 * 9));
    p.add("conv2.b", bias_uniform(rng, {spec.conv2}, spec.conv1 * 9));
    const int flat = cnn_plan(spec).flat;
    p.add("fc1.w", kaiming_uniform(rng, {flat, spec.dense}, flat));
    p.add("fc1.b", bias_uniform(rng, {spec.dense}, flat));
    p.add("head.w", kaiming_uniform(rng, {spec.dense, spec.classes}, spec.dense));
    p.add("head.b", bias_uniform(rng, {spec.classes}, spec.dense));
  }
  return p;
}

namespace {

ad::Graph dense(ad::Graph x, ad::Graph w, ad::Graph b, int batch, int out) {
  ad::Graph y = ad::matmul(std::move(x), std::move(w));
  return ad::add(std::move(y), ad::broadcast(ad::reshape(std::move(b), {1, out}), {batch, out}));
}

ad::Graph conv_block(ad::Graph x, ad::Graph w, ad::Graph b, int batch, int channels, int h, int wd) {
  ad::Graph y = ad::conv2d(std::move(x), std::move(w), 1);
  y = ad::add(std::move(y),
              ad::broadcast(ad::reshape(std::move(b), {1, channels, 1, 1}), {batch, channels, h, wd}));
  return ad::avg_pool2(ad::relu(std::move(y)));
}

}  // namespace

ad::Graph forward_from(const ModelSpec& spec, ad::Graph input, std::vector<ad::Graph>& params_out) {
  const Shape& in_shape = input->shape;
  if (in_shape.size() != spec.input_shape.size() + 1)
    fail("forward input must be batched, got " + shape_str(in_shape));
  for (std::size_t i = 0; i < spec.input_shape.size(); ++i)
    if (in_shape[i + 1] != spec.input_shape[i])
      fail("forward input shape " + shape_str(in_shape) + " does not match model input " +
           shape_str(spec.input_shape));
  const int batch = in_shape[0];

  if (spec.arch == ModelSpec::Arch::kMlp) {
    int in = static_cast<int>(spec.input_numel());
    ad::Graph h = ad::reshape(std::move(input), {batch, in});
    for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
      const int out = spec.hidden[i];
      ad::Graph w = ad::leaf("fc" + std::to_string(i) + ".w", {in, out});
      ad::Graph b = ad::leaf("fc" + std::to_string(i) + ".b", {out});
      params_out.push_back(w);
      params_out.push_back(b);
      h = ad::relu(dense(std::move(h), std::move(w), std::move(b), batch, out));
      in = out;
    }
    ad::Graph w = ad::leaf("head.w", {in, spec.classes});
    ad::Graph b = ad::leaf("head.b", {spec.classes});
    params_out.push_back(w);
    params_out.push_back(b);
    return dense(std::move(h), std::move(w), std::move(b), batch, spec.classes);
  }

  const int ci = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
  ad::Graph c1w = ad::leaf("conv1.w", {spec.conv1, ci, 3, 3});
  ad::Graph c1b = ad::leaf("conv1.b", {spec.conv1});
  ad::Graph c2w = ad::leaf("conv2.w", {spec.conv2, spec.conv1, 3, 3});
  ad::Graph c2b = ad::leaf("conv2.b", {spec.conv2});
  const int flat = cnn_plan(spec).flat;
  ad::Graph f1w = ad::leaf("fc1.w", {flat, spec.dense});
  ad::Graph f1b = ad::leaf("fc1.b", {spec.dense});
  ad::Graph hw = ad::leaf("head.w", {spec.dense, spec.classes});
  ad::Graph hb = ad::leaf("head.b", {spec.classes});
  for (const auto& g : {c1w, c1b, c2w, c2b, f1w, f1b, hw, hb}) params_out.push_back(g);

  ad::Graph t = conv_block(std::move(input), c1w, c1b, batch, spec.conv1, h, w);
  t = conv_block(std::move(t), c2w, c2b, batch, spec.conv2, h / 2, w / 2);
  t = ad::reshape(std::move(t), {batch, flat});
  t = ad::relu(dense(std::move(t), f1w, f1b, batch, spec.dense));
  return dense(std::move(t), hw, hb, batch, spec.classes);
}

ForwardGraph build_forward(const ModelSpec& spec, int batch) {
  if (batch < 1) fail("batch must be >= 1");
  ForwardGraph fg;
  Shape in_shape = {batch};
  for (int d : spec.input_shape) in_shape.push_back(d);
  fg.x = ad::leaf("x", in_shape);
  fg.logits = forward_from(spec, fg.x, fg.params);
  return fg;
}

ad::Bindings bind(const ForwardGraph& fg, const ParamSet& params, const Tensor* x) {
  ad::Bindings b;
  if (params.size() != fg.params.size()) fail("parameter count mismatch in bind()");
  for (std::size_t i = 0; i < fg.params.size(); ++i) {
    if (fg.params[i]->leaf_name != params.name(i))
      fail("parameter order mismatch: leaf '" + fg.params[i]->leaf_name + "' vs '" +
           params.name(i) + "'");
    b.emplace(params.name(i), &params.tensor(i));
  }
  if (x) b.emplace("x", x);
  return b;
}

Tensor forward(const ModelSpec& spec, const ParamSet& params, const Tensor& x) {
  if (x.rank() != static_cast<int>(spec.input_shape.size()) + 1)
    fail("forward expects a batched input");
  ForwardGraph fg = build_forward(spec, x.dim(0));
  return ad::evaluate(fg.logits, bind(fg, params, &x));
}

std::vector<int> predict(const Tensor& logits) {
  if (logits.rank() != 2) fail("predict expects [B,C] logits");
  const int b = logits.dim(0), c = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const float* row = logits.data() + static_cast<std::size_t>(i) * c;
    int arg = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[arg]) arg = j;
    out[static_cast<std::size_t>(i)] = arg;
  }
  return out;
}

ad::Graph onehot(std::span<const int> labels, int classes) {
  Tensor t({static_cast<int>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      fail("label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(classes) + ")");
    t[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return ad::constant(std::move(t));
}

ad::Graph ce_per_sample(ad::Graph logits, ad::Graph onehot) {
  const int b = logits->shape[0];
  ad::Graph lse = ad::row_logsumexp(logits);
  ad::Graph picked = ad::sum_to(ad::mul(std::move(logits), std::move(onehot)), {b, 1});
  return ad::sub(std::move(lse), std::move(picked));
}

ad::Graph ce_mean(ad::Graph logits, ad::Graph onehot) {
  const int b = logits->shape[0];
  return ad::scale(ad::sum_all(ce_per_sample(std::move(logits), std::move(onehot))),
                   1.0f / static_cast<float>(b));
}

ad::Graph margin_per_sample(ad::Graph logits, ad::Graph onehot) {
  const int b = logits->shape[0];
  ad::Graph shifted = ad::sub(logits, ad::scale(onehot, kMarginMaskShift));
  ad::Graph best_other = ad::row_max(std::move(shifted));
  ad::Graph own = ad::sum_to(ad::mul(std::move(logits), std::move(onehot)), {b, 1});
  return ad::sub(std::move(best_other), std::move(own));
}

ad::Graph margin_mean(ad::Graph logits, ad::Graph onehot) {
  const int b = logits->shape[0];
  return ad::scale(ad::sum_all(margin_per_sample(std::move(logits), std::move(onehot))),
                   1.0f / static_cast<float>(b));
}

ad::Graph kl_per_sample(ad::Graph p_logits, ad::Graph q_logits) {
  if (p_logits->shape != q_logits->shape) fail("kl: logits shapes differ");
  const Shape& s = p_logits->shape;
  ad::Graph lp = ad::sub(p_logits, ad::broadcast(ad::row_logsumexp(p_logits), s));
  ad::Graph lq = ad::sub(q_logits, ad::broadcast(ad::row_logsumexp(q_logits), s));
  ad::Graph prob = ad::exp(lp);
  Shape out = s;
  out.back() = 1;
  return ad::sum_to(ad::mul(std::move(prob), ad::sub(std::move(lp), std::move(lq))), out);
}

ad::Graph kl_mean(ad::Graph p_logits, ad::Graph q_logits) {
  const int b = p_logits->shape[0];
  return ad::scale(ad::sum_all(kl_per_sample(std::move(p_logits), std::move(q_logits))),
                   1.0f / static_cast<float>(b));
}

namespace {
Tensor as_row(const Tensor& logits) {
  if (logits.rank() != 1) fail("single-sample loss expects logits of shape [C]");
  return Tensor({1, logits.dim(0)}, std::vector<float>(logits.values().begin(), logits.values().end()));
}
}  // namespace

float cross_entropy(const Tensor& logits, int label) {
  Tensor row = as_row(logits);
  ad::Graph l = ad::constant(row);
  return ad::evaluate(ce_per_sample(l, onehot(std::vector<int>{label}, logits.dim(0))), {}).item();
}

float margin_loss(const Tensor& logits, int label) {
  if (logits.dim(0) < 2) fail("margin loss needs at least 2 classes");
  Tensor row = as_row(logits);
  ad::Graph l = ad::constant(row);
  return ad::evaluate(margin_per_sample(l, onehot(std::vector<int>{label}, logits.dim(0))), {}).item();
}

float kl_divergence(const Tensor& p_logits, const Tensor& q_logits) {
  if (!p_logits.same_shape(q_logits)) fail("kl: shape mismatch");
  ad::Graph p = ad::constant(as_row(p_logits));
  ad::Graph q = ad::constant(as_row(q_logits));
  return ad::evaluate(kl_per_sample(std::move(p), std::move(q)), {}).item();
}

}  // namespace seat::models
