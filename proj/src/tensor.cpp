// SPDX-License-Identifier: Apache-2.0
#include "seat/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace seat {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw std::invalid_argument("data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
}

float Tensor::item() const {
  if (data_.size() != 1) throw std::logic_error("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

namespace ops {

namespace {
void check_same(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] - b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * s;
  return out;
}

Tensor sign(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] > 0.0f ? 1.0f : (a[i] < 0.0f ? -1.0f : 0.0f);
  return out;
}

Tensor abs(const Tensor& a) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::fabs(a[i]);
  return out;
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::min(hi, std::max(lo, a[i]));
  return out;
}

Tensor clamp(const Tensor& a, const Tensor& lo, const Tensor& hi) {
  check_same(a, lo, "clamp");
  check_same(a, hi, "clamp");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = std::min(hi[i], std::max(lo[i], a[i]));
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  check_same(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

void axpy_inplace(Tensor& a, float alpha, const Tensor& b) {
  check_same(a, b, "axpy_inplace");
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += alpha * b[i];
}

void scale_inplace(Tensor& a, float s) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] *= s;
}

float dot(const Tensor& a, const Tensor& b) {
  check_same(a, b, "dot");
  float s = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

float norm_l1(const Tensor& a) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::fabs(a[i]);
  return s;
}

float norm_l2(const Tensor& a) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

float norm_linf(const Tensor& a) {
  float s = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) s = std::max(s, std::fabs(a[i]));
  return s;
}

}  // namespace ops
}  // namespace seat
