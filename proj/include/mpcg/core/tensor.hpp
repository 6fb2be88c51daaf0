#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mpcg/core/errors.hpp"

namespace mpcg {

/// Dense rank-4 extent tuple (batch, channels, height, width).
struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::int64_t numel() const {
    return static_cast<std::int64_t>(n) * c * h * w;
  }
  bool operator==(const Shape& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense float32 tensor in (N,C,H,W) row-major order. Copies share storage;
/// the gradient buffer is shared as well so every copy sees accumulation.
/// Values are immutable after construction except through the optimizer and
/// gradient accumulation.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape s, float fill = 0.0f) : shape_(s) {
    validate_shape(s);
    data_ = std::make_shared<std::vector<float>>(s.numel(), fill);
    grad_ = std::make_shared<std::vector<float>>();
    meta_ = std::make_shared<Meta>();
  }

  static Tensor zeros(Shape s) { return Tensor(s, 0.0f); }
  static Tensor ones(Shape s) { return Tensor(s, 1.0f); }
  static Tensor full(Shape s, float v) { return Tensor(s, v); }
  static Tensor scalar(float v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  static Tensor from(Shape s, std::vector<float> values) {
    validate_shape(s);
    if (static_cast<std::int64_t>(values.size()) != s.numel()) {
      throw ShapeError("Tensor::from: got " + std::to_string(values.size()) +
                       " values for shape " + s.str());
    }
    Tensor t;
    t.shape_ = s;
    t.data_ = std::make_shared<std::vector<float>>(std::move(values));
    t.grad_ = std::make_shared<std::vector<float>>();
    t.meta_ = std::make_shared<Meta>();
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::int64_t numel() const { return shape_.numel(); }

  float* data() { return data_->data(); }
  const float* data() const { return data_->data(); }
  std::vector<float>& vec() { return *data_; }
  const std::vector<float>& vec() const { return *data_; }

  std::int64_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::int64_t>(in) * shape_.c + ic) * shape_.h + iy) *
               shape_.w +
           ix;
  }
  float& at(int in, int ic, int iy, int ix) {
    return (*data_)[index(in, ic, iy, ix)];
  }
  float at(int in, int ic, int iy, int ix) const {
    return (*data_)[index(in, ic, iy, ix)];
  }

  // Gradient flags live in shared state: every copy of a tensor (they all
  // alias the same storage) sees the same flags.
  bool requires_grad() const { return meta_ && meta_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    meta_->requires_grad = v;
    return *this;
  }

  /// True for tensors produced by an op recorded on a tape; gradients flow
  /// through them during backward even without requires_grad.
  bool tracked() const { return meta_ && meta_->tracked; }
  void mark_tracked() { meta_->tracked = true; }
  bool needs_grad() const { return requires_grad() || tracked(); }

  bool grad_allocated() const { return grad_ && !grad_->empty(); }

  std::vector<float>& grad_vec() {
    ensure_grad();
    return *grad_;
  }
  const std::vector<float>& grad_vec() const { return *grad_; }
  float* grad_data() {
    ensure_grad();
    return grad_->data();
  }

  void ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<float>>();
    if (grad_->empty()) grad_->assign(static_cast<size_t>(numel()), 0.0f);
  }
  void zero_grad() {
    if (grad_allocated()) grad_->assign(grad_->size(), 0.0f);
  }

  /// Detached copy of the gradient as a plain tensor (zeros if untouched).
  Tensor grad_tensor() const {
    Tensor g(shape_);
    if (grad_allocated()) g.vec() = *grad_;
    return g;
  }

  /// Deep copy of values only (fresh storage, no grad state).
  Tensor clone_values() const {
    Tensor t(shape_);
    t.vec() = *data_;
    return t;
  }

  bool all_finite() const {
    for (float v : *data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  static void validate_shape(const Shape& s) {
    if (s.n <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0) {
      throw ShapeError("tensor extents must be positive, got " + s.str());
    }
  }

  struct Meta {
    bool requires_grad = false;
    bool tracked = false;
  };

  Shape shape_{};
  std::shared_ptr<std::vector<float>> data_;
  std::shared_ptr<std::vector<float>> grad_;
  std::shared_ptr<Meta> meta_;
};

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite value in output");
  }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                     " vs " + b.shape().str());
  }
}

}  // namespace detail
}  // namespace mpcg
