#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "gbe/errors.hpp"

namespace gbe {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
template <typename Scalar>
using VectorMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;
template <typename Scalar>
using ConstVectorMap = Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>;

// Dense row-major n-d array. Storage is contiguous; matrix() views the
// tensor as shape[0] x (numel / shape[0]).
template <typename Scalar>
class Tensor {
 public:
  using value_type = Scalar;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<Scalar> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(Scalar v) { return Tensor({1}, std::vector<Scalar>{v}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<Scalar> data() { return data_; }
  std::span<const Scalar> data() const { return data_; }
  Scalar* ptr() { return data_.data(); }
  const Scalar* ptr() const { return data_.data(); }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  Scalar operator[](std::size_t i) const { return data_[i]; }

  Scalar& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  Scalar at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  MatrixMap<Scalar> matrix() { return {data_.data(), rows(), cols()}; }
  ConstMatrixMap<Scalar> matrix() const { return {data_.data(), rows(), cols()}; }
  VectorMap<Scalar> vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  ConstVectorMap<Scalar> vec() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Eigen::Index rows() const { return shape_.empty() ? 1 : shape_[0]; }
  Eigen::Index cols() const {
    return shape_.empty() || shape_[0] == 0 ? 1 : static_cast<Eigen::Index>(data_.size()) / shape_[0];
  }

  std::size_t offset(std::initializer_list<int> idx) const {
    assert(idx.size() == shape_.size());
    std::size_t off = 0;
    std::size_t k = 0;
    for (int i : idx) off = off * static_cast<std::size_t>(shape_[k++]) + static_cast<std::size_t>(i);
    return off;
  }

  void validate_shape() const {
    for (int d : shape_)
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until first accumulation or zero_grad()
  bool requires_grad = false;

  Tensor<Scalar>& ensure_grad() {
    if (grad.empty()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
};

// Shared handle to a value participating in the autodiff graph.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  const Tensor<Scalar>& value() const { return node_->value; }
  Tensor<Scalar>& mutable_value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  Scalar item() const { return node_->value[0]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  Tensor<Scalar>& grad_mut() const { return node_->ensure_grad(); }
  void zero_grad() const { node_->ensure_grad().fill(Scalar(0)); }
  void clear_grad() const { node_->grad = Tensor<Scalar>(); }

  Node<Scalar>* node() const { return node_.get(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> t) { return Var<Scalar>(std::move(t), true); }

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> t) { return Var<Scalar>(std::move(t), false); }

namespace detail {

// Test-only fault injection: when set, the backward rule of the named op
// receives a scaled upstream gradient.
struct BackwardFault {
  std::string op;
  double factor = 1.0;
};

inline BackwardFault& backward_fault() {
  static BackwardFault fault;
  return fault;
}

}  // namespace detail

// Scoped fault injection used by gradcheck tests.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault(std::string op, double factor) {
    detail::backward_fault() = {std::move(op), factor};
  }
  ~ScopedBackwardFault() { detail::backward_fault() = {}; }
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

// Ordered record of differentiable operations. Entries are appended in
// execution order, so every entry's inputs precede it.
template <typename Scalar>
class Tape {
 public:
  struct Entry {
    const char* op;
    Var<Scalar> output;
    std::vector<Var<Scalar>> inputs;
    std::function<void()> backward;
  };

  void record(const char* op, Var<Scalar> output, std::vector<Var<Scalar>> inputs,
              std::function<void()> backward) {
    entries_.push_back({op, std::move(output), std::move(inputs), std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

  bool contains(const Var<Scalar>& v) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.output.node() == v.node(); });
  }

  // Reverse-mode accumulation from a scalar loss. Every requires_grad input
  // reached by the tape ends with a populated (possibly zero) gradient.
  void backward(const Var<Scalar>& loss) {
    if (loss.size() != 1)
      throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!contains(loss)) throw UsageError("backward(): loss was not recorded on this tape");

    for (auto& e : entries_) {
      e.output.clear_grad();
      for (auto& in : e.inputs)
        if (in.requires_grad()) in.grad_mut();
    }
    loss.grad_mut()[0] = Scalar(1);

    const auto& fault = detail::backward_fault();
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      if (!fault.op.empty() && fault.op == it->op) {
        auto& g = it->output.grad_mut();
        for (auto& v : g.data()) v = static_cast<Scalar>(v * fault.factor);
      }
      it->backward();
    }
  }

 private:
  std::vector<Entry> entries_;
};

namespace detail {
template <typename Scalar>
Tape<Scalar>*& active_tape() {
  thread_local Tape<Scalar>* tape = nullptr;
  return tape;
}
}  // namespace detail

// Installs a tape as the recording target for the current thread.
template <typename Scalar>
class TapeScope {
 public:
  explicit TapeScope(Tape<Scalar>& tape) : previous_(detail::active_tape<Scalar>()) {
    detail::active_tape<Scalar>() = &tape;
  }
  ~TapeScope() { detail::active_tape<Scalar>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Scalar>* previous_;
};

template <typename Scalar>
void backward(const Var<Scalar>& loss, Tape<Scalar>& tape) { tape.backward(loss); }

namespace detail {

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Var<Scalar>*> inputs) {
  for (const auto* v : inputs)
    if (v->requires_grad()) return true;
  return false;
}

// Wraps a forward result; records the backward rule when a tape is active
// and any input needs a gradient.
template <typename Scalar, typename Fn>
Var<Scalar> record(const char* op, Tensor<Scalar> out, std::vector<Var<Scalar>> inputs, Fn&& make_backward) {
#ifndef NDEBUG
  assert(out.all_finite() && "non-finite forward result");
#endif
  Tape<Scalar>* tape = active_tape<Scalar>();
  bool needs = false;
  if (tape)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  Var<Scalar> y(std::move(out), needs);
  if (needs) tape->record(op, y, inputs, make_backward(y));
  return y;
}

}  // namespace detail

}  // namespace gbe
