// Copyright 2026 The mofe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mofe/dtype.hpp"
#include "mofe/errors.hpp"

namespace mofe {

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data
  bool requires_grad = false;
};

// Dense row-major tensor. Value-semantic handle over shared storage; the
// contents are treated as immutable once built, except for the grad buffer
// and explicit weight updates between training steps.
template <typename T>
class Tensor {
 public:
  using Scalar = T;

  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {}

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(shape_numel(t.impl_->shape), T(0));
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from_data(std::vector<std::size_t> shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                       shape_str(shape));
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v) { return from_data({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::size_t rows() const { return rank() == 0 ? 1 : impl_->shape[0]; }
  std::size_t cols() const { return rank() < 2 ? (rank() == 0 ? 1 : 1) : impl_->shape[1]; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& mutable_data() { return impl_->data; }

  T item() const {
    if (numel() != 1) throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  const std::vector<T>& grad() const { return impl_->grad; }

  // Zero-initialized on first access; shape mirrors data.
  std::vector<T>& grad_buffer() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }

  void zero_grad() { impl_->grad.clear(); }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

  // Deep copy; grad is not copied.
  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
void ensure_grad(TensorImpl<T>& impl) {
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), T(0));
}

// Per-step record of operations in execution order. Nodes are closures
// that propagate the output grad into the input grads; reverse iteration
// visits every node after all of its consumers.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  void run_backward() {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void reset() { nodes_.clear(); }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

// RAII activation of a tape for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : prev_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* prev_;
};

// Seeds d(loss)/d(loss) = 1 and runs the active tape in reverse. Gradients
// accumulate additively, both across multiple uses of a tensor within the
// tape and across repeated backward calls.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr || tape->empty()) {
    throw ContractError("backward() requires a nonempty active tape");
  }
  auto& g = const_cast<Tensor<T>&>(loss).grad_buffer();
  g[0] += T(1);
  tape->run_backward();
}

}  // namespace mofe
