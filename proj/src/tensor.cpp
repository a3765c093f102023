// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include "semask/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace semask {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool tracked)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
  if (shape_numel(shape) != static_cast<Index>(data.size())) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->tracked = tracked;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool tracked) {
  return full(std::move(shape), T(0), tracked);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool tracked) {
  const Index n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(static_cast<std::size_t>(n), value), tracked);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool tracked) {
  return Tensor(Shape{1}, std::vector<T>{value}, tracked);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->shape;
}

template <typename T>
Index Tensor<T>::dim(int axis) const {
  const int r = rank();
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
Index Tensor<T>::size() const {
  return static_cast<Index>(impl_ ? impl_->data.size() : 0);
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return impl_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<Index> coords) const {
  const Shape& s = shape();
  if (coords.size() != s.size()) {
    throw ShapeError("at(): expected " + std::to_string(s.size()) + " coordinates");
  }
  Index off = 0;
  std::size_t i = 0;
  for (Index c : coords) {
    if (c < 0 || c >= s[i]) throw ShapeError("at(): coordinate out of range for " + shape_str(s));
    off = off * s[i] + c;
    ++i;
  }
  return impl_->data[static_cast<std::size_t>(off)];
}

template <typename T>
bool Tensor<T>::tracked() const {
  return impl_ && impl_->tracked;
}

template <typename T>
void Tensor<T>::set_tracked(bool tracked) {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  impl_->tracked = tracked;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl_->data, false);
}

template <typename T>
Tape<T>& Tape<T>::current() {
  static thread_local Tape tape;
  return tape;
}

template <typename T>
void Tape<T>::record(const char* op, std::function<void()> backward) {
  nodes_.push_back(TapeNode<T>{op, std::move(backward)});
}

template <typename T>
void Tape<T>::replay() {
  // Closures may allocate grads on inputs but never record new nodes.
  NoGradGuard guard;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  nodes_.clear();
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward() requires a scalar loss, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.tracked()) throw std::logic_error("backward() on an untracked loss");
  Tensor<T> root = loss;
  root.mutable_grad()[0] += T(1);
  Tape<T>::current().replay();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template void backward(const Tensor<float>&);
template void backward(const Tensor<double>&);

}  // namespace semask
