// Copyright 2026 The SeMask-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semask {

using Index = std::int64_t;
using Shape = std::vector<Index>;

/// Raised when operand extents are incompatible. The message carries every
/// shape involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a forward op produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something is accumulated
  bool tracked = false;
};

}  // namespace detail

// Gradient recording is on by default. NoGradGuard turns it off for the
// current thread, for both precisions.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Shared handle to an immutable N-d array with an optional gradient.
///
/// Copies alias the same storage. Only parameters are mutated in place (by
/// the optimizer or checkpoint loading), through `mutable_data()`.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool tracked = false);

  static Tensor zeros(Shape shape, bool tracked = false);
  static Tensor full(Shape shape, T value, bool tracked = false);
  static Tensor scalar(T value, bool tracked = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Extent of `axis`; negative values count from the end.
  Index dim(int axis) const;
  Index size() const;

  std::span<const T> data() const;
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<Index> coords) const;

  bool tracked() const;
  void set_tracked(bool tracked);

  bool has_grad() const;
  std::span<const T> grad() const;
  /// Allocates a zero gradient on first use.
  std::span<T> mutable_grad();
  void zero_grad();

  /// Untracked deep copy.
  Tensor detach() const;

  const std::shared_ptr<detail::TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

template <typename T>
struct TapeNode {
  const char* op;
  std::function<void()> backward;
};

/// Append-only record of differentiable ops executed on this thread.
template <typename T>
class Tape {
 public:
  static Tape& current();

  void record(const char* op, std::function<void()> backward);
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TapeNode<T>>& nodes() const { return nodes_; }
  void clear() { nodes_.clear(); }

  /// Runs every recorded backward closure in exact reverse order, then
  /// clears the tape.
  void replay();

 private:
  std::vector<TapeNode<T>> nodes_;
};

/// Seeds d loss/d loss = 1 and propagates to every tracked tensor.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace semask
