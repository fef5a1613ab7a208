#pragma once

// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// BasicTensor<T> is a shared handle: copies alias the same storage. Operations
// always allocate a fresh output, so a tensor produced by an op is never
// written again except through its gradient buffer.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised on any rank or extent disagreement between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor();
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl_->data.size(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }
  const T* ptr() const { return impl_->data.data(); }
  T* mutable_ptr() { return impl_->data.data(); }

  T operator[](std::size_t i) const { return impl_->data[i]; }
  T at(std::initializer_list<std::size_t> index) const;
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  BasicTensor& set_requires_grad(bool flag = true);

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad();  // allocates zeros on first use
  void zero_grad();

  /// Deep copy of the values, detached from any tape.
  BasicTensor clone() const;
  /// Same values converted to another precision (no gradient).
  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape(), std::vector<U>(impl_->data.begin(), impl_->data.end()));
  }

  bool same_storage(const BasicTensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<TensorStorage<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorStorage<T>> impl_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
class NoTapeGuard;

/// Ordered record of differentiable operations for one thread.
///
/// Constructing a tape makes it the active tape of the calling thread until
/// it is destroyed; tapes nest like a stack. Operations executed while a tape
/// is active and with at least one grad-requiring input append their
/// backward rule. backward() replays those rules in exact reverse order and
/// consumes the tape.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(std::function<void()> backward_rule);
  std::size_t size() const { return entries_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and replays. Throws if loss is not a scalar.
  void backward(const BasicTensor<T>& loss);

 private:
  friend class NoTapeGuard<T>;
  static Tape*& slot();

  std::vector<std::function<void()>> entries_;
  Tape* previous_ = nullptr;
};

/// Disables recording on this thread for its lifetime.
template <typename T>
class NoTapeGuard {
 public:
  NoTapeGuard();
  ~NoTapeGuard();
  NoTapeGuard(const NoTapeGuard&) = delete;
  NoTapeGuard& operator=(const NoTapeGuard&) = delete;

 private:
  Tape<T>* saved_;
};

/// Backward through the currently active tape.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace nf
