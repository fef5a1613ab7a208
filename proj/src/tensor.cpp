#include "nightformer/tensor.hpp"

#include <sstream>

namespace nf {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

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

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor() : BasicTensor(Shape{1}) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : impl_(std::make_shared<TensorStorage<T>>()) {
  check_extents(shape);
  impl_->data.assign(numel(shape), fill);
  impl_->shape = std::move(shape);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : impl_(std::make_shared<TensorStorage<T>>()) {
  check_extents(shape);
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

template <typename T>
T BasicTensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= impl_->shape[axis]) throw std::out_of_range("index out of range for " + shape_str(shape()));
    flat = flat * impl_->shape[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data);
}

template <typename T>
Tape<T>*& Tape<T>::slot() {
  thread_local Tape<T>* active = nullptr;
  return active;
}

template <typename T>
Tape<T>::Tape() : previous_(slot()) {
  slot() = this;
}

template <typename T>
Tape<T>::~Tape() {
  slot() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::current() {
  return slot();
}

template <typename T>
void Tape<T>::record(std::function<void()> backward_rule) {
  entries_.push_back(std::move(backward_rule));
}

template <typename T>
void Tape<T>::backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::invalid_argument("backward: loss is not on the tape");
  BasicTensor<T> seed = loss;
  seed.mutable_grad()[0] += T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

template <typename T>
NoTapeGuard<T>::NoTapeGuard() : saved_(Tape<T>::slot()) {
  Tape<T>::slot() = nullptr;
}

template <typename T>
NoTapeGuard<T>::~NoTapeGuard() {
  Tape<T>::slot() = saved_;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  Tape<T>* tape = Tape<T>::current();
  if (!tape) throw std::logic_error("backward called with no active tape");
  tape->backward(loss);
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Tape<float>;
template class Tape<double>;
template class NoTapeGuard<float>;
template class NoTapeGuard<double>;
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace nf
