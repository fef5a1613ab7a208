#pragma once

// Parameterized layers shared by the backbone, phase encoder, decoder and
// matcher. Layers hold handles into a ParameterSet, which owns the ordered
// list of learnable tensors used by the optimizer and checkpoints.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nightformer/ops.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

using Rng = std::mt19937_64;

template <typename T>
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    BasicTensor<T> value;
  };

  BasicTensor<T> normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
    BasicTensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (T& v : t.mutable_data()) v = static_cast<T>(dist(rng));
    return push(name, t);
  }

  BasicTensor<T> constant(const std::string& name, Shape shape, double value) {
    return push(name, BasicTensor<T>(std::move(shape), static_cast<T>(value)));
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t count() const;  // total scalar parameters

  void zero_grad() {
    for (auto& e : entries_) e.value.zero_grad();
  }

  /// Copies values (not gradients) from a set with the same layout.
  void copy_values_from(const ParameterSet& other);

 private:
  BasicTensor<T> push(const std::string& name, BasicTensor<T> t) {
    t.set_requires_grad(true);
    entries_.push_back({name, t});
    return t;
  }

  std::vector<Entry> entries_;
};

template <typename T>
std::size_t ParameterSet<T>::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::copy_values_from(const ParameterSet& other) {
  if (other.entries_.size() != entries_.size()) throw ShapeError("parameter sets differ in layout");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& dst = entries_[i].value;
    const auto& src = other.entries_[i].value;
    if (dst.shape() != src.shape()) throw ShapeError("parameter " + entries_[i].name + " differs in shape");
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

template <typename T>
struct Linear {
  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, double gain = 1.0)
      : weight(ps.normal(name + ".weight", {in, out}, gain / std::sqrt(static_cast<double>(in)), rng)),
        bias(ps.constant(name + ".bias", {out}, 0.0)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
};

template <typename T>
struct Conv2d {
  BasicTensor<T> weight;  // [k, k, cin, cout]
  BasicTensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t kernel, std::size_t cin, std::size_t cout,
         std::size_t stride_, std::size_t padding_, Rng& rng)
      : weight(ps.normal(name + ".weight", {kernel, kernel, cin, cout},
                         std::sqrt(2.0 / static_cast<double>(kernel * kernel * cin)), rng)),
        bias(ps.constant(name + ".bias", {cout}, 0.0)),
        stride(stride_),
        padding(padding_) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return add_bias(conv2d(x, weight, stride, padding), bias);
  }
};

template <typename T>
struct LayerNorm {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::size_t width)
      : gamma(ps.constant(name + ".gamma", {width}, 1.0)), beta(ps.constant(name + ".beta", {width}, 0.0)) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// Single-head scaled dot-product self-attention over tokens [n, C] with a
/// residual connection and post layer normalization.
template <typename T>
struct SelfAttention {
  Linear<T> query, key, value, out;
  LayerNorm<T> norm;

  SelfAttention() = default;
  SelfAttention(ParameterSet<T>& ps, const std::string& name, std::size_t width, Rng& rng)
      : query(ps, name + ".q", width, width, rng),
        key(ps, name + ".k", width, width, rng),
        value(ps, name + ".v", width, width, rng),
        out(ps, name + ".o", width, width, rng),
        norm(ps, name + ".norm", width) {}

  BasicTensor<T> weights(const BasicTensor<T>& tokens) const {
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(tokens.dim(1)));
    return softmax(scale(matmul_nt(query(tokens), key(tokens)), inv_sqrt), 1);
  }

  BasicTensor<T> operator()(const BasicTensor<T>& tokens) const {
    const BasicTensor<T> mixed = matmul(weights(tokens), value(tokens));
    return norm(add(tokens, out(mixed)));
  }
};

template <typename T>
struct FeedForward {
  Linear<T> up, down;
  LayerNorm<T> norm;

  FeedForward() = default;
  FeedForward(ParameterSet<T>& ps, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng)
      : up(ps, name + ".up", width, hidden, rng, std::sqrt(2.0)),
        down(ps, name + ".down", hidden, width, rng),
        norm(ps, name + ".norm", width) {}

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return norm(add(x, down(relu(up(x))))); }
};

}  // namespace nf
