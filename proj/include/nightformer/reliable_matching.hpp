#pragma once

// Object-level reliable matching. Prototypes attend to pixels through a
// bridge of K reliable points: the pixels whose summed prototype similarity
// is largest. Prototype-to-pixel affinity is the inner product of the
// prototype's and the pixel's distributions over those points.

#include <cstddef>
#include <string>
#include <vector>

#include "nightformer/nn.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

template <typename T>
struct ProjectionWeights {
  BasicTensor<T> query;  // [C, Ck]
  BasicTensor<T> key;    // [C, Ck]
  BasicTensor<T> value;  // [C, Cv]

  void validate(std::size_t width) const;
};

template <typename T>
struct ReliableSet {
  std::vector<std::size_t> indices;  // descending score, ties by ascending pixel index
  BasicTensor<T> features;           // [K, C]
  BasicTensor<T> scores;             // [hw]
};

template <typename T>
struct SimilarityBundle {
  BasicTensor<T> sim;     // [N, hw]
  BasicTensor<T> sim_q;   // [N, K]
  BasicTensor<T> sim_k;   // [hw, K]
  BasicTensor<T> sim_qk;  // [N, hw]
};

enum class MatcherMode { Reliable, Vanilla };

MatcherMode parse_matcher_mode(const std::string& name);
std::string to_string(MatcherMode mode);

/// softmax over pixels of (P Wq)(Fa Wk)^T / sqrt(Ck): [N, hw].
template <typename T>
BasicTensor<T> cross_similarity(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                const ProjectionWeights<T>& w);

/// Column sums of sim. Used only for selection, so no gradient is recorded.
template <typename T>
BasicTensor<T> reliable_scores(const BasicTensor<T>& sim);

/// Top-K pixels by score. Gradients flow through the gathered features only.
template <typename T>
ReliableSet<T> select_reliable(const BasicTensor<T>& scores, const BasicTensor<T>& pixels, std::size_t k);

template <typename T>
SimilarityBundle<T> bridged_similarity(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                                       const ReliableSet<T>& reliable, const ProjectionWeights<T>& w,
                                       const BasicTensor<T>& sim);

/// p~_n = sum_m Sim_qk[n, m] V[m].
template <typename T>
BasicTensor<T> update_prototypes(const BasicTensor<T>& sim_qk, const BasicTensor<T>& values);

struct MatcherConfig {
  std::size_t prototypes = 8;
  std::size_t reliable_k = 16;
  std::size_t layers = 3;
  std::size_t ffn_hidden = 128;
  MatcherMode mode = MatcherMode::Reliable;
  bool renormalize = false;  // row-normalize Sim_qk before blending values
};

template <typename T>
struct LayerTrace {
  SimilarityBundle<T> similarity;
  std::vector<std::size_t> reliable_indices;
};

/// One matcher layer: prototype self-attention, reliable (or vanilla)
/// cross-attention with output projection, self-attention, then FFN, each
/// wrapped in a residual connection and layer normalization.
template <typename T>
class MatchingLayer {
 public:
  MatchingLayer() = default;
  MatchingLayer(ParameterSet<T>& ps, const std::string& name, std::size_t width, std::size_t ffn_hidden, Rng& rng);

  BasicTensor<T> reliable(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels, std::size_t k,
                          bool renormalize = false, LayerTrace<T>* trace = nullptr) const;
  BasicTensor<T> vanilla(const BasicTensor<T>& prototypes, const BasicTensor<T>& pixels,
                         LayerTrace<T>* trace = nullptr) const;

  const ProjectionWeights<T>& projections() const { return proj_; }

 private:
  BasicTensor<T> finish(const BasicTensor<T>& prototypes, const BasicTensor<T>& blended) const;

  SelfAttention<T> pre_attention_;
  ProjectionWeights<T> proj_;
  Linear<T> out_proj_;
  LayerNorm<T> cross_norm_;
  SelfAttention<T> post_attention_;
  FeedForward<T> ffn_;
};

template <typename T>
class ReliableMatcher {
 public:
  ReliableMatcher() = default;
  ReliableMatcher(ParameterSet<T>& ps, const std::string& name, const MatcherConfig& cfg, std::size_t width, Rng& rng);

  /// Evolves the learnable prototypes against pixel tokens [hw, C]; returns [N, C].
  BasicTensor<T> operator()(const BasicTensor<T>& pixels) const;

  const MatcherConfig& config() const { return cfg_; }
  const BasicTensor<T>& initial_prototypes() const { return prototypes_; }

 private:
  MatcherConfig cfg_;
  BasicTensor<T> prototypes_;
  std::vector<MatchingLayer<T>> layers_;
};

}  // namespace nf
