#pragma once

// Pixel-level texture enhancement: project backbone and phase features to a
// common width, weight pixels by the amplified map sum_c (F + phi)^2, mix
// pixels with self-attention, and fuse stages coarse to fine.

#include <array>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "nightformer/nn.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

/// Backbone stages ordered fine to coarse: index 0 is F2, index 3 is F5.
/// Each coarser stage has exactly half the spatial extents of the previous.
template <typename T>
struct FeaturePyramid {
  std::vector<BasicTensor<T>> stages;

  void validate() const;
};

inline constexpr std::size_t kAttentionTokenBudget = 4096;

struct DecoderConfig {
  std::size_t depth = 4;  // 1..4 stages fused, starting from F5
  std::size_t channels = 64;
  bool normalize_amp_map = true;
};

/// Two independent 1x1 projections of F[h,w,c1] and phi[h,w,c2] to width C.
template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> project_common(const BasicTensor<T>& features, const BasicTensor<T>& phase,
                                                         const Linear<T>& feature_proj, const Linear<T>& phase_proj);

/// Per-pixel 1x1 projection of x[h, w, c] to [h, w, out].
template <typename T>
BasicTensor<T> project_pixels(const BasicTensor<T>& x, const Linear<T>& proj);

/// Raw amplified map A[i,j] = sum_c (F[i,j,c] + phi[i,j,c])^2.
template <typename T>
BasicTensor<T> amplified_map(const BasicTensor<T>& features, const BasicTensor<T>& phase);

/// F[h,w,c] with each pixel scaled by A[h,w].
template <typename T>
BasicTensor<T> amplify(const BasicTensor<T>& features, const BasicTensor<T>& amp);

/// Flattens x[h,w,C] to h*w tokens, applies `attn`, and restores the layout.
template <typename T>
BasicTensor<T> self_attention_block(const BasicTensor<T>& x, const SelfAttention<T>& attn,
                                    std::size_t token_budget = kAttentionTokenBudget);

template <typename T>
class HierarchicalDecoder {
 public:
  HierarchicalDecoder() = default;
  HierarchicalDecoder(ParameterSet<T>& ps, const std::string& name, const DecoderConfig& cfg,
                      const std::array<std::size_t, 4>& feature_widths, const std::array<std::size_t, 4>& phase_widths,
                      Rng& rng);

  /// Returns E at F2 resolution. An empty phase pyramid means the phase
  /// branch is disabled and the amplified map uses the features alone.
  BasicTensor<T> operator()(const FeaturePyramid<T>& features, const FeaturePyramid<T>& phase) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  std::array<Linear<T>, 4> feature_proj_;
  std::array<Linear<T>, 4> phase_proj_;
  std::array<SelfAttention<T>, 4> attention_;
};

}  // namespace nf
