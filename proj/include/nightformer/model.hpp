#pragma once

// Full segmentation network: strided backbone stub and phase encoder feed
// the hierarchical amplified decoder; its high-resolution output E is both
// the pixel tokens for the prototype matcher and the embedding that the
// evolved prototypes classify (M = E P~^T).

#include <array>
#include <cstdint>
#include <memory>
#include <string>

#include "nightformer/amplified_decoder.hpp"
#include "nightformer/nn.hpp"
#include "nightformer/phase_texture.hpp"
#include "nightformer/reliable_matching.hpp"

namespace nf {

template <typename T>
struct SegOutput {
  BasicTensor<T> mask_logits;   // [h, w, N]
  BasicTensor<T> class_logits;  // [N, num_classes + 1]; last slot is "no object"
};

struct ModelConfig {
  std::size_t num_classes = 4;
  std::array<std::size_t, 4> backbone_widths{16, 32, 48, 64};
  std::array<std::size_t, 4> strides{4, 2, 2, 2};
  std::array<std::size_t, 4> phase_widths{8, 16, 24, 32};
  TextureMode texture = TextureMode::Phase;
  DecoderConfig decoder;
  MatcherConfig matcher;
  std::uint64_t init_seed = 7;

  std::size_t total_stride() const { return strides[0] * strides[1] * strides[2] * strides[3]; }
};

/// Four conv+ReLU stages with the given strides; stages ordered F2..F5.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(ParameterSet<T>& ps, const std::string& name, const std::array<std::size_t, 4>& widths,
           const std::array<std::size_t, 4>& strides, Rng& rng);

  FeaturePyramid<T> operator()(const BasicTensor<T>& image) const;

 private:
  std::array<Conv2d<T>, 4> stages_;
  std::size_t total_stride_ = 1;
};

/// M[i, j, n] = <E[i, j, :], P~[n, :]>.
template <typename T>
BasicTensor<T> segmentation_logits(const BasicTensor<T>& embedding, const BasicTensor<T>& prototypes);

template <typename T>
class NightFormer {
 public:
  explicit NightFormer(const ModelConfig& cfg);
  NightFormer(const NightFormer&) = delete;
  NightFormer& operator=(const NightFormer&) = delete;

  /// image and texture are [H, W, 3]; texture is ignored in TextureMode::None.
  SegOutput<T> forward(const BasicTensor<T>& image, const BasicTensor<T>& texture) const;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  const Backbone<T>& backbone() const { return backbone_; }
  const PhaseEncoder<T>& phase_encoder() const { return phase_encoder_; }
  const HierarchicalDecoder<T>& decoder() const { return decoder_; }
  const ReliableMatcher<T>& matcher() const { return matcher_; }
  const Linear<T>& class_head() const { return class_head_; }

 private:
  ModelConfig cfg_;
  ParameterSet<T> params_;
  Backbone<T> backbone_;
  PhaseEncoder<T> phase_encoder_;
  HierarchicalDecoder<T> decoder_;
  ReliableMatcher<T> matcher_;
  Linear<T> class_head_;
};

}  // namespace nf
