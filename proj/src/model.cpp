#include "nightformer/model.hpp"

#include <cmath>
#include <stdexcept>

#include "nightformer/ops.hpp"

namespace nf {

template <typename T>
Backbone<T>::Backbone(ParameterSet<T>& ps, const std::string& name, const std::array<std::size_t, 4>& widths,
                      const std::array<std::size_t, 4>& strides, Rng& rng) {
  std::size_t cin = 3;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t stride = strides[s];
    const std::size_t kernel = stride == 2 ? 3 : stride;
    const std::size_t pad = stride == 2 ? 1 : 0;
    stages_[s] = Conv2d<T>(ps, name + ".stage" + std::to_string(s), kernel, cin, widths[s], stride, pad, rng);
    cin = widths[s];
    total_stride_ *= stride;
  }
}

template <typename T>
FeaturePyramid<T> Backbone<T>::operator()(const BasicTensor<T>& image) const {
  if (image.rank() != 3 || image.dim(2) != 3) throw ShapeError("backbone expects [H, W, 3], got " + shape_str(image.shape()));
  if (image.dim(0) % total_stride_ != 0 || image.dim(1) % total_stride_ != 0) {
    throw ShapeError("backbone: extents " + shape_str(image.shape()) + " not divisible by " +
                     std::to_string(total_stride_));
  }
  FeaturePyramid<T> fp;
  BasicTensor<T> x = image;
  for (const auto& conv : stages_) {
    x = relu(conv(x));
    fp.stages.push_back(x);
  }
  return fp;
}

template <typename T>
BasicTensor<T> segmentation_logits(const BasicTensor<T>& embedding, const BasicTensor<T>& prototypes) {
  if (embedding.rank() != 3 || prototypes.rank() != 2 || embedding.dim(2) != prototypes.dim(1)) {
    throw ShapeError("segmentation_logits: embedding " + shape_str(embedding.shape()) + " and prototypes " +
                     shape_str(prototypes.shape()) + " differ in width");
  }
  const std::size_t h = embedding.dim(0), w = embedding.dim(1);
  const BasicTensor<T> flat = matmul_nt(reshape(embedding, {h * w, embedding.dim(2)}), prototypes);
  return reshape(flat, {h, w, prototypes.dim(0)});
}

template <typename T>
NightFormer<T>::NightFormer(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.matcher.prototypes < cfg.num_classes) {
    throw std::invalid_argument("matcher.prototypes (" + std::to_string(cfg.matcher.prototypes) +
                                ") must be at least the number of classes (" + std::to_string(cfg.num_classes) + ")");
  }
  Rng rng(cfg.init_seed);
  backbone_ = Backbone<T>(params_, "backbone", cfg.backbone_widths, cfg.strides, rng);
  phase_encoder_ = PhaseEncoder<T>(params_, "phase_encoder", 3, cfg.phase_widths, cfg.strides, rng);
  decoder_ = HierarchicalDecoder<T>(params_, "decoder", cfg.decoder, cfg.backbone_widths, cfg.phase_widths, rng);
  matcher_ = ReliableMatcher<T>(params_, "matcher", cfg.matcher, cfg.decoder.channels, rng);
  class_head_ = Linear<T>(params_, "class_head", cfg.decoder.channels, cfg.num_classes + 1, rng);
}

template <typename T>
SegOutput<T> NightFormer<T>::forward(const BasicTensor<T>& image, const BasicTensor<T>& texture) const {
  const FeaturePyramid<T> features = backbone_(image);
  FeaturePyramid<T> phase;
  if (cfg_.texture != TextureMode::None) {
    if (texture.shape() != image.shape()) {
      throw ShapeError("texture " + shape_str(texture.shape()) + " does not match image " + shape_str(image.shape()));
    }
    phase.stages = phase_encoder_(texture);
  }
  const BasicTensor<T> embedding = decoder_(features, phase);
  const std::size_t h = embedding.dim(0), w = embedding.dim(1), c = embedding.dim(2);
  const BasicTensor<T> prototypes = matcher_(reshape(embedding, {h * w, c}));
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(c));
  return {scale(segmentation_logits(embedding, prototypes), inv_sqrt), class_head_(prototypes)};
}

template class Backbone<float>;
template class Backbone<double>;
template class NightFormer<float>;
template class NightFormer<double>;
template BasicTensor<float> segmentation_logits(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> segmentation_logits(const BasicTensor<double>&, const BasicTensor<double>&);

}  // namespace nf
