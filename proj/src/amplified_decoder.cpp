#include "nightformer/amplified_decoder.hpp"

#include <stdexcept>

#include "nightformer/ops.hpp"

namespace nf {

template <typename T>
void FeaturePyramid<T>::validate() const {
  if (stages.empty() || stages.size() > 4) throw ShapeError("feature pyramid needs 1 to 4 stages");
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].rank() != 3) throw ShapeError("pyramid stage " + std::to_string(s) + " is not [h, w, c]");
    if (s == 0) continue;
    const auto& fine = stages[s - 1];
    const auto& coarse = stages[s];
    if (fine.dim(0) != 2 * coarse.dim(0) || fine.dim(1) != 2 * coarse.dim(1)) {
      throw ShapeError("pyramid stage " + std::to_string(s - 1) + " " + shape_str(fine.shape()) +
                       " is not twice stage " + std::to_string(s) + " " + shape_str(coarse.shape()));
    }
  }
}

template <typename T>
BasicTensor<T> project_pixels(const BasicTensor<T>& x, const Linear<T>& proj) {
  if (x.rank() != 3) throw ShapeError("project_pixels expects [h, w, c], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1);
  const BasicTensor<T> rows = proj(reshape(x, {h * w, x.dim(2)}));
  return reshape(rows, {h, w, rows.dim(1)});
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> project_common(const BasicTensor<T>& features, const BasicTensor<T>& phase,
                                                         const Linear<T>& feature_proj, const Linear<T>& phase_proj) {
  if (features.rank() != 3 || phase.rank() != 3 || features.dim(0) != phase.dim(0) ||
      features.dim(1) != phase.dim(1)) {
    throw ShapeError("project_common: spatial extents differ, " + shape_str(features.shape()) + " vs " +
                     shape_str(phase.shape()));
  }
  return {project_pixels(features, feature_proj), project_pixels(phase, phase_proj)};
}

template <typename T>
BasicTensor<T> amplified_map(const BasicTensor<T>& features, const BasicTensor<T>& phase) {
  if (features.shape() != phase.shape()) {
    throw ShapeError("amplified_map: " + shape_str(features.shape()) + " vs " + shape_str(phase.shape()));
  }
  return row_sum_squares(add(features, phase));
}

template <typename T>
BasicTensor<T> amplify(const BasicTensor<T>& features, const BasicTensor<T>& amp) {
  if (features.rank() != 3 || amp.rank() != 2 || amp.dim(0) != features.dim(0) || amp.dim(1) != features.dim(1)) {
    throw ShapeError("amplify: map " + shape_str(amp.shape()) + " does not cover features " +
                     shape_str(features.shape()));
  }
  return scale_rows(features, amp);
}

template <typename T>
BasicTensor<T> self_attention_block(const BasicTensor<T>& x, const SelfAttention<T>& attn, std::size_t token_budget) {
  if (x.rank() != 3) throw ShapeError("self_attention_block expects [h, w, C], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  if (h * w > token_budget) {
    throw std::invalid_argument("self_attention_block: " + std::to_string(h * w) + " tokens exceed budget of " +
                                std::to_string(token_budget));
  }
  return reshape(attn(reshape(x, {h * w, c})), {h, w, c});
}

template <typename T>
HierarchicalDecoder<T>::HierarchicalDecoder(ParameterSet<T>& ps, const std::string& name, const DecoderConfig& cfg,
                                            const std::array<std::size_t, 4>& feature_widths,
                                            const std::array<std::size_t, 4>& phase_widths, Rng& rng)
    : cfg_(cfg) {
  if (cfg.depth < 1 || cfg.depth > 4) throw std::invalid_argument("decoder.depth must be in 1..4");
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = name + ".F" + std::to_string(s + 2);
    feature_proj_[s] = Linear<T>(ps, stage + ".proj_feature", feature_widths[s], cfg.channels, rng);
    phase_proj_[s] = Linear<T>(ps, stage + ".proj_phase", phase_widths[s], cfg.channels, rng);
    attention_[s] = SelfAttention<T>(ps, stage + ".attn", cfg.channels, rng);
  }
}

template <typename T>
BasicTensor<T> HierarchicalDecoder<T>::operator()(const FeaturePyramid<T>& features,
                                                   const FeaturePyramid<T>& phase) const {
  features.validate();
  if (features.stages.size() != 4) throw ShapeError("decoder needs all four backbone stages");
  const bool use_phase = !phase.stages.empty();
  if (use_phase) {
    phase.validate();
    if (phase.stages.size() != 4) throw ShapeError("decoder needs four phase stages");
    for (std::size_t s = 0; s < 4; ++s) {
      const auto& f = features.stages[s];
      const auto& p = phase.stages[s];
      if (f.dim(0) != p.dim(0) || f.dim(1) != p.dim(1)) {
        throw ShapeError("phase stage F" + std::to_string(s + 2) + " " + shape_str(p.shape()) +
                         " misaligned with backbone stage " + shape_str(f.shape()));
      }
    }
  }

  BasicTensor<T> x;
  const std::size_t coarsest = 3;
  const std::size_t last_fused = 4 - cfg_.depth;
  for (std::size_t level = coarsest + 1; level-- > last_fused;) {
    const BasicTensor<T> projected = project_pixels(features.stages[level], feature_proj_[level]);
    x = level == coarsest ? projected : add(upsample_bilinear2x(x), projected);
    BasicTensor<T> amp = use_phase ? amplified_map(x, project_pixels(phase.stages[level], phase_proj_[level]))
                                   : row_sum_squares(x);
    if (cfg_.normalize_amp_map) amp = normalize_unit_mean(amp, T(1e-6));
    x = self_attention_block(amplify(x, amp), attention_[level]);
  }
  for (std::size_t level = last_fused; level > 0; --level) x = upsample_bilinear2x(x);
  return x;
}

#define NF_INSTANTIATE_DECODER(T)                                                                                  \
  template struct FeaturePyramid<T>;                                                                               \
  template class HierarchicalDecoder<T>;                                                                           \
  template BasicTensor<T> project_pixels(const BasicTensor<T>&, const Linear<T>&);                                \
  template std::pair<BasicTensor<T>, BasicTensor<T>> project_common(const BasicTensor<T>&, const BasicTensor<T>&, \
                                                                    const Linear<T>&, const Linear<T>&);           \
  template BasicTensor<T> amplified_map(const BasicTensor<T>&, const BasicTensor<T>&);                            \
  template BasicTensor<T> amplify(const BasicTensor<T>&, const BasicTensor<T>&);                                  \
  template BasicTensor<T> self_attention_block(const BasicTensor<T>&, const SelfAttention<T>&, std::size_t);

NF_INSTANTIATE_DECODER(float)
NF_INSTANTIATE_DECODER(double)

}  // namespace nf
