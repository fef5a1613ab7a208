#pragma once

// Mask-classification supervision: ground truth is split into one binary
// segment per present class, segments are matched to prototypes by minimum
// cost, matched prototypes get BCE + dice on their masks, and every prototype
// gets a cross-entropy class target ("no object" when unmatched).

#include <cstddef>
#include <vector>

#include "nightformer/hungarian.hpp"
#include "nightformer/label_mask.hpp"
#include "nightformer/model.hpp"
#include "nightformer/tensor.hpp"

namespace nf {

struct LossWeights {
  double cls = 2.0;
  double bce = 5.0;
  double dice = 5.0;
  double dice_eps = 1.0;
};

struct Segment {
  int cls = 0;
  std::vector<double> mask;  // binary, one entry per pixel
};

/// One segment per class present in the mask, in ascending class order.
/// A mask made of a single class yields a single segment.
std::vector<Segment> decompose_segments(const LabelMask& gt, std::size_t num_classes);

/// Bilinear 2x steps until logits[h, w, N] reach [height, width, N].
template <typename T>
BasicTensor<T> upsample_logits_to(const BasicTensor<T>& logits, std::size_t height, std::size_t width);

/// Matching cost [N, G] evaluated in double without recording gradients.
template <typename T>
Tensor matching_cost(const BasicTensor<T>& mask_logits, const BasicTensor<T>& class_logits,
                     const std::vector<Segment>& segments, const LossWeights& w);

struct LossBreakdown {
  double total = 0;
  double bce = 0;   // summed over matched segments, unweighted
  double dice = 0;  // summed over matched segments, unweighted
  double ce = 0;    // mean over prototypes, unweighted
  MatchResult match;
};

/// Scalar training loss for one sample. mask_logits must already be at the
/// mask resolution (see upsample_logits_to).
template <typename T>
BasicTensor<T> total_loss(const SegOutput<T>& out, const LabelMask& gt, std::size_t num_classes,
                          const LossWeights& w = {}, LossBreakdown* breakdown = nullptr);

/// Per-pixel argmax over real classes of sum_n softmax(class)[n, c] * sigmoid(M[., ., n]).
/// Ties go to the lowest class index.
template <typename T>
LabelMask predict(const SegOutput<T>& out);

}  // namespace nf
