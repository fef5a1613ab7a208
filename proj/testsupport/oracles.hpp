#pragma once

// Independent reference implementations used only for verification. They
// favor obviously-correct loops over speed and share no code with the
// library paths they check.

#include <cstddef>
#include <span>
#include <vector>

#include "nightformer/label_mask.hpp"
#include "nightformer/tensor.hpp"

namespace nf::oracle {

/// c[i, j] = sum_p a[i, p] b[p, j], accumulated in long double.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Direct cross-correlation with explicit zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding);

/// Minimum total cost over every injective segment -> prototype map of cost[N, G].
struct Assignment {
  double total = 0;
  std::vector<std::size_t> prototype_of_segment;
  std::size_t optima = 0;  // how many assignments reach the minimum (within 1e-12)
};
Assignment exhaustive_assignment(const Tensor& cost);

double bce_with_logits(std::span<const double> logits, std::span<const double> target);
double dice(std::span<const double> prob, std::span<const double> target, double eps);
double cross_entropy(const Tensor& logits, std::span<const int> targets);

/// Per-pixel enumeration of sum_n softmax(class)[n, c] sigmoid(M[., ., n]).
LabelMask predict(const Tensor& mask_logits, const Tensor& class_logits);

/// Indices of the k largest scores by a stable sort on descending score.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

/// IoU per class counted pixel by pixel from set intersections and unions.
std::vector<double> iou_by_sets(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes);

}  // namespace nf::oracle
