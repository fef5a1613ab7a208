#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "nightformer/label_mask.hpp"

namespace nf {

/// counts[gt][pred] over evaluated pixels.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  /// Throws std::out_of_range on a class index >= num_classes, and
  /// std::invalid_argument on a size mismatch.
  void add(const LabelMask& pred, const LabelMask& gt);

  std::uint64_t count(std::size_t gt, std::size_t pred) const { return counts_[gt * n_ + pred]; }
  std::uint64_t total() const;
  std::size_t num_classes() const { return n_; }

  /// tp / (tp + fp + fn); empty when the class occurs in neither mask.
  std::optional<double> iou(std::size_t cls) const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

struct MiouResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0;  // over classes present in prediction or ground truth
};

MiouResult miou(const ConfusionMatrix& cm);
MiouResult miou(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes);

}  // namespace nf
