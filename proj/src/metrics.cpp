#include "nightformer/metrics.hpp"

#include <numeric>
#include <stdexcept>
#include <string>

namespace nf {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelMask& pred, const LabelMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size()) {
    throw std::invalid_argument("prediction and ground truth masks differ in size");
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const std::size_t g = gt.labels[i], p = pred.labels[i];
    if (g >= n_ || p >= n_) {
      throw std::out_of_range("class index " + std::to_string(g >= n_ ? g : p) + " at pixel " + std::to_string(i) +
                              " outside [0, " + std::to_string(n_) + ")");
    }
  }
  for (std::size_t i = 0; i < gt.size(); ++i) ++counts_[gt.labels[i] * n_ + pred.labels[i]];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::optional<double> ConfusionMatrix::iou(std::size_t cls) const {
  const std::uint64_t tp = count(cls, cls);
  std::uint64_t fp = 0, fn = 0;
  for (std::size_t k = 0; k < n_; ++k) {
    if (k == cls) continue;
    fp += count(k, cls);
    fn += count(cls, k);
  }
  const std::uint64_t uni = tp + fp + fn;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

MiouResult miou(const ConfusionMatrix& cm) {
  MiouResult r;
  double total = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    r.per_class.push_back(cm.iou(c));
    if (r.per_class.back()) {
      total += *r.per_class.back();
      ++present;
    }
  }
  r.mean = present ? total / static_cast<double>(present) : 0.0;
  return r;
}

MiouResult miou(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return miou(cm);
}

}  // namespace nf
