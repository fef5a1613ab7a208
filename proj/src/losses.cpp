#include "nightformer/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "nightformer/ops.hpp"

namespace nf {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid_d(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

template <typename T>
void check_output(const SegOutput<T>& out, std::size_t num_classes) {
  if (out.mask_logits.rank() != 3 || out.class_logits.rank() != 2) {
    throw ShapeError("segmentation output expects mask logits [h, w, N] and class logits [N, K+1], got " +
                     shape_str(out.mask_logits.shape()) + " and " + shape_str(out.class_logits.shape()));
  }
  if (out.mask_logits.dim(2) != out.class_logits.dim(0)) {
    throw ShapeError("prototype count differs between mask logits " + shape_str(out.mask_logits.shape()) +
                     " and class logits " + shape_str(out.class_logits.shape()));
  }
  if (num_classes != 0 && out.class_logits.dim(1) != num_classes + 1) {
    throw ShapeError("class logits " + shape_str(out.class_logits.shape()) + " do not have " +
                     std::to_string(num_classes) + " classes plus no-object");
  }
}

}  // namespace

std::vector<Segment> decompose_segments(const LabelMask& gt, std::size_t num_classes) {
  std::vector<Segment> segs;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt.labels[i] >= num_classes) {
      throw std::out_of_range("class index " + std::to_string(gt.labels[i]) + " at pixel " + std::to_string(i) +
                              " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    Segment s{static_cast<int>(c), std::vector<double>(gt.size(), 0.0)};
    bool any = false;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.labels[i] == c) {
        s.mask[i] = 1.0;
        any = true;
      }
    }
    if (any) segs.push_back(std::move(s));
  }
  return segs;
}

template <typename T>
BasicTensor<T> upsample_logits_to(const BasicTensor<T>& logits, std::size_t height, std::size_t width) {
  if (logits.rank() != 3) throw ShapeError("upsample_logits_to expects [h, w, N], got " + shape_str(logits.shape()));
  BasicTensor<T> x = logits;
  while (x.dim(0) < height && x.dim(1) < width) x = upsample_bilinear2x(x);
  if (x.dim(0) != height || x.dim(1) != width) {
    throw ShapeError("cannot reach " + std::to_string(height) + "x" + std::to_string(width) + " from " +
                     shape_str(logits.shape()) + " by 2x steps");
  }
  return x;
}

template <typename T>
Tensor matching_cost(const BasicTensor<T>& mask_logits, const BasicTensor<T>& class_logits,
                     const std::vector<Segment>& segments, const LossWeights& w) {
  const std::size_t n = mask_logits.dim(2);
  const std::size_t hw = mask_logits.dim(0) * mask_logits.dim(1);
  const std::size_t k1 = class_logits.dim(1);
  Tensor cost({n, segments.size()});
  for (const Segment& s : segments) {
    if (s.mask.size() != hw) throw ShapeError("segment size differs from mask logits " + shape_str(mask_logits.shape()));
  }

  const T* m = mask_logits.ptr();
  const T* cl = class_logits.ptr();
  std::vector<double> prob(k1);
  for (std::size_t p = 0; p < n; ++p) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k1; ++c) mx = std::max(mx, static_cast<double>(cl[p * k1 + c]));
    double z = 0;
    for (std::size_t c = 0; c < k1; ++c) z += prob[c] = std::exp(static_cast<double>(cl[p * k1 + c]) - mx);
    for (double& v : prob) v /= z;

    double sp = 0, sig_sum = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      const double x = m[i * n + p];
      sp += softplus(x);
      sig_sum += sigmoid_d(x);
    }
    for (std::size_t g = 0; g < segments.size(); ++g) {
      const auto& t = segments[g].mask;
      double xt = 0, pt = 0, tsum = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double x = m[i * n + p];
        xt += x * t[i];
        pt += sigmoid_d(x) * t[i];
        tsum += t[i];
      }
      const double bce = (sp - xt) / static_cast<double>(hw);
      const double dice = 1.0 - (2.0 * pt + w.dice_eps) / (sig_sum + tsum + w.dice_eps);
      cost.mutable_data()[p * segments.size() + g] = -w.cls * prob[static_cast<std::size_t>(segments[g].cls)] + w.bce * bce + w.dice * dice;
    }
  }
  return cost;
}

template <typename T>
BasicTensor<T> total_loss(const SegOutput<T>& out, const LabelMask& gt, std::size_t num_classes, const LossWeights& w,
                          LossBreakdown* breakdown) {
  check_output(out, num_classes);
  const std::size_t h = out.mask_logits.dim(0), wd = out.mask_logits.dim(1), n = out.mask_logits.dim(2);
  if (gt.height != h || gt.width != wd) {
    throw ShapeError("ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " does not match mask logits " + shape_str(out.mask_logits.shape()));
  }
  const std::vector<Segment> segments = decompose_segments(gt, num_classes);
  if (segments.size() > n) {
    throw std::invalid_argument(std::to_string(segments.size()) + " ground-truth segments exceed " +
                                std::to_string(n) + " prototypes");
  }
  MatchResult match;
  {
    NoTapeGuard<T> no_tape;
    match = hungarian_match(matching_cost(out.mask_logits, out.class_logits, segments, w));
  }

  // Prototype masks as rows [N, hw] so a matched prototype is one gathered row.
  const BasicTensor<T> rows = transpose(reshape(out.mask_logits, {h * wd, n}));
  BasicTensor<T> mask_term;
  double bce_sum = 0, dice_sum = 0;
  for (std::size_t g = 0; g < segments.size(); ++g) {
    const std::size_t pick[1] = {match.prototype_of_segment[g]};
    const BasicTensor<T> logits = gather_rows(rows, std::span<const std::size_t>(pick));
    BasicTensor<T> target({1, h * wd});
    std::transform(segments[g].mask.begin(), segments[g].mask.end(), target.mutable_data().begin(),
                   [](double v) { return static_cast<T>(v); });
    const BasicTensor<T> bce = bce_with_logits(logits, target);
    const BasicTensor<T> dice = dice_loss(sigmoid(logits), target, static_cast<T>(w.dice_eps));
    bce_sum += static_cast<double>(bce.item());
    dice_sum += static_cast<double>(dice.item());
    const BasicTensor<T> term = add(scale(bce, static_cast<T>(w.bce)), scale(dice, static_cast<T>(w.dice)));
    mask_term = g == 0 ? term : add(mask_term, term);
  }

  std::vector<int> targets(n, static_cast<int>(num_classes));
  for (std::size_t g = 0; g < segments.size(); ++g) targets[match.prototype_of_segment[g]] = segments[g].cls;
  const BasicTensor<T> ce = cross_entropy(out.class_logits, std::span<const int>(targets));
  const BasicTensor<T> scalar = add(reshape(mask_term, {1}), reshape(scale(ce, static_cast<T>(w.cls)), {1}));

  if (breakdown) {
    breakdown->total = static_cast<double>(scalar.item());
    breakdown->bce = bce_sum;
    breakdown->dice = dice_sum;
    breakdown->ce = static_cast<double>(ce.item());
    breakdown->match = match;
  }
  return scalar;
}

template <typename T>
LabelMask predict(const SegOutput<T>& out) {
  check_output(out, 0);
  const std::size_t h = out.mask_logits.dim(0), wd = out.mask_logits.dim(1), n = out.mask_logits.dim(2);
  const std::size_t k1 = out.class_logits.dim(1);
  if (k1 < 2) throw ShapeError("class logits need at least one real class plus no-object");
  const std::size_t k = k1 - 1;

  std::vector<double> cls(n * k1);
  const T* cl = out.class_logits.ptr();
  for (std::size_t p = 0; p < n; ++p) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < k1; ++c) mx = std::max(mx, static_cast<double>(cl[p * k1 + c]));
    double z = 0;
    for (std::size_t c = 0; c < k1; ++c) z += cls[p * k1 + c] = std::exp(static_cast<double>(cl[p * k1 + c]) - mx);
    for (std::size_t c = 0; c < k1; ++c) cls[p * k1 + c] /= z;
  }

  LabelMask mask(h, wd);
  const T* m = out.mask_logits.ptr();
  std::vector<double> sig(n), score(k);
  for (std::size_t i = 0; i < h * wd; ++i) {
    for (std::size_t p = 0; p < n; ++p) sig[p] = sigmoid_d(static_cast<double>(m[i * n + p]));
    std::fill(score.begin(), score.end(), 0.0);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t c = 0; c < k; ++c) score[c] += cls[p * k1 + c] * sig[p];
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (score[c] > score[best]) best = c;
    mask.labels[i] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

#define NF_INSTANTIATE_LOSSES(T)                                                                           \
  template BasicTensor<T> upsample_logits_to(const BasicTensor<T>&, std::size_t, std::size_t);            \
  template Tensor matching_cost(const BasicTensor<T>&, const BasicTensor<T>&, const std::vector<Segment>&, \
                                const LossWeights&);                                                       \
  template BasicTensor<T> total_loss(const SegOutput<T>&, const LabelMask&, std::size_t, const LossWeights&, \
                                     LossBreakdown*);                                                      \
  template LabelMask predict(const SegOutput<T>&);

NF_INSTANTIATE_LOSSES(float)
NF_INSTANTIATE_LOSSES(double)

}  // namespace nf
