#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace nf::oracle {

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw std::invalid_argument("oracle::matmul: inner extents differ");
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      long double acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a.at({i, p})) * b.at({p, j});
      c.mutable_data()[i * n + j] = static_cast<double>(acc);
    }
  }
  return c;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(3);
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1, wo = (wd + 2 * padding - kw) / stride + 1;
  Tensor out({ho, wo, cout});
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        long double acc = 0;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(padding);
            const long long ix = static_cast<long long>(ox * stride + kx) - static_cast<long long>(padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<long long>(h) || ix >= static_cast<long long>(wd)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              acc += static_cast<long double>(x.at({static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci})) *
                     w.at({ky, kx, ci, co});
          }
        out.mutable_data()[(oy * wo + ox) * cout + co] = static_cast<double>(acc);
      }
  return out;
}

Assignment exhaustive_assignment(const Tensor& cost) {
  const std::size_t n = cost.dim(0), g = cost.dim(1);
  if (g > n) throw std::invalid_argument("oracle: more segments than prototypes");
  Assignment best;
  best.total = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> current(g);
  std::vector<char> used(n, 0);
  // Depth-first over segments; each picks an unused prototype.
  auto recurse = [&](auto&& self, std::size_t seg, double acc) -> void {
    if (seg == g) {
      if (acc < best.total - 1e-12) {
        best.total = acc;
        best.prototype_of_segment = current;
        best.optima = 1;
      } else if (std::abs(acc - best.total) <= 1e-12) {
        ++best.optima;
      }
      return;
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (used[p]) continue;
      used[p] = 1;
      current[seg] = p;
      self(self, seg + 1, acc + cost.at({p, seg}));
      used[p] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  return best;
}

double bce_with_logits(std::span<const double> logits, std::span<const double> target) {
  long double acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(logits[i])));
    acc += -(target[i] * std::log(p) + (1 - target[i]) * std::log(1 - p));
  }
  return static_cast<double>(acc / logits.size());
}

double dice(std::span<const double> prob, std::span<const double> target, double eps) {
  long double inter = 0, ps = 0, ts = 0;
  for (std::size_t i = 0; i < prob.size(); ++i) {
    inter += static_cast<long double>(prob[i]) * target[i];
    ps += prob[i];
    ts += target[i];
  }
  return static_cast<double>(1 - (2 * inter + eps) / (ps + ts + eps));
}

double cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t r = logits.dim(0), k = logits.dim(1);
  long double acc = 0;
  for (std::size_t i = 0; i < r; ++i) {
    long double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<long double>(logits.at({i, j})));
    acc += -std::log(std::exp(static_cast<long double>(logits.at({i, static_cast<std::size_t>(targets[i])}))) / z);
  }
  return static_cast<double>(acc / r);
}

LabelMask predict(const Tensor& mask_logits, const Tensor& class_logits) {
  const std::size_t h = mask_logits.dim(0), w = mask_logits.dim(1), n = mask_logits.dim(2);
  const std::size_t k = class_logits.dim(1) - 1;
  LabelMask out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::vector<long double> score(k, 0);
      for (std::size_t p = 0; p < n; ++p) {
        long double z = 0;
        for (std::size_t c = 0; c <= k; ++c) z += std::exp(static_cast<long double>(class_logits.at({p, c})));
        const long double sig = 1.0L / (1.0L + std::exp(-static_cast<long double>(mask_logits.at({y, x, p}))));
        for (std::size_t c = 0; c < k; ++c) score[c] += std::exp(static_cast<long double>(class_logits.at({p, c}))) / z * sig;
      }
      std::size_t best = 0;
      for (std::size_t c = 0; c < k; ++c)
        if (score[c] > score[best]) best = c;
      out.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return out;
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(k);
  return idx;
}

std::vector<double> iou_by_sets(const LabelMask& pred, const LabelMask& gt, std::size_t num_classes) {
  std::vector<double> out(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const bool in_p = pred.labels[i] == c, in_g = gt.labels[i] == c;
      inter += in_p && in_g;
      uni += in_p || in_g;
    }
    if (uni) out[c] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

}  // namespace nf::oracle
