#include "nightformer/hungarian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace nf {

std::vector<int> MatchResult::segment_of_prototype(std::size_t num_prototypes) const {
  std::vector<int> out(num_prototypes, -1);
  for (std::size_t g = 0; g < prototype_of_segment.size(); ++g) out[prototype_of_segment[g]] = static_cast<int>(g);
  return out;
}

MatchResult hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) throw ShapeError("hungarian_match expects a [N, G] cost matrix, got " + shape_str(cost.shape()));
  const std::size_t num_protos = cost.dim(0);
  const std::size_t num_segments = cost.dim(1);
  if (num_segments > num_protos) {
    throw std::invalid_argument("hungarian_match: " + std::to_string(num_segments) + " segments but only " +
                                std::to_string(num_protos) + " prototypes");
  }
  for (double c : cost.data()) {
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
  }

  // Rows are segments (n), columns are prototypes (m >= n); index 0 is a sentinel.
  const std::size_t n = num_segments, m = num_protos;
  auto a = [&](std::size_t row, std::size_t col) { return cost[(col - 1) * num_segments + (row - 1)]; };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = owner[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  MatchResult result;
  result.prototype_of_segment.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (owner[j] != 0) result.prototype_of_segment[owner[j] - 1] = j - 1;
  }
  for (std::size_t g = 0; g < n; ++g) result.total_cost += cost[result.prototype_of_segment[g] * num_segments + g];
  return result;
}

}  // namespace nf
