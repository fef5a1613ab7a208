#pragma once

#include <cstddef>
#include <vector>

#include "nightformer/tensor.hpp"

namespace nf {

struct MatchResult {
  /// prototype_of_segment[g] is the prototype assigned to ground-truth segment g.
  std::vector<std::size_t> prototype_of_segment;
  double total_cost = 0;

  /// Inverse view: segment index per prototype, or -1 for "no object".
  std::vector<int> segment_of_prototype(std::size_t num_prototypes) const;
};

/// Minimum-cost assignment of the G columns of cost[N, G] to distinct rows
/// (rectangular Kuhn-Munkres with potentials, O(G^2 N)). Requires G <= N and
/// finite costs.
MatchResult hungarian_match(const Tensor& cost);

}  // namespace nf
