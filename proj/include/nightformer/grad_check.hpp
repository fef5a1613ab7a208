#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>

#include "nightformer/tensor.hpp"

namespace nf {

struct GradCheckReport {
  double max_rel_error = 0;  // max_i |a - n| / max(1e-8, |a| + |n|)
  double max_abs_error = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, std::size_t index) : std::runtime_error(what), index_(index) {}
  std::size_t index() const { return index_; }

 private:
  std::size_t index_;
};

/// Compares the tape gradient of `loss` with respect to `param` against
/// central differences (f(x + h e) - f(x - h e)) / 2h, perturbing `param`
/// in place one coordinate at a time. `loss` must rebuild the graph on each
/// call and return a scalar.
GradCheckReport grad_check_param(const std::function<Tensor()>& loss, Tensor& param, double h = 1e-5);

/// Same check for a scalar function of a single input tensor.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace nf
