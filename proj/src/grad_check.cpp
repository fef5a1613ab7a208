#include "nightformer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace nf {

GradCheckReport grad_check_param(const std::function<Tensor()>& loss, Tensor& param, double h) {
  const bool had_flag = param.requires_grad();
  param.set_requires_grad(true);
  std::vector<double> saved_grad(param.grad().begin(), param.grad().end());
  param.zero_grad();

  std::vector<double> analytic;
  {
    Tape<double> tape;
    const Tensor value = loss();
    if (!std::isfinite(value.item())) throw NonFiniteError("grad_check: loss is not finite at the base point", 0);
    tape.backward(value);
    if (param.has_grad()) {
      analytic.assign(param.grad().begin(), param.grad().end());
    } else {
      analytic.assign(param.size(), 0.0);
    }
  }

  GradCheckReport report;
  {
    NoTapeGuard<double> no_tape;
    double* x = param.mutable_ptr();
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + h;
      const double fp = loss().item();
      x[i] = orig - h;
      const double fm = loss().item();
      x[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NonFiniteError("grad_check: non-finite evaluation at coordinate " + std::to_string(i), i);
      }
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error || i == 0) {
        report.max_rel_error = std::max(report.max_rel_error, rel);
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }

  param.set_requires_grad(had_flag);
  if (saved_grad.empty()) {
    param.zero_grad();
  } else {
    std::copy(saved_grad.begin(), saved_grad.end(), param.mutable_grad().begin());
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor point = x.clone();
  return grad_check_param([&] { return f(point); }, point, h);
}

}  // namespace nf
