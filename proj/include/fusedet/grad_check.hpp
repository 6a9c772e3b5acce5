#pragma once

#include <cstddef>
#include <functional>

#include "fusedet/tensor.hpp"

namespace fusedet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

// |a - n| / max(|a|, |n|, 1e-12)
double relative_error(double analytic, double numeric);

// Central differences of a scalar function around `point`, compared elementwise
// with `analytic` (same shape as point).
GradCheckReport grad_check(const std::function<double(const Tensor&)>& loss, const Tensor& point,
                           const Tensor& analytic, double h, double tol);

// Central differences of a vector-valued function contracted with `upstream`:
// numeric_j = sum_i upstream_i * (f(x + h e_j)_i - f(x - h e_j)_i) / 2h.
// Output differences are taken elementwise before the contraction, so outputs
// that do not depend on x_j contribute exactly zero.
GradCheckReport grad_check_vjp(const std::function<Tensor(const Tensor&)>& op, const Tensor& point,
                               const Tensor& upstream, const Tensor& analytic, double h,
                               double tol);

}  // namespace fusedet
