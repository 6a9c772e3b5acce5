#include "fusedet/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace fusedet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void record(GradCheckReport& r, std::size_t j, double a, double n) {
  const double e = relative_error(a, n);
  if (r.checked == 0 || e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_index = j;
    r.worst_analytic = a;
    r.worst_numeric = n;
  }
  ++r.checked;
}

}  // namespace

GradCheckReport grad_check(const std::function<double(const Tensor&)>& loss, const Tensor& point,
                           const Tensor& analytic, double h, double tol) {
  require_same_shape(point, analytic, "grad_check");
  GradCheckReport r;
  Tensor x = point;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    const double lp = loss(x);
    x[j] = orig - h;
    const double lm = loss(x);
    x[j] = orig;
    record(r, j, analytic[j], (lp - lm) / (2.0 * h));
  }
  r.passed = r.max_rel_error <= tol;
  return r;
}

GradCheckReport grad_check_vjp(const std::function<Tensor(const Tensor&)>& op, const Tensor& point,
                               const Tensor& upstream, const Tensor& analytic, double h,
                               double tol) {
  require_same_shape(point, analytic, "grad_check_vjp");
  GradCheckReport r;
  Tensor x = point;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = x[j];
    x[j] = orig + h;
    const Tensor yp = op(x);
    x[j] = orig - h;
    const Tensor ym = op(x);
    x[j] = orig;
    require_same_shape(yp, upstream, "grad_check_vjp upstream");
    double s = 0.0;
    for (std::size_t i = 0; i < yp.size(); ++i) {
      const double d = yp[i] - ym[i];
      if (d != 0.0) s += upstream[i] * d;
    }
    record(r, j, analytic[j], s / (2.0 * h));
  }
  r.passed = r.max_rel_error <= tol;
  return r;
}

}  // namespace fusedet
