#pragma once

#include <functional>

#include "csp/tensor.hpp"

namespace csp {

// Central-difference gradient estimate of a scalar function, element by
// element: (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

// Worst relative error between an analytic gradient and its finite-difference
// estimate: |a - f| / max(|a|, |f|, floor).
double worst_rel_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-4);

} // namespace csp
