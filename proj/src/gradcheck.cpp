#include "csp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csp {

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps)
{
    Tensor probe = x;
    Tensor grad = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + eps;
        const double hi = f(probe);
        probe.data[i] = orig - eps;
        const double lo = f(probe);
        probe.data[i] = orig;
        grad.data[i] = (hi - lo) / (2.0 * eps);
    }
    return grad;
}

double worst_rel_error(const Tensor& analytic, const Tensor& numeric, double floor)
{
    if (!analytic.same_shape(numeric)) {
        throw std::invalid_argument("worst_rel_error: shape mismatch " + shape_str(analytic) +
                                    " vs " + shape_str(numeric));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic.data[i];
        const double n = numeric.data[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

} // namespace csp
