#pragma once

#include <functional>
#include <vector>

#include "percep_tl/autodiff/tensor.hpp"

namespace percep::ad {

using ScalarFn = std::function<Tensor(const Tensor&)>;

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

// Compares reverse-mode gradients of f at `point` with central differences.
// Error per component is |analytic - numeric| / max(1, |analytic|).
GradCheckResult gradient_check_detailed(const ScalarFn& f, const Tensor& point, double step);

double gradient_check(const ScalarFn& f, const Tensor& point, double step);

}  // namespace percep::ad
