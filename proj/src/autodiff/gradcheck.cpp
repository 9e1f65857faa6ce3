#include "percep_tl/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "percep_tl/error.hpp"

namespace percep::ad {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
    const Tensor y = f(x);
    if (y.numel() != 1) {
        throw ShapeError("gradient_check: f must be scalar-valued, got shape " + to_string(y.shape()));
    }
    const double v = y.item();
    if (!std::isfinite(v)) {
        throw Error("gradient_check: f is not finite at the evaluation point");
    }
    return v;
}

}  // namespace

GradCheckResult gradient_check_detailed(const ScalarFn& f, const Tensor& point, double step) {
    if (!(step > 0.0)) {
        throw ConfigError("gradient_check: step must be positive");
    }
    for (double v : point.values()) {
        if (!std::isfinite(v)) {
            throw Error("gradient_check: point has non-finite components");
        }
    }
    GradCheckResult result;
    {
        const Tensor x = Tensor::from(point.shape(), {point.values().begin(), point.values().end()}, true);
        const Tensor y = f(x);
        evaluate([&](const Tensor&) { return y; }, x);
        if (y.requires_grad()) {
            backpropagate(y);
        }
        result.analytic = x.grad();
    }
    std::vector<double> base(point.values().begin(), point.values().end());
    result.numeric.resize(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        auto plus = base;
        auto minus = base;
        plus[i] += step;
        minus[i] -= step;
        const double fp = evaluate(f, Tensor::from(point.shape(), std::move(plus)));
        const double fm = evaluate(f, Tensor::from(point.shape(), std::move(minus)));
        result.numeric[i] = (fp - fm) / (2.0 * step);
        const double a = result.analytic[i];
        const double err = std::fabs(a - result.numeric[i]) / std::max(1.0, std::fabs(a));
        result.max_relative_error = std::max(result.max_relative_error, err);
    }
    return result;
}

double gradient_check(const ScalarFn& f, const Tensor& point, double step) {
    return gradient_check_detailed(f, point, step).max_relative_error;
}

}  // namespace percep::ad
