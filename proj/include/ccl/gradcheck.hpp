#pragma once

#include <functional>
#include <span>
#include <vector>

namespace ccl {

struct GradientReport {
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t param_count = 0;
};

// A scalar function of a flat parameter vector together with the gradient the
// implementation claims for it.
struct DiffFunction {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

// Compares the claimed gradient against central finite differences with the
// given step. Relative error uses |a - f| / max(|a|, |f|, 1e-8). Throws if the
// function is non-finite at any probe point.
GradientReport check_gradient(const DiffFunction& fn, std::span<const double> params, double step);

}  // namespace ccl
