#include "ccl/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace ccl {

GradientReport check_gradient(const DiffFunction& fn, std::span<const double> params, double step) {
    if (!(step > 0.0)) throw std::invalid_argument("check_gradient: step must be positive");
    std::vector<double> p(params.begin(), params.end());
    std::vector<double> analytic = fn.gradient(p);
    if (analytic.size() != p.size())
        throw std::runtime_error("check_gradient: gradient length does not match parameter count");

    GradientReport report;
    report.param_count = p.size();
    for (std::size_t i = 0; i < p.size(); ++i) {
        double saved = p[i];
        p[i] = saved + step;
        double fp = fn.value(p);
        p[i] = saved - step;
        double fm = fn.value(p);
        p[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("check_gradient: non-finite loss at probe point");
        double fd = (fp - fm) / (2.0 * step);
        double a = analytic[i];
        double abs_err = std::abs(a - fd);
        double rel_err = abs_err / std::max({std::abs(a), std::abs(fd), 1e-8});
        report.max_abs_err = std::max(report.max_abs_err, abs_err);
        report.max_rel_err = std::max(report.max_rel_err, rel_err);
    }
    return report;
}

}  // namespace ccl
