#include "ccl/linalg.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace ccl {

Matrix solve_linear(const Matrix& a, const Matrix& b) {
    if (a.rows() != a.cols()) throw std::invalid_argument("solve_linear: A must be square");
    if (b.rows() != a.rows()) throw std::invalid_argument("solve_linear: B row count must match A");
    require_finite(a, "solve_linear: A");
    require_finite(b, "solve_linear: B");

    const int n = a.rows();
    Matrix lu = a;
    Matrix x = b;
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    double max_pivot = 0.0;
    double min_pivot = 0.0;
    for (int col = 0; col < n; ++col) {
        int pivot_row = col;
        double best = std::abs(lu(col, col));
        for (int r = col + 1; r < n; ++r) {
            double v = std::abs(lu(r, col));
            if (v > best) {
                best = v;
                pivot_row = r;
            }
        }
        if (best == 0.0) throw std::runtime_error("solve_linear: singular matrix");
        if (pivot_row != col) {
            for (int c = 0; c < n; ++c) std::swap(lu(col, c), lu(pivot_row, c));
            for (int c = 0; c < x.cols(); ++c) std::swap(x(col, c), x(pivot_row, c));
        }
        double pivot = lu(col, col);
        max_pivot = (col == 0) ? std::abs(pivot) : std::max(max_pivot, std::abs(pivot));
        min_pivot = (col == 0) ? std::abs(pivot) : std::min(min_pivot, std::abs(pivot));
        for (int r = col + 1; r < n; ++r) {
            double f = lu(r, col) / pivot;
            if (f == 0.0) continue;
            lu(r, col) = f;
            for (int c = col + 1; c < n; ++c) lu(r, c) -= f * lu(col, c);
            for (int c = 0; c < x.cols(); ++c) x(r, c) -= f * x(col, c);
        }
    }

    // Cheap condition estimate from the pivot spread; only meant to catch
    // genuinely abusive inputs, not to be a tight bound.
    if (min_pivot <= 0.0 || max_pivot / min_pivot > 1e12)
        throw std::runtime_error("solve_linear: matrix ill-conditioned (pivot ratio > 1e12)");

    // back substitution on the permuted factors
    for (int col = n - 1; col >= 0; --col) {
        for (int c = 0; c < x.cols(); ++c) {
            double s = x(col, c);
            for (int k = col + 1; k < n; ++k) s -= lu(col, k) * x(k, c);
            x(col, c) = s / lu(col, col);
        }
    }
    require_finite(x, "solve_linear: result");
    return x;
}

}  // namespace ccl
