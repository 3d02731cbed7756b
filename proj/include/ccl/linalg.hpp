#pragma once

#include "ccl/matrix.hpp"

namespace ccl {

// Solves A * X = B for square A via LU with partial pivoting. Throws if A is
// singular or the cheap pivot-ratio condition estimate exceeds 1e12.
Matrix solve_linear(const Matrix& a, const Matrix& b);

}  // namespace ccl
