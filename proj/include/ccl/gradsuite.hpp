#pragma once

#include <string>
#include <vector>

#include "ccl/gradcheck.hpp"

namespace ccl {

struct GradCheckCase {
    std::string name;
    GradientReport report;
};

// Finite-difference validation of every differentiable loss in the repo on
// small random instances (batch <= 8, classes <= 4), one pass per seed.
std::vector<GradCheckCase> run_loss_gradient_suite(int num_seeds, double step = 1e-5);

// Largest max_rel_err across cases.
double worst_relative_error(const std::vector<GradCheckCase>& cases);

}  // namespace ccl
