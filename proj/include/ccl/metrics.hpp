#pragma once

#include <span>
#include <string>
#include <vector>

#include "ccl/matrix.hpp"
#include "ccl/model.hpp"
#include "ccl/prob.hpp"

namespace ccl {

struct EvalReport {
    double top1 = 0.0;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_precision;
    std::vector<std::vector<long>> confusion;  // [true][predicted]
    double ece = 0.0;
    double prior_l1 = 0.0;
    long step = 0;

    static std::string csv_header();
    std::string csv_row() const;
    std::string summary() const;
};

// Balanced-head argmax predictions (lowest index wins ties) against a
// balanced test set.
EvalReport evaluate(const ModelState& model, const Matrix& test_features,
                    const std::vector<int>& test_labels);

// Equal-width binning on [0,1]; empty bins contribute zero.
double expected_calibration_error(std::span<const double> confidences,
                                  const std::vector<char>& correct, int num_bins);

double prior_l1(const ProbVector& estimated, const ProbVector& truth);

int argmax_lowest(std::span<const double> row);

}  // namespace ccl
