#include "ccl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace ccl {

int argmax_lowest(std::span<const double> row) {
    int best = 0;
    for (int j = 1; j < static_cast<int>(row.size()); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

std::string EvalReport::csv_header() {
    return "step,top1,ece,prior_l1,macro_recall,macro_precision";
}

std::string EvalReport::csv_row() const {
    double mr = 0.0, mp = 0.0;
    for (double r : per_class_recall) mr += r;
    for (double p : per_class_precision) mp += p;
    if (!per_class_recall.empty()) mr /= static_cast<double>(per_class_recall.size());
    if (!per_class_precision.empty()) mp /= static_cast<double>(per_class_precision.size());
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%ld,%.12g,%.12g,%.12g,%.12g,%.12g", step, top1, ece, prior_l1,
                  mr, mp);
    return buf;
}

std::string EvalReport::summary() const {
    std::ostringstream os;
    os << "step " << step << ": top1 " << top1 << ", ece " << ece << ", prior_l1 " << prior_l1 << "\n";
    os << "per-class recall:";
    for (double r : per_class_recall) os << " " << r;
    os << "\nper-class precision:";
    for (double p : per_class_precision) os << " " << p;
    os << "\nconfusion (rows = true class):\n";
    for (const auto& row : confusion) {
        for (std::size_t j = 0; j < row.size(); ++j) os << (j ? " " : "") << row[j];
        os << "\n";
    }
    return os.str();
}

EvalReport evaluate(const ModelState& model, const Matrix& test_features,
                    const std::vector<int>& test_labels) {
    if (test_features.rows() == 0) throw std::invalid_argument("evaluate: empty test set");
    if (static_cast<int>(test_labels.size()) != test_features.rows())
        throw std::invalid_argument("evaluate: one label per test row required");

    const int c = model.config.num_classes;
    ForwardOutput fo = forward_values(model, test_features);

    EvalReport report;
    report.confusion.assign(c, std::vector<long>(c, 0));
    long correct = 0;
    for (int i = 0; i < test_features.rows(); ++i) {
        int pred = argmax_lowest(fo.logits_b.row(i));
        report.confusion[test_labels[i]][pred]++;
        if (pred == test_labels[i]) ++correct;
    }
    report.top1 = static_cast<double>(correct) / test_features.rows();

    report.per_class_recall.assign(c, 0.0);
    report.per_class_precision.assign(c, 0.0);
    for (int k = 0; k < c; ++k) {
        long row_total = 0, col_total = 0;
        for (int j = 0; j < c; ++j) {
            row_total += report.confusion[k][j];
            col_total += report.confusion[j][k];
        }
        report.per_class_recall[k] = row_total > 0 ? static_cast<double>(report.confusion[k][k]) / row_total : 0.0;
        report.per_class_precision[k] = col_total > 0 ? static_cast<double>(report.confusion[k][k]) / col_total : 0.0;
    }
    return report;
}

double expected_calibration_error(std::span<const double> confidences,
                                  const std::vector<char>& correct, int num_bins) {
    if (confidences.size() != correct.size())
        throw std::invalid_argument("expected_calibration_error: size mismatch");
    if (num_bins < 1) throw std::invalid_argument("expected_calibration_error: need >= 1 bin");
    if (confidences.empty()) return 0.0;

    std::vector<long> counts(num_bins, 0);
    std::vector<double> conf_sum(num_bins, 0.0);
    std::vector<long> correct_sum(num_bins, 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        double cf = confidences[i];
        if (!(cf >= 0.0 && cf <= 1.0))
            throw std::invalid_argument("expected_calibration_error: confidence outside [0,1]");
        int b = std::min(static_cast<int>(cf * num_bins), num_bins - 1);
        counts[b]++;
        conf_sum[b] += cf;
        correct_sum[b] += correct[i] ? 1 : 0;
    }
    double ece = 0.0;
    double n = static_cast<double>(confidences.size());
    for (int b = 0; b < num_bins; ++b) {
        if (counts[b] == 0) continue;
        double acc = static_cast<double>(correct_sum[b]) / counts[b];
        double conf = conf_sum[b] / counts[b];
        ece += (counts[b] / n) * std::abs(acc - conf);
    }
    return ece;
}

double prior_l1(const ProbVector& estimated, const ProbVector& truth) {
    if (estimated.size() != truth.size()) throw std::invalid_argument("prior_l1: length mismatch");
    double sum = 0.0;
    for (std::size_t k = 0; k < estimated.size(); ++k) sum += std::abs(estimated[k] - truth[k]);
    return sum;
}

}  // namespace ccl
