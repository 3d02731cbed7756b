#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccl {

// Discrete distribution over classes: entries >= 0, summing to 1 within 1e-9.
class ProbVector {
public:
    static constexpr double kSumTolerance = 1e-9;

    // Empty placeholder; real values come from the validating factories.
    ProbVector() = default;

    static ProbVector checked(std::vector<double> p) {
        double sum = 0.0;
        for (double x : p) {
            if (!(x >= 0.0)) throw std::invalid_argument("ProbVector: negative or NaN entry");
            sum += x;
        }
        if (std::abs(sum - 1.0) > kSumTolerance)
            throw std::invalid_argument("ProbVector: entries sum to " + std::to_string(sum));
        return ProbVector(std::move(p));
    }

    // Divides a nonnegative weight vector by its sum.
    static ProbVector normalized(std::vector<double> raw) {
        double sum = 0.0;
        for (double x : raw) {
            if (!std::isfinite(x) || x < 0.0)
                throw std::invalid_argument("ProbVector: weights must be finite and nonnegative");
            sum += x;
        }
        if (sum <= 0.0) throw std::invalid_argument("ProbVector: zero normalizer");
        for (double& x : raw) x /= sum;
        return ProbVector(std::move(raw));
    }

    static ProbVector uniform(int c) {
        if (c < 1) throw std::invalid_argument("ProbVector: need at least one class");
        return ProbVector(std::vector<double>(static_cast<std::size_t>(c), 1.0 / c));
    }

    double operator[](std::size_t i) const { return p_[i]; }
    std::size_t size() const { return p_.size(); }
    std::span<const double> values() const { return p_; }
    const std::vector<double>& vec() const { return p_; }

    bool strictly_positive() const {
        return std::all_of(p_.begin(), p_.end(), [](double x) { return x > 0.0; });
    }

private:
    explicit ProbVector(std::vector<double> p) : p_(std::move(p)) {}
    std::vector<double> p_;
};

// log softmax with max-subtraction; exp of the result sums to 1.
inline std::vector<double> log_softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("log_softmax: empty input");
    double m = logits[0];
    for (double x : logits) {
        if (!std::isfinite(x)) throw std::invalid_argument("log_softmax: non-finite input");
        m = std::max(m, x);
    }
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - m);
    double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
    std::vector<double> out = log_softmax(logits);
    for (double& x : out) x = std::exp(x);
    return out;
}

}  // namespace ccl
