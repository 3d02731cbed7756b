#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ccl {

// Dense row-major matrix of 64-bit floats. Row and column vectors are 1xN /
// Nx1 matrices; scalars are 1x1.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(check_dims(rows, cols), 0.0) {}
    Matrix(int rows, int cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != check_dims(rows, cols))
            throw std::invalid_argument("Matrix: data length does not match rows*cols");
    }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Matrix filled(int rows, int cols, double v) {
        Matrix m(rows, cols);
        for (double& x : m.data_) x = v;
        return m;
    }
    static Matrix row_vector(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Matrix(1, n, std::move(v));
    }
    static Matrix col_vector(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Matrix(n, 1, std::move(v));
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<double> row(int r) { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }
    std::span<const double> row(int r) const { return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    static std::size_t check_dims(int rows, int cols) {
        if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative dimension");
        return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
    }

    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                                    std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "sub");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

inline Matrix scale(const Matrix& a, double s) {
    Matrix out = a;
    for (double& x : out.data()) x *= s;
    return out;
}

inline void add_in_place(Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add_in_place");
    for (std::size_t i = 0; i < a.size(); ++i) a.data()[i] += b.data()[i];
}

// a [n x k] * b [k x m]
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + ")");
    Matrix out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            double aik = a(i, k);
            if (aik == 0.0) continue;
            const auto brow = b.row(k);
            auto orow = out.row(i);
            for (int j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
        }
    }
    return out;
}

// a [n x k] * b^T where b is [m x k]
inline Matrix matmul_bt(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols())
        throw std::invalid_argument("matmul_bt: inner dimensions differ");
    Matrix out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        const auto arow = a.row(i);
        for (int j = 0; j < b.rows(); ++j) {
            const auto brow = b.row(j);
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += arow[k] * brow[k];
            out(i, j) = s;
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& a) {
    Matrix out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i)
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    return out;
}

inline double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double x : a.data()) m = std::max(m, std::abs(x));
    return m;
}

inline bool all_finite(const Matrix& a) {
    for (double x : a.data())
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require_finite(const Matrix& a, const char* what) {
    if (!all_finite(a)) throw std::runtime_error(std::string(what) + ": non-finite values");
}

}  // namespace ccl
