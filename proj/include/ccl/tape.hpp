#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "ccl/matrix.hpp"

namespace ccl::ad {

class Tape;

// Handle to a matrix-valued node on a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Matrix& value() const;
    const Matrix& grad() const;
    bool requires_grad() const;
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }
    double scalar() const;  // value of a 1x1 node
};

// Reverse-mode tape over dense matrices. Ops record a pull closure that
// accumulates into parent gradients; backward() walks nodes in reverse.
class Tape {
public:
    Tape() { nodes_.reserve(256); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var leaf(Matrix value);      // tracked input
    Var constant(Matrix value);  // untracked value
    Var scalar_constant(double v) { return constant(Matrix(1, 1, {v})); }

    // Seeds the (1x1) root with gradient 1 and propagates.
    void backward(Var root);

    const Matrix& value_of(int id) const { return nodes_[id].value; }
    const Matrix& grad_of(int id) const { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    int push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> pull);
    void accumulate(int id, const Matrix& g);

private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        std::function<void(Tape&, const Matrix&)> pull;
    };
    std::vector<Node> nodes_;
};

// ---- elementwise / scalar ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var relu(Var a);
Var exp(Var a);
Var log_floored(Var a, double floor);
Var sqrt_floored(Var a, double floor);
Var pow_scalar(Var a, double p);  // entries must be positive

// ---- linear algebra ----
Var matmul(Var a, Var b);
Var matmul_bt(Var a, Var b);  // a * b^T
Var transpose(Var a);
// x [B x in] * w^T [out x in] + bias [1 x out] broadcast over rows
Var linear(Var x, Var w, Var bias);
// X = A^{-1} B through solve_linear; differentiable in both arguments
Var solve(Var a, Var b);

// ---- reductions / shaping ----
Var row_sum(Var a);    // [n x 1]
Var total_sum(Var a);  // 1x1
Var mean_all(Var a);   // 1x1
Var select_rows(Var a, std::vector<int> idx);
Var pick_per_row(Var a, std::vector<int> cols);  // [n x 1], entry a(i, cols[i])
Var concat_rows(Var a, Var b);
Var tile_rows(Var a, int n);  // repeat a 1xM row n times

// ---- broadcasts ----
Var mul_rowvec(Var a, Var v);  // scales columns, v is 1 x cols
Var mul_colvec(Var a, Var v);  // scales rows, v is rows x 1
Var add_rowvec(Var a, Var v);

// ---- row-wise nonlinear ----
Var row_normalize(Var a);                     // rows divided by their sums
Var row_l2_normalize(Var a, double floor);    // rows divided by max(L2 norm, floor)
Var log_softmax_rows(Var a);
Var softmax_rows(Var a);

inline Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

}  // namespace ccl::ad
