#include <doctest.h>

#include <cmath>

#include "ccl/gradcheck.hpp"
#include "ccl/rng.hpp"
#include "ccl/tape.hpp"

using namespace ccl;

namespace {

// finite-difference check of a scalar function built from tape ops over one
// flat leaf matrix
GradientReport fd_check(int rows, int cols,
                        const std::function<ad::Var(ad::Tape&, ad::Var)>& build,
                        std::uint64_t seed, double scale = 1.0) {
    RandomStream rng = seeded_rng(seed);
    std::vector<double> params(static_cast<std::size_t>(rows) * cols);
    for (double& x : params) x = scale * rng.normal();

    auto run = [&](std::span<const double> p, bool grad, std::vector<double>* out) {
        ad::Tape tape;
        ad::Var leaf = tape.leaf(Matrix(rows, cols, std::vector<double>(p.begin(), p.end())));
        ad::Var loss = build(tape, leaf);
        if (grad) {
            tape.backward(loss);
            *out = leaf.grad().data();
        }
        return loss.scalar();
    };
    DiffFunction fn;
    fn.value = [&](std::span<const double> p) { return run(p, false, nullptr); };
    fn.gradient = [&](std::span<const double> p) {
        std::vector<double> g;
        run(p, true, &g);
        return g;
    };
    return check_gradient(fn, params, 1e-5);
}

}  // namespace

TEST_CASE("tape forward values are correct for basic ops") {
    ad::Tape tape;
    ad::Var a = tape.leaf(Matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
    ad::Var b = tape.leaf(Matrix(2, 2, {5.0, 6.0, 7.0, 8.0}));
    CHECK(ad::add(a, b).value()(0, 1) == 8.0);
    CHECK(ad::sub(b, a).value()(1, 1) == 4.0);
    CHECK(ad::mul(a, b).value()(1, 0) == 21.0);
    CHECK(ad::matmul(a, b).value()(0, 0) == doctest::Approx(19.0));
    CHECK(ad::matmul_bt(a, b).value()(0, 0) == doctest::Approx(17.0));
    CHECK(ad::total_sum(a).scalar() == doctest::Approx(10.0));
    CHECK(ad::mean_all(a).scalar() == doctest::Approx(2.5));
}

TEST_CASE("softmax rows sum to one and row_normalize matches") {
    ad::Tape tape;
    ad::Var a = tape.leaf(Matrix(3, 4, {1, 2, 3, 4, -1, 0, 1, 2, 5, 5, 5, 5}));
    Matrix p = ad::softmax_rows(a).value();
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += p(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    Matrix q = ad::row_normalize(ad::exp(a)).value();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(p(i, j) == doctest::Approx(q(i, j)).epsilon(1e-12));
}

TEST_CASE("gradients of elementwise and reduction ops match finite differences") {
    auto composite = [](ad::Tape& t, ad::Var x) {
        ad::Var e = ad::exp(ad::mul_scalar(x, 0.3));
        ad::Var r = ad::relu(ad::add_scalar(x, 0.05));
        ad::Var m = ad::mul(e, r);
        ad::Var lg = ad::log_floored(ad::add_scalar(ad::mul(m, m), 1.0), 1e-12);
        return ad::mean_all(ad::add(lg, ad::sqrt_floored(ad::add_scalar(ad::mul(x, x), 0.2), 1e-12)));
        (void)t;
    };
    GradientReport r = fd_check(4, 3, composite, 21);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradients of matmul, linear, broadcasts match finite differences") {
    auto composite = [](ad::Tape& t, ad::Var x) {
        ad::Var w = t.constant(Matrix(3, 4, {0.4, -0.2, 0.1, 0.3, 0.2, 0.5, -0.3, 0.1, 0.05, -0.15, 0.25, 0.35}));
        ad::Var b = t.constant(Matrix(1, 3, {0.1, -0.2, 0.3}));
        ad::Var y = ad::linear(x, w, b);  // [n x 3]
        ad::Var g = ad::matmul_bt(y, y);
        ad::Var cv = t.constant(Matrix(4, 1, {0.5, 1.5, -0.5, 1.0}));
        ad::Var rv = t.constant(Matrix(1, 3, {1.0, 0.7, 1.3}));
        ad::Var mixed = ad::mul_colvec(ad::mul_rowvec(y, rv), cv);
        return ad::add(ad::total_sum(g), ad::total_sum(mixed));
    };
    GradientReport r = fd_check(4, 4, composite, 22);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradients of linear with learnable weights match finite differences") {
    // leaf is the weight matrix here
    auto composite = [](ad::Tape& t, ad::Var w) {
        ad::Var x = t.constant(Matrix(2, 5, {0.1, 0.4, -0.3, 0.2, 0.7, -0.6, 0.5, 0.2, -0.1, 0.3}));
        ad::Var b = t.constant(Matrix(1, 3, {0.0, 0.1, -0.1}));
        ad::Var y = ad::relu(ad::linear(x, w, b));
        return ad::total_sum(ad::mul(y, y));
    };
    GradientReport r = fd_check(3, 5, composite, 23);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradients of row-wise normalizations and softmax match finite differences") {
    auto composite = [](ad::Tape& t, ad::Var x) {
        ad::Var p = ad::softmax_rows(x);
        ad::Var ls = ad::log_softmax_rows(ad::mul_scalar(x, 1.3));
        ad::Var l2 = ad::row_l2_normalize(x, 1e-12);
        ad::Var rn = ad::row_normalize(ad::exp(l2));
        ad::Var picked = ad::pick_per_row(ls, {0, 2, 1, 0});
        return ad::add(ad::total_sum(ad::mul(p, rn)), ad::mean_all(picked));
        (void)t;
    };
    GradientReport r = fd_check(4, 3, composite, 24);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradients of select, concat, tile, pow match finite differences") {
    auto composite = [](ad::Tape& t, ad::Var x) {
        ad::Var top = ad::select_rows(x, {0, 2, 2});
        ad::Var both = ad::concat_rows(top, x);
        ad::Var row = ad::select_rows(x, {1});
        ad::Var tiled = ad::tile_rows(row, both.rows());
        ad::Var mixed = ad::mul(both, tiled);
        ad::Var positive = ad::add_scalar(ad::mul(mixed, mixed), 0.3);
        return ad::total_sum(ad::pow_scalar(positive, 0.7));
        (void)t;
    };
    GradientReport r = fd_check(3, 4, composite, 25);
    // the fractional power has high curvature near small bases; FD itself
    // carries O(h^2 f''') error there
    CHECK(r.max_rel_err < 1e-5);
}

TEST_CASE("gradient of div matches finite differences") {
    auto composite = [](ad::Tape& t, ad::Var x) {
        ad::Var num = ad::add_scalar(ad::mul(x, x), 0.5);
        ad::Var den = ad::add_scalar(ad::exp(ad::mul_scalar(x, 0.2)), 1.0);
        return ad::total_sum(ad::div(num, den));
        (void)t;
    };
    GradientReport r = fd_check(3, 3, composite, 26);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("gradient through the linear solve matches finite differences") {
    // leaf feeds both the system matrix and the right-hand side
    auto composite = [](ad::Tape& t, ad::Var x) {
        int n = x.rows();
        ad::Var g = ad::row_normalize(ad::exp(ad::matmul_bt(x, x)));
        ad::Var system = ad::sub(t.constant(Matrix::identity(n)), ad::mul_scalar(g, 0.4));
        ad::Var rhs = ad::softmax_rows(x);
        ad::Var solved = ad::solve(system, rhs);
        return ad::total_sum(ad::mul(solved, solved));
    };
    GradientReport r = fd_check(5, 5, composite, 27, 0.6);
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("backward accumulates across reuse of the same node") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Matrix(1, 1, {3.0}));
    ad::Var y = ad::add(ad::mul(x, x), x);  // x^2 + x, d/dx = 2x + 1 = 7
    tape.backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(7.0));
}

TEST_CASE("constants receive no gradient") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Matrix(1, 1, {2.0}));
    ad::Var c = tape.constant(Matrix(1, 1, {5.0}));
    ad::Var y = ad::mul(x, c);
    tape.backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(5.0));
    CHECK_FALSE(c.requires_grad());
}

TEST_CASE("stop_gradient detaches") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Matrix(1, 1, {2.0}));
    ad::Var y = ad::mul(x, ad::stop_gradient(ad::mul(x, x)));  // x * const(x^2)
    tape.backward(y);
    CHECK(x.grad()(0, 0) == doctest::Approx(4.0));  // only the direct factor
}
