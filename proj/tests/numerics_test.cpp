#include <doctest.h>

#include <cmath>

#include "ccl/gradcheck.hpp"
#include "ccl/linalg.hpp"
#include "ccl/matrix.hpp"
#include "ccl/prob.hpp"
#include "ccl/rng.hpp"

using namespace ccl;

TEST_CASE("log_softmax basics") {
    std::vector<double> a = {0.0, 0.0};
    auto out = log_softmax(a);
    CHECK(out[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

    std::vector<double> big = {1000.0, 1000.0};
    auto out_big = log_softmax(big);
    CHECK(out_big[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

    std::vector<double> ab = {1.0, 0.0};
    auto out_ab = log_softmax(ab);
    CHECK(out_ab[0] == doctest::Approx(-0.31326).epsilon(1e-4));
    CHECK(out_ab[1] == doctest::Approx(-1.31326).epsilon(1e-4));

    std::vector<double> bad = {1.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS(log_softmax(bad));
}

TEST_CASE("log_softmax exponentiates to a distribution and is shift invariant") {
    RandomStream rng = seeded_rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform_index(6));
        std::vector<double> x(n);
        for (double& v : x) v = 10.0 * rng.normal();
        auto ls = log_softmax(x);
        double sum = 0.0;
        for (double v : ls) sum += std::exp(v);
        CHECK(std::abs(sum - 1.0) < 1e-12);

        double c = 200.0 * rng.uniform() - 100.0;
        std::vector<double> shifted = x;
        for (double& v : shifted) v += c;
        auto ls2 = log_softmax(shifted);
        for (int i = 0; i < n; ++i) CHECK(std::abs(ls[i] - ls2[i]) < 1e-10);
    }
}

TEST_CASE("ProbVector validation") {
    CHECK_NOTHROW(ProbVector::checked({0.5, 0.5}));
    CHECK_THROWS(ProbVector::checked({0.5, 0.6}));
    CHECK_THROWS(ProbVector::checked({-0.1, 1.1}));
    CHECK_THROWS(ProbVector::normalized({0.0, 0.0}));
    ProbVector p = ProbVector::normalized({2.0, 6.0});
    CHECK(p[0] == doctest::Approx(0.25));
}

TEST_CASE("solve_linear identity returns B exactly") {
    Matrix b(3, 2, {1.0, 2.0, 3.0, 4.0, 5.0, 6.0});
    Matrix x = solve_linear(Matrix::identity(3), b);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(x.data()[i] == b.data()[i]);
}

TEST_CASE("solve_linear hand cases") {
    Matrix a(2, 2, {0.75, -0.25, -0.25, 0.75});
    Matrix x = solve_linear(a, Matrix::identity(2));
    CHECK(x(0, 0) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(x(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(x(1, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(x(1, 1) == doctest::Approx(1.5).epsilon(1e-12));

    Matrix s = solve_linear(Matrix(1, 1, {2.0}), Matrix(1, 1, {4.0}));
    CHECK(s(0, 0) == doctest::Approx(2.0));

    CHECK_THROWS(solve_linear(Matrix(2, 2, {1.0, 1.0, 1.0, 1.0}), Matrix::identity(2)));
}

TEST_CASE("solve_linear round trip on random well-conditioned systems") {
    RandomStream rng = seeded_rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform_index(15));
        Matrix a(n, n);
        for (double& v : a.data()) v = rng.normal() * 0.3;
        for (int i = 0; i < n; ++i) a(i, i) += 4.0;  // diagonally dominant
        Matrix b(n, 3);
        for (double& v : b.data()) v = rng.normal();
        Matrix x = solve_linear(a, b);
        Matrix residual = sub(matmul(a, x), b);
        CHECK(max_abs(residual) < 1e-8 * std::max(1.0, max_abs(b)));
    }
}

TEST_CASE("check_gradient agrees on a quadratic and rejects bad inputs") {
    DiffFunction quadratic;
    quadratic.value = [](std::span<const double> p) {
        double s = 0.0;
        for (double x : p) s += x * x;
        return s;
    };
    quadratic.gradient = [](std::span<const double> p) {
        std::vector<double> g(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) g[i] = 2.0 * p[i];
        return g;
    };
    std::vector<double> params = {0.3, -1.2, 2.0};
    GradientReport report = check_gradient(quadratic, params, 1e-5);
    CHECK(report.max_rel_err < 1e-8);
    CHECK(report.param_count == 3);

    DiffFunction constant;
    constant.value = [](std::span<const double>) { return 3.5; };
    constant.gradient = [](std::span<const double> p) { return std::vector<double>(p.size(), 0.0); };
    GradientReport flat = check_gradient(constant, params, 1e-5);
    CHECK(flat.max_abs_err < 1e-10);

    DiffFunction bad;
    bad.value = [](std::span<const double>) { return std::nan(""); };
    bad.gradient = [](std::span<const double> p) { return std::vector<double>(p.size(), 0.0); };
    CHECK_THROWS(check_gradient(bad, params, 1e-5));
}

TEST_CASE("seeded_rng determinism and stream independence") {
    RandomStream a = seeded_rng(0);
    RandomStream b = seeded_rng(0);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    RandomStream c = seeded_rng(0);
    RandomStream d = seeded_rng(1);
    bool differs = false;
    for (int i = 0; i < 100; ++i)
        if (c.next_u64() != d.next_u64()) differs = true;
    CHECK(differs);
}

TEST_CASE("rng state copy continues the stream identically") {
    RandomStream a = seeded_rng(42);
    for (int i = 0; i < 17; ++i) a.normal();
    RandomStream snapshot = a;  // save
    std::vector<double> expected;
    for (int i = 0; i < 50; ++i) expected.push_back(a.normal());
    for (int i = 0; i < 50; ++i) CHECK(snapshot.normal() == expected[i]);  // restore
}
