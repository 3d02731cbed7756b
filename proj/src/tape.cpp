#include "ccl/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "ccl/linalg.hpp"

namespace ccl::ad {

const Matrix& Var::value() const { return tape->value_of(id); }
const Matrix& Var::grad() const { return tape->grad_of(id); }
bool Var::requires_grad() const { return tape->needs_grad(id); }

double Var::scalar() const {
    const Matrix& v = value();
    if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar: node is not 1x1");
    return v(0, 0);
}

Var Tape::leaf(Matrix value) { return {this, push(std::move(value), true, nullptr)}; }
Var Tape::constant(Matrix value) { return {this, push(std::move(value), false, nullptr)}; }

int Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> pull) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(pull)});
    return static_cast<int>(nodes_.size()) - 1;
}

void Tape::accumulate(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    add_in_place(n.grad, g);
}

void Tape::backward(Var root) {
    if (root.tape != this) throw std::logic_error("Tape::backward: var from another tape");
    const Matrix& rv = nodes_[root.id].value;
    if (rv.rows() != 1 || rv.cols() != 1) throw std::logic_error("Tape::backward: root must be 1x1");
    if (!nodes_[root.id].requires_grad)
        throw std::logic_error("Tape::backward: root does not require gradients");

    for (int i = 0; i <= root.id; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad) n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    nodes_[root.id].grad(0, 0) = 1.0;
    for (int i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.pull) n.pull(*this, n.grad);
    }
}

namespace {

Tape& tape_of(Var a) { return *a.tape; }

void check_same_tape(Var a, Var b, const char* what) {
    if (a.tape != b.tape) throw std::logic_error(std::string(what) + ": vars from different tapes");
}

Var make(Tape& t, Matrix value, bool rg, std::function<void(Tape&, const Matrix&)> pull) {
    return {&t, t.push(std::move(value), rg, rg ? std::move(pull) : nullptr)};
}

}  // namespace

Var add(Var a, Var b) {
    check_same_tape(a, b, "add");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    return make(tape_of(a), ccl::add(a.value(), b.value()), rg, [ai, bi](Tape& t, const Matrix& g) {
        t.accumulate(ai, g);
        t.accumulate(bi, g);
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b, "sub");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    return make(tape_of(a), ccl::sub(a.value(), b.value()), rg, [ai, bi](Tape& t, const Matrix& g) {
        t.accumulate(ai, g);
        t.accumulate(bi, scale(g, -1.0));
    });
}

Var mul(Var a, Var b) {
    check_same_tape(a, b, "mul");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    return make(tape_of(a), hadamard(a.value(), b.value()), rg, [ai, bi](Tape& t, const Matrix& g) {
        t.accumulate(ai, hadamard(g, t.value_of(bi)));
        t.accumulate(bi, hadamard(g, t.value_of(ai)));
    });
}

Var div(Var a, Var b) {
    check_same_tape(a, b, "div");
    require_same_shape(a.value(), b.value(), "div");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    Matrix out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] /= b.value().data()[i];
    return make(tape_of(a), std::move(out), rg, [ai, bi](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        const Matrix& bv = t.value_of(bi);
        Matrix ga = g;
        Matrix gb = g;
        for (std::size_t i = 0; i < ga.size(); ++i) {
            double b2 = bv.data()[i] * bv.data()[i];
            ga.data()[i] /= bv.data()[i];
            gb.data()[i] *= -av.data()[i] / b2;
        }
        t.accumulate(ai, ga);
        t.accumulate(bi, gb);
    });
}

Var add_scalar(Var a, double s) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) x += s;
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai](Tape& t, const Matrix& g) { t.accumulate(ai, g); });
}

Var mul_scalar(Var a, double s) {
    int ai = a.id;
    return make(tape_of(a), scale(a.value(), s), a.requires_grad(),
                [ai, s](Tape& t, const Matrix& g) { t.accumulate(ai, scale(g, s)); });
}

Var relu(Var a) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) x = x > 0.0 ? x : 0.0;
    return make(tape_of(a), std::move(out), a.requires_grad(), [ai](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        Matrix ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i)
            if (av.data()[i] <= 0.0) ga.data()[i] = 0.0;
        t.accumulate(ai, ga);
    });
}

Var exp(Var a) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) x = std::exp(x);
    Matrix cached = out;
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, cached](Tape& t, const Matrix& g) { t.accumulate(ai, hadamard(g, cached)); });
}

Var log_floored(Var a, double floor) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) x = std::log(x > floor ? x : floor);
    return make(tape_of(a), std::move(out), a.requires_grad(), [ai, floor](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        Matrix ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i)
            ga.data()[i] = av.data()[i] > floor ? ga.data()[i] / av.data()[i] : 0.0;
        t.accumulate(ai, ga);
    });
}

Var sqrt_floored(Var a, double floor) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) x = std::sqrt(x > floor ? x : floor);
    Matrix cached = out;
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, floor, cached](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga = g;
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga.data()[i] = av.data()[i] > floor ? 0.5 * ga.data()[i] / cached.data()[i] : 0.0;
                    t.accumulate(ai, ga);
                });
}

Var pow_scalar(Var a, double p) {
    int ai = a.id;
    Matrix out = a.value();
    for (double& x : out.data()) {
        if (!(x > 0.0)) throw std::runtime_error("pow_scalar: base must be positive");
        x = std::pow(x, p);
    }
    Matrix cached = out;
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, p, cached](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga = g;
                    for (std::size_t i = 0; i < ga.size(); ++i)
                        ga.data()[i] *= p * cached.data()[i] / av.data()[i];
                    t.accumulate(ai, ga);
                });
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b, "matmul");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    return make(tape_of(a), ccl::matmul(a.value(), b.value()), rg, [ai, bi](Tape& t, const Matrix& g) {
        t.accumulate(ai, ccl::matmul_bt(g, t.value_of(bi)));
        t.accumulate(bi, ccl::matmul(ccl::transpose(t.value_of(ai)), g));
    });
}

Var matmul_bt(Var a, Var b) {
    check_same_tape(a, b, "matmul_bt");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    return make(tape_of(a), ccl::matmul_bt(a.value(), b.value()), rg, [ai, bi](Tape& t, const Matrix& g) {
        // y = a b^T: ga = g b, gb = g^T a
        t.accumulate(ai, ccl::matmul(g, t.value_of(bi)));
        t.accumulate(bi, ccl::matmul(ccl::transpose(g), t.value_of(ai)));
    });
}

Var transpose(Var a) {
    int ai = a.id;
    return make(tape_of(a), ccl::transpose(a.value()), a.requires_grad(),
                [ai](Tape& t, const Matrix& g) { t.accumulate(ai, ccl::transpose(g)); });
}

Var linear(Var x, Var w, Var bias) {
    check_same_tape(x, w, "linear");
    check_same_tape(x, bias, "linear");
    if (bias.rows() != 1 || bias.cols() != w.rows())
        throw std::invalid_argument("linear: bias must be 1 x out");
    Matrix out = ccl::matmul_bt(x.value(), w.value());
    for (int i = 0; i < out.rows(); ++i) {
        auto orow = out.row(i);
        const auto brow = bias.value().row(0);
        for (int j = 0; j < out.cols(); ++j) orow[j] += brow[j];
    }
    bool rg = x.requires_grad() || w.requires_grad() || bias.requires_grad();
    int xi = x.id, wi = w.id, bi = bias.id;
    return make(tape_of(x), std::move(out), rg, [xi, wi, bi](Tape& t, const Matrix& g) {
        t.accumulate(xi, ccl::matmul(g, t.value_of(wi)));
        t.accumulate(wi, ccl::matmul(ccl::transpose(g), t.value_of(xi)));
        Matrix gb(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
        t.accumulate(bi, gb);
    });
}

Var solve(Var a, Var b) {
    check_same_tape(a, b, "solve");
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id;
    Matrix x = solve_linear(a.value(), b.value());
    Matrix cached_x = x;
    return make(tape_of(a), std::move(x), rg, [ai, bi, cached_x](Tape& t, const Matrix& g) {
        // X = A^{-1} B  =>  gB = A^{-T} g,  gA = -gB X^T
        Matrix gb = solve_linear(ccl::transpose(t.value_of(ai)), g);
        t.accumulate(bi, gb);
        t.accumulate(ai, scale(ccl::matmul_bt(gb, cached_x), -1.0));
    });
}

Var row_sum(Var a) {
    int ai = a.id;
    Matrix out(a.rows(), 1);
    const Matrix& av = a.value();
    for (int i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < av.cols(); ++j) s += av(i, j);
        out(i, 0) = s;
    }
    return make(tape_of(a), std::move(out), a.requires_grad(), [ai](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        Matrix ga(av.rows(), av.cols());
        for (int i = 0; i < av.rows(); ++i)
            for (int j = 0; j < av.cols(); ++j) ga(i, j) = g(i, 0);
        t.accumulate(ai, ga);
    });
}

Var total_sum(Var a) {
    int ai = a.id;
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return make(tape_of(a), Matrix(1, 1, {s}), a.requires_grad(), [ai](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        t.accumulate(ai, Matrix::filled(av.rows(), av.cols(), g(0, 0)));
    });
}

Var mean_all(Var a) { return mul_scalar(total_sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var select_rows(Var a, std::vector<int> idx) {
    int ai = a.id;
    const Matrix& av = a.value();
    Matrix out(static_cast<int>(idx.size()), av.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= av.rows()) throw std::invalid_argument("select_rows: index out of range");
        auto src = av.row(idx[r]);
        auto dst = out.row(static_cast<int>(r));
        std::copy(src.begin(), src.end(), dst.begin());
    }
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, idx = std::move(idx)](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga(av.rows(), av.cols());
                    for (std::size_t r = 0; r < idx.size(); ++r)
                        for (int j = 0; j < g.cols(); ++j) ga(idx[r], j) += g(static_cast<int>(r), j);
                    t.accumulate(ai, ga);
                });
}

Var pick_per_row(Var a, std::vector<int> cols) {
    int ai = a.id;
    const Matrix& av = a.value();
    if (static_cast<int>(cols.size()) != av.rows())
        throw std::invalid_argument("pick_per_row: one column index per row required");
    Matrix out(av.rows(), 1);
    for (int i = 0; i < av.rows(); ++i) {
        if (cols[i] < 0 || cols[i] >= av.cols()) throw std::invalid_argument("pick_per_row: column out of range");
        out(i, 0) = av(i, cols[i]);
    }
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, cols = std::move(cols)](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga(av.rows(), av.cols());
                    for (int i = 0; i < av.rows(); ++i) ga(i, cols[i]) += g(i, 0);
                    t.accumulate(ai, ga);
                });
}

Var concat_rows(Var a, Var b) {
    check_same_tape(a, b, "concat_rows");
    if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column counts differ");
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    Matrix out(av.rows() + bv.rows(), av.cols());
    for (int i = 0; i < av.rows(); ++i)
        std::copy(av.row(i).begin(), av.row(i).end(), out.row(i).begin());
    for (int i = 0; i < bv.rows(); ++i)
        std::copy(bv.row(i).begin(), bv.row(i).end(), out.row(av.rows() + i).begin());
    bool rg = a.requires_grad() || b.requires_grad();
    int ai = a.id, bi = b.id, na = av.rows();
    return make(tape_of(a), std::move(out), rg, [ai, bi, na](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        const Matrix& bv = t.value_of(bi);
        Matrix ga(av.rows(), av.cols());
        Matrix gb(bv.rows(), bv.cols());
        for (int i = 0; i < ga.rows(); ++i)
            std::copy(g.row(i).begin(), g.row(i).end(), ga.row(i).begin());
        for (int i = 0; i < gb.rows(); ++i)
            std::copy(g.row(na + i).begin(), g.row(na + i).end(), gb.row(i).begin());
        t.accumulate(ai, ga);
        t.accumulate(bi, gb);
    });
}

Var tile_rows(Var a, int n) {
    if (a.rows() != 1) throw std::invalid_argument("tile_rows: input must be 1 x M");
    int ai = a.id;
    const Matrix& av = a.value();
    Matrix out(n, av.cols());
    for (int i = 0; i < n; ++i) std::copy(av.row(0).begin(), av.row(0).end(), out.row(i).begin());
    return make(tape_of(a), std::move(out), a.requires_grad(), [ai](Tape& t, const Matrix& g) {
        Matrix ga(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga(0, j) += g(i, j);
        t.accumulate(ai, ga);
    });
}

Var mul_rowvec(Var a, Var v) {
    check_same_tape(a, v, "mul_rowvec");
    if (v.rows() != 1 || v.cols() != a.cols()) throw std::invalid_argument("mul_rowvec: v must be 1 x cols");
    Matrix out = a.value();
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) *= v.value()(0, j);
    bool rg = a.requires_grad() || v.requires_grad();
    int ai = a.id, vi = v.id;
    return make(tape_of(a), std::move(out), rg, [ai, vi](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        const Matrix& vv = t.value_of(vi);
        Matrix ga = g;
        Matrix gv(1, vv.cols());
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) {
                ga(i, j) *= vv(0, j);
                gv(0, j) += g(i, j) * av(i, j);
            }
        t.accumulate(ai, ga);
        t.accumulate(vi, gv);
    });
}

Var mul_colvec(Var a, Var v) {
    check_same_tape(a, v, "mul_colvec");
    if (v.cols() != 1 || v.rows() != a.rows()) throw std::invalid_argument("mul_colvec: v must be rows x 1");
    Matrix out = a.value();
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) *= v.value()(i, 0);
    bool rg = a.requires_grad() || v.requires_grad();
    int ai = a.id, vi = v.id;
    return make(tape_of(a), std::move(out), rg, [ai, vi](Tape& t, const Matrix& g) {
        const Matrix& av = t.value_of(ai);
        const Matrix& vv = t.value_of(vi);
        Matrix ga = g;
        Matrix gv(vv.rows(), 1);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) {
                ga(i, j) *= vv(i, 0);
                gv(i, 0) += g(i, j) * av(i, j);
            }
        t.accumulate(ai, ga);
        t.accumulate(vi, gv);
    });
}

Var add_rowvec(Var a, Var v) {
    check_same_tape(a, v, "add_rowvec");
    if (v.rows() != 1 || v.cols() != a.cols()) throw std::invalid_argument("add_rowvec: v must be 1 x cols");
    Matrix out = a.value();
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) += v.value()(0, j);
    bool rg = a.requires_grad() || v.requires_grad();
    int ai = a.id, vi = v.id;
    return make(tape_of(a), std::move(out), rg, [ai, vi](Tape& t, const Matrix& g) {
        t.accumulate(ai, g);
        Matrix gv(1, g.cols());
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
        t.accumulate(vi, gv);
    });
}

Var row_normalize(Var a) {
    int ai = a.id;
    const Matrix& av = a.value();
    Matrix out = av;
    std::vector<double> sums(av.rows());
    for (int i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < av.cols(); ++j) s += av(i, j);
        if (s == 0.0) throw std::runtime_error("row_normalize: zero row sum");
        sums[i] = s;
        for (int j = 0; j < av.cols(); ++j) out(i, j) /= s;
    }
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, sums = std::move(sums)](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga(av.rows(), av.cols());
                    for (int i = 0; i < av.rows(); ++i) {
                        double dot = 0.0;
                        for (int j = 0; j < av.cols(); ++j) dot += g(i, j) * av(i, j);
                        double s = sums[i];
                        for (int j = 0; j < av.cols(); ++j) ga(i, j) = g(i, j) / s - dot / (s * s);
                    }
                    t.accumulate(ai, ga);
                });
}

Var row_l2_normalize(Var a, double floor) {
    int ai = a.id;
    const Matrix& av = a.value();
    Matrix out = av;
    std::vector<double> norms(av.rows());
    std::vector<char> clamped(av.rows());
    for (int i = 0; i < av.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < av.cols(); ++j) s += av(i, j) * av(i, j);
        double n = std::sqrt(s);
        clamped[i] = n <= floor;
        norms[i] = clamped[i] ? floor : n;
        for (int j = 0; j < av.cols(); ++j) out(i, j) /= norms[i];
    }
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, norms = std::move(norms), clamped = std::move(clamped)](Tape& t, const Matrix& g) {
                    const Matrix& av = t.value_of(ai);
                    Matrix ga(av.rows(), av.cols());
                    for (int i = 0; i < av.rows(); ++i) {
                        double n = norms[i];
                        if (clamped[i]) {
                            for (int j = 0; j < av.cols(); ++j) ga(i, j) = g(i, j) / n;
                            continue;
                        }
                        double dot = 0.0;
                        for (int j = 0; j < av.cols(); ++j) dot += g(i, j) * av(i, j);
                        for (int j = 0; j < av.cols(); ++j)
                            ga(i, j) = g(i, j) / n - av(i, j) * dot / (n * n * n);
                    }
                    t.accumulate(ai, ga);
                });
}

Var log_softmax_rows(Var a) {
    int ai = a.id;
    const Matrix& av = a.value();
    require_finite(av, "log_softmax_rows: input");
    Matrix out(av.rows(), av.cols());
    Matrix probs(av.rows(), av.cols());
    for (int i = 0; i < av.rows(); ++i) {
        double m = av(i, 0);
        for (int j = 1; j < av.cols(); ++j) m = std::max(m, av(i, j));
        double sum = 0.0;
        for (int j = 0; j < av.cols(); ++j) sum += std::exp(av(i, j) - m);
        double lse = m + std::log(sum);
        for (int j = 0; j < av.cols(); ++j) {
            out(i, j) = av(i, j) - lse;
            probs(i, j) = std::exp(out(i, j));
        }
    }
    return make(tape_of(a), std::move(out), a.requires_grad(),
                [ai, probs = std::move(probs)](Tape& t, const Matrix& g) {
                    Matrix ga(probs.rows(), probs.cols());
                    for (int i = 0; i < g.rows(); ++i) {
                        double gsum = 0.0;
                        for (int j = 0; j < g.cols(); ++j) gsum += g(i, j);
                        for (int j = 0; j < g.cols(); ++j) ga(i, j) = g(i, j) - probs(i, j) * gsum;
                    }
                    t.accumulate(ai, ga);
                });
}

Var softmax_rows(Var a) { return exp(log_softmax_rows(a)); }

}  // namespace ccl::ad
