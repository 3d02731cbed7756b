#include "ccl/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>

#include "ccl/framework.hpp"
#include "ccl/model.hpp"
#include "ccl/pipeline.hpp"
#include "ccl/rng.hpp"
#include "ccl/tape.hpp"

namespace ccl {

namespace {

struct Instance {
    std::vector<std::pair<int, int>> shapes;
    std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)> build;  // scalar loss
};

std::vector<double> flatten_initial(const std::vector<Matrix>& tensors) {
    std::vector<double> out;
    for (const Matrix& m : tensors) out.insert(out.end(), m.data().begin(), m.data().end());
    return out;
}

DiffFunction make_diff(const Instance& inst) {
    auto run = [inst](std::span<const double> params, bool want_grad,
                      std::vector<double>* grad_out) -> double {
        ad::Tape tape;
        std::vector<ad::Var> leaves;
        std::size_t offset = 0;
        for (auto [r, c] : inst.shapes) {
            std::size_t n = static_cast<std::size_t>(r) * c;
            Matrix m(r, c, std::vector<double>(params.begin() + offset, params.begin() + offset + n));
            offset += n;
            leaves.push_back(tape.leaf(std::move(m)));
        }
        ad::Var loss = inst.build(tape, leaves);
        if (want_grad) {
            tape.backward(loss);
            grad_out->clear();
            for (const ad::Var& leaf : leaves) {
                const Matrix& g = leaf.grad();
                grad_out->insert(grad_out->end(), g.data().begin(), g.data().end());
            }
        }
        return loss.scalar();
    };
    DiffFunction fn;
    fn.value = [run](std::span<const double> p) { return run(p, false, nullptr); };
    fn.gradient = [run](std::span<const double> p) {
        std::vector<double> g;
        run(p, true, &g);
        return g;
    };
    return fn;
}

Matrix random_matrix(int rows, int cols, RandomStream& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (double& x : m.data()) x = scale * rng.normal();
    return m;
}

Matrix random_prob_rows(int rows, int cols, RandomStream& rng) {
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            m(i, j) = 0.05 + rng.uniform();
            sum += m(i, j);
        }
        for (int j = 0; j < cols; ++j) m(i, j) /= sum;
    }
    return m;
}

ProbVector random_prior(int c, RandomStream& rng) {
    std::vector<double> v(c);
    for (double& x : v) x = 0.1 + rng.uniform();
    return ProbVector::normalized(std::move(v));
}

GradCheckCase check_case(const std::string& name, const Instance& inst,
                         const std::vector<Matrix>& initial, double step) {
    std::vector<double> params = flatten_initial(initial);
    GradCheckCase out{name, check_gradient(make_diff(inst), params, step)};
    return out;
}

}  // namespace

std::vector<GradCheckCase> run_loss_gradient_suite(int num_seeds, double step) {
    std::vector<GradCheckCase> cases;
    const KernelConfig kernel{1.0};

    for (int seed = 0; seed < num_seeds; ++seed) {
        RandomStream rng = seeded_rng(1000 + static_cast<std::uint64_t>(seed));
        auto tag = [&](const std::string& base) { return base + " (seed " + std::to_string(seed) + ")"; };

        const int c = 4;
        const int b = 8;
        const int dim = 5;
        std::vector<int> labels = {0, 0, 1, 1, 2, 2, 3, 3};

        // unified objective over one logit row
        {
            ProbVector soft = random_prior(c, rng);
            ProbVector source = random_prior(c, rng);
            ProbVector chosen = random_prior(c, rng);
            Instance inst{{{1, c}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return unified_loss_J(t, soft, v[0], source, chosen);
                          }};
            cases.push_back(check_case(tag("unified_loss_J"), inst, {random_matrix(1, c, rng)}, step));
        }

        // kernel posterior cross-entropy, both self-exclusion modes
        for (bool exclude_self : {true, false}) {
            Instance inst{{{b, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              ad::Var rows = kernel_posterior_rows(t, z, labels, c, kernel, exclude_self);
                              ad::Var picked = ad::pick_per_row(ad::log_floored(rows, 1e-12), labels);
                              return ad::mul_scalar(ad::mean_all(picked), -1.0);
                          }};
            std::string name = exclude_self ? "kernel_posterior_ce(exclude_self)"
                                            : "kernel_posterior_ce(include_self)";
            cases.push_back(check_case(tag(name), inst, {random_matrix(b, dim, rng)}, step));
        }

        // supervised contrastive forms
        {
            Instance inst{{{b, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return scl_in_loss(t, ad::row_l2_normalize(v[0], 1e-12), labels, 0, kernel);
                          }};
            cases.push_back(check_case(tag("scl_in"), inst, {random_matrix(b, dim, rng)}, step));
        }
        {
            Instance inst{{{b, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return scl_out_loss(t, ad::row_l2_normalize(v[0], 1e-12), labels, 0, kernel);
                          }};
            cases.push_back(check_case(tag("scl_out"), inst, {random_matrix(b, dim, rng)}, step));
        }

        // loss zoo
        {
            ProbVector prior = random_prior(c, rng);
            Instance inst{{{b, dim}, {c, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              ad::Var protos = ad::row_l2_normalize(v[1], 1e-12);
                              return bcl_loss(t, z, labels, 1, c, prior, protos, kernel);
                          }};
            cases.push_back(check_case(tag("zoo_bcl"), inst,
                                       {random_matrix(b, dim, rng), random_matrix(c, dim, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            GmlQueues queues(c, dim, 8);
            for (int k = 0; k < c; ++k)
                for (int j = 0; j < 3; ++j) {
                    Matrix q = random_matrix(1, dim, rng);
                    double norm = 0.0;
                    for (double x : q.data()) norm += x * x;
                    norm = std::sqrt(norm);
                    for (double& x : q.data()) x /= norm;
                    queues.push(k, q.row(0));
                }
            auto queues_ptr = std::make_shared<GmlQueues>(queues);
            Instance inst{{{b, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              return gml_loss(t, z, labels, 2, c, prior, *queues_ptr, kernel);
                          }};
            cases.push_back(check_case(tag("zoo_gml"), inst, {random_matrix(b, dim, rng)}, step));
        }
        {
            Instance inst{{{b, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              return kcl_loss(t, z, labels, 0, {1}, kernel);
                          }};
            cases.push_back(check_case(tag("zoo_kcl"), inst, {random_matrix(b, dim, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            Instance inst{{{b, dim}, {c, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              ad::Var centers = ad::row_l2_normalize(v[1], 1e-12);
                              return paco_loss(t, z, labels, 3, c, centers, 0.6, prior, kernel);
                          }};
            cases.push_back(check_case(tag("zoo_paco"), inst,
                                       {random_matrix(b, dim, rng), random_matrix(c, dim, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            Instance inst{{{1, dim}, {c, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              ad::Var centers = ad::row_l2_normalize(v[1], 1e-12);
                              return tvmf_loss(t, z, 2, centers, 0.9, 4.0, prior);
                          }};
            cases.push_back(check_case(tag("zoo_tvmf"), inst,
                                       {random_matrix(1, dim, rng), random_matrix(c, dim, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            Matrix theta(1, c);
            for (int k = 0; k < c; ++k) theta(0, k) = 1.6 * rng.uniform() - 0.8;
            Instance inst{{{1, dim}, {c, dim}, {1, c}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return wcdas_loss(t, v[0], 1, v[1], v[2], prior);
                          }};
            cases.push_back(check_case(
                tag("zoo_wcdas"), inst,
                {random_matrix(1, dim, rng), random_matrix(c, dim, rng), theta}, step));
        }

        // pipeline losses
        {
            ProbVector prior = random_prior(c, rng);
            Instance inst{{{b, c}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return balanced_labeled_loss(t, v[0], labels, prior, 2.0);
                          }};
            cases.push_back(check_case(tag("balanced_labeled_loss"), inst, {random_matrix(b, c, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            SelectionMask mask{SelectionKind::Confidence, 0.5, 1.0, {1, 0, 1, 1, 0, 1, 0, 1}};
            std::vector<int> pseudo = {1, 0, 2, 3, 1, 0, 2, 3};
            Instance inst{{{b, c}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              return unlabeled_consistency_loss(t, v[0], pseudo, prior, 2.0, mask);
                          }};
            cases.push_back(
                check_case(tag("unlabeled_consistency_loss"), inst, {random_matrix(b, c, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            Matrix soft = random_prob_rows(6, c, rng);
            Instance inst{{{6, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z = ad::row_l2_normalize(v[0], 1e-12);
                              return reliable_contrastive_loss(t, z, soft, prior, kernel);
                          }};
            cases.push_back(
                check_case(tag("reliable_contrastive_loss"), inst, {random_matrix(6, dim, rng)}, step));
        }
        {
            ProbVector prior = random_prior(c, rng);
            std::vector<int> small_labels = {0, 1, 2, 3, 0, 1};
            Matrix weak_target = random_prob_rows(5, c, rng);
            Instance inst{{{5, dim}, {6, dim}}, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ad::Var z_u = ad::row_l2_normalize(v[0], 1e-12);
                              ad::Var z_l = ad::row_l2_normalize(v[1], 1e-12);
                              ad::Var p_l = labeled_kernel_posterior_for_unlabeled(
                                  t, z_u, z_l, small_labels, c, prior, kernel);
                              ad::Var prop = propagate(t, p_l, z_u, 0.3, kernel);
                              return smoothed_consistency_loss(t, weak_target, prop);
                          }};
            cases.push_back(check_case(tag("smoothed_pipeline"), inst,
                                       {random_matrix(5, dim, rng), random_matrix(6, dim, rng)}, step));
        }

        // composite objective through the full model
        {
            ModelConfig mc{3, {6}, 4, 3, 1.0};
            RandomStream init_rng = seeded_rng(777 + static_cast<std::uint64_t>(seed));
            ModelState state = init_model(mc, init_rng);
            std::vector<Matrix> initial;
            std::vector<std::pair<int, int>> shapes;
            for (const ParamRef& p : parameters(state)) {
                initial.push_back(*p.tensor);
                shapes.emplace_back(p.tensor->rows(), p.tensor->cols());
            }
            Matrix labeled_batch = random_matrix(4, 3, rng);
            Matrix strong_batch = random_matrix(4, 3, rng);
            std::vector<int> y_l = {0, 1, 2, 0};
            std::vector<int> pseudo = {2, 1, 0, 2};
            ProbVector pi_l = random_prior(3, rng);
            ProbVector pi_u = random_prior(3, rng);
            Matrix soft = random_prob_rows(8, 3, rng);
            Matrix weak_target = random_prob_rows(4, 3, rng);
            SelectionMask mask{SelectionKind::Confidence, 0.5, 1.0, {1, 1, 0, 1}};
            Instance inst{shapes, [=](ad::Tape& t, const std::vector<ad::Var>& v) {
                              ModelVars vars;
                              vars.params = v;
                              std::size_t i = 0;
                              for (std::size_t l = 0; l < mc.hidden_dims.size(); ++l, i += 2)
                                  vars.encoder.emplace_back(v[i], v[i + 1]);
                              vars.head_standard = {v[i], v[i + 1]};
                              vars.head_balanced = {v[i + 2], v[i + 3]};
                              vars.projection = {v[i + 4], v[i + 5]};
                              ForwardVars fl = forward(t, vars, labeled_batch);
                              ForwardVars fs = forward(t, vars, strong_batch);
                              ad::Var cls = ad::add(
                                  balanced_labeled_loss(t, fl.logits_b, y_l, pi_l, 2.0),
                                  plain_ce_loss(t, fl.logits_s, y_l));
                              cls = ad::add(cls, unlabeled_consistency_loss(t, fs.logits_b, pseudo,
                                                                            pi_u, 2.0, mask));
                              ad::Var z_all = ad::concat_rows(fl.embeddings, fs.embeddings);
                              ad::Var rpl = reliable_contrastive_loss(t, z_all, soft, pi_u, kernel);
                              ad::Var p_l = labeled_kernel_posterior_for_unlabeled(
                                  t, fs.embeddings, fl.embeddings, y_l, 3, pi_u, kernel);
                              ad::Var spl = smoothed_consistency_loss(
                                  t, weak_target, propagate(t, p_l, fs.embeddings, 0.2, kernel));
                              return total_loss(t, cls, rpl, spl, 0.7, 1.0);
                          }};
            cases.push_back(check_case(tag("total_loss_through_model"), inst, initial, step));
        }
    }
    return cases;
}

double worst_relative_error(const std::vector<GradCheckCase>& cases) {
    double worst = 0.0;
    for (const GradCheckCase& c : cases) worst = std::max(worst, c.report.max_rel_err);
    return worst;
}

}  // namespace ccl
