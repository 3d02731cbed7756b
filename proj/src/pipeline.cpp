#include "ccl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "ccl/linalg.hpp"

namespace ccl {

namespace {

constexpr double kLogFloor = 1e-12;

std::vector<double> log_prior_times(const ProbVector& pi, double tau) {
    std::vector<double> out(pi.size());
    for (std::size_t k = 0; k < pi.size(); ++k) out[k] = tau * std::log(std::max(pi[k], kLogFloor));
    return out;
}

Matrix one_hot_rows(const std::vector<int>& labels, int num_classes) {
    Matrix m(static_cast<int>(labels.size()), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) m(static_cast<int>(i), labels[i]) = 1.0;
    return m;
}

}  // namespace

PriorEstimate update_prior(const PriorEstimate& estimate, const Matrix& selected_posterior_rows) {
    if (selected_posterior_rows.rows() == 0) return estimate;
    const int c = static_cast<int>(estimate.pi_u_hat.size());
    if (selected_posterior_rows.cols() != c)
        throw std::invalid_argument("update_prior: posterior width mismatch");
    std::vector<double> mean(c, 0.0);
    for (int i = 0; i < selected_posterior_rows.rows(); ++i)
        for (int k = 0; k < c; ++k) mean[k] += selected_posterior_rows(i, k);
    for (int k = 0; k < c; ++k) mean[k] /= selected_posterior_rows.rows();

    std::vector<double> next(c);
    for (int k = 0; k < c; ++k)
        next[k] = (1.0 - estimate.alpha) * estimate.pi_u_hat[k] + estimate.alpha * mean[k];
    PriorEstimate out{ProbVector::normalized(std::move(next)), estimate.alpha,
                      estimate.update_count + 1};
    return out;
}

int SelectionMask::count() const {
    return static_cast<int>(std::count(flags.begin(), flags.end(), static_cast<char>(1)));
}

std::vector<int> SelectionMask::selected_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < flags.size(); ++i)
        if (flags[i]) out.push_back(static_cast<int>(i));
    return out;
}

double energy_score(std::span<const double> logits_row, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("energy_score: temperature must be > 0");
    double m = logits_row[0];
    for (double x : logits_row) m = std::max(m, x);
    double sum = 0.0;
    for (double x : logits_row) sum += std::exp((x - m) / temperature);
    return -temperature * std::log(sum) - m;
}

SelectionMask build_energy_mask(const Matrix& logits, double zeta, double temperature) {
    SelectionMask mask{SelectionKind::Energy, zeta, temperature, {}};
    mask.flags.resize(logits.rows());
    for (int i = 0; i < logits.rows(); ++i)
        mask.flags[i] = energy_score(logits.row(i), temperature) <= zeta ? 1 : 0;
    return mask;
}

SelectionMask build_confidence_mask(const Matrix& posterior_rows, double threshold) {
    SelectionMask mask{SelectionKind::Confidence, threshold, 1.0, {}};
    mask.flags.resize(posterior_rows.rows());
    for (int i = 0; i < posterior_rows.rows(); ++i) {
        auto row = posterior_rows.row(i);
        double best = *std::max_element(row.begin(), row.end());
        mask.flags[i] = best >= threshold ? 1 : 0;
    }
    return mask;
}

Matrix adjust_posterior_rows(const Matrix& posterior_rows, const ProbVector& pi) {
    if (posterior_rows.cols() != static_cast<int>(pi.size()))
        throw std::invalid_argument("adjust_posterior_rows: width mismatch");
    Matrix out = posterior_rows;
    for (int i = 0; i < out.rows(); ++i) {
        double sum = 0.0;
        for (int k = 0; k < out.cols(); ++k) {
            out(i, k) *= pi[k];
            sum += out(i, k);
        }
        if (sum <= 0.0) throw std::runtime_error("adjust_posterior_rows: zero normalizer");
        for (int k = 0; k < out.cols(); ++k) out(i, k) /= sum;
    }
    return out;
}

FusedPosterior fuse_branches(const Matrix& post_b_adjusted, const Matrix& post_s,
                             const ProbVector& pi_star) {
    require_same_shape(post_b_adjusted, post_s, "fuse_branches");
    Matrix reweighted = adjust_posterior_rows(post_s, pi_star);
    FusedPosterior out;
    out.rows = Matrix(post_b_adjusted.rows(), post_b_adjusted.cols());
    for (int i = 0; i < out.rows.rows(); ++i)
        for (int k = 0; k < out.rows.cols(); ++k)
            out.rows(i, k) = 0.5 * post_b_adjusted(i, k) + 0.5 * reweighted(i, k);
    out.pseudo_labels.resize(out.rows.rows());
    for (int i = 0; i < out.rows.rows(); ++i) out.pseudo_labels[i] = argmax_lowest(out.rows.row(i));
    out.pi_star = pi_star;
    return out;
}

ad::Var balanced_labeled_loss(ad::Tape& tape, ad::Var logits_b, const std::vector<int>& labels,
                              const ProbVector& pi_l, double tau) {
    if (!pi_l.strictly_positive())
        throw std::invalid_argument("balanced_labeled_loss: prior must be strictly positive");
    if (static_cast<int>(labels.size()) != logits_b.rows())
        throw std::invalid_argument("balanced_labeled_loss: one label per row required");
    ad::Var adjusted =
        ad::add_rowvec(logits_b, tape.constant(Matrix::row_vector(log_prior_times(pi_l, tau))));
    ad::Var picked = ad::pick_per_row(ad::log_softmax_rows(adjusted), labels);
    return ad::mul_scalar(ad::mean_all(picked), -1.0);
}

double balanced_labeled_loss(const Matrix& logits_b, const std::vector<int>& labels,
                             const ProbVector& pi_l, double tau) {
    ad::Tape tape;
    return balanced_labeled_loss(tape, tape.constant(logits_b), labels, pi_l, tau).scalar();
}

ad::Var plain_ce_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                      const std::vector<int>& rows) {
    ad::Var used = logits;
    std::vector<int> used_labels = labels;
    if (!rows.empty()) {
        used = ad::select_rows(logits, rows);
        used_labels.clear();
        for (int r : rows) used_labels.push_back(labels[r]);
    }
    (void)tape;
    ad::Var picked = ad::pick_per_row(ad::log_softmax_rows(used), used_labels);
    return ad::mul_scalar(ad::mean_all(picked), -1.0);
}

ad::Var unlabeled_consistency_loss(ad::Tape& tape, ad::Var logits_b_strong,
                                   const std::vector<int>& pseudo_labels, const ProbVector& pi_u,
                                   double tau, const SelectionMask& mask) {
    if (static_cast<int>(mask.flags.size()) != logits_b_strong.rows())
        throw std::invalid_argument("unlabeled_consistency_loss: mask length mismatch");
    std::vector<int> rows = mask.selected_indices();
    if (rows.empty()) return tape.scalar_constant(0.0);
    ad::Var adjusted = ad::add_rowvec(
        logits_b_strong, tape.constant(Matrix::row_vector(log_prior_times(pi_u, tau))));
    ad::Var picked_rows = ad::select_rows(ad::log_softmax_rows(adjusted), rows);
    std::vector<int> picked_labels;
    for (int r : rows) picked_labels.push_back(pseudo_labels[r]);
    return ad::mul_scalar(ad::mean_all(ad::pick_per_row(picked_rows, picked_labels)), -1.0);
}

double unlabeled_consistency_loss(const Matrix& logits_b_strong,
                                  const std::vector<int>& pseudo_labels, const ProbVector& pi_u,
                                  double tau, const SelectionMask& mask) {
    ad::Tape tape;
    return unlabeled_consistency_loss(tape, tape.constant(logits_b_strong), pseudo_labels, pi_u, tau,
                                      mask)
        .scalar();
}

ad::Var reliable_contrastive_loss(ad::Tape& tape, ad::Var unit_embeddings,
                                  const Matrix& soft_labels, const ProbVector& pi_u,
                                  const KernelConfig& kernel,
                                  const std::optional<Matrix>& prototypes) {
    const int b = unit_embeddings.rows();
    const int c = soft_labels.cols();
    if (soft_labels.rows() != b)
        throw std::invalid_argument("reliable_contrastive_loss: one soft label row per sample");
    if (b < 2) throw std::invalid_argument("reliable_contrastive_loss: need at least two samples");
    if (static_cast<int>(pi_u.size()) != c)
        throw std::invalid_argument("reliable_contrastive_loss: prior width mismatch");

    Matrix off_diag = Matrix::filled(b, b, 1.0);
    for (int i = 0; i < b; ++i) off_diag(i, i) = 0.0;

    ad::Var sims = ad::exp(ad::mul_scalar(ad::matmul_bt(unit_embeddings, unit_embeddings),
                                          1.0 / kernel.temperature));
    ad::Var sims_noself = ad::mul(sims, tape.constant(off_diag));
    ad::Var weighted = ad::matmul(sims_noself, tape.constant(soft_labels));  // [B x C]

    // per-query normalizers: total soft mass of each class with the query removed
    std::vector<double> class_mass(c, 0.0);
    for (int i = 0; i < b; ++i)
        for (int k = 0; k < c; ++k) class_mass[k] += soft_labels(i, k);
    Matrix inv_mass(b, c);
    Matrix proto_fill(b, c);
    bool need_proto = false;
    for (int i = 0; i < b; ++i)
        for (int k = 0; k < c; ++k) {
            double m = class_mass[k] - soft_labels(i, k);
            if (m < kLogFloor) {
                proto_fill(i, k) = 1.0;
                need_proto = true;
            } else {
                inv_mass(i, k) = 1.0 / m;
            }
        }

    ad::Var class_expectation = ad::mul(weighted, tape.constant(inv_mass));
    if (need_proto) {
        if (!prototypes)
            throw std::runtime_error("reliable_contrastive_loss: zero class mass without prototypes");
        ad::Var proto_sims = ad::exp(ad::mul_scalar(
            ad::matmul_bt(unit_embeddings, tape.constant(*prototypes)), 1.0 / kernel.temperature));
        class_expectation =
            ad::add(class_expectation, ad::mul(proto_sims, tape.constant(proto_fill)));
    }

    std::vector<double> prior_row(pi_u.values().begin(), pi_u.values().end());
    ad::Var posterior = ad::row_normalize(
        ad::mul_rowvec(class_expectation, tape.constant(Matrix::row_vector(prior_row))));
    ad::Var crossed = ad::mul(ad::log_floored(posterior, kLogFloor), tape.constant(soft_labels));
    return ad::mul_scalar(ad::total_sum(crossed), -1.0 / static_cast<double>(b));
}

ad::Var labeled_kernel_posterior_for_unlabeled(ad::Tape& tape, ad::Var z_unlabeled,
                                               ad::Var z_labeled, const std::vector<int>& labels,
                                               int num_classes, const ProbVector& pi_u,
                                               const KernelConfig& kernel,
                                               const std::optional<Matrix>& prototypes) {
    if (static_cast<int>(labels.size()) != z_labeled.rows())
        throw std::invalid_argument("labeled_kernel_posterior: one label per labeled row required");
    if (static_cast<int>(pi_u.size()) != num_classes)
        throw std::invalid_argument("labeled_kernel_posterior: prior width mismatch");

    std::vector<int> sizes(num_classes, 0);
    for (int y : labels) sizes[y]++;

    ad::Var sims = ad::exp(
        ad::mul_scalar(ad::matmul_bt(z_unlabeled, z_labeled), 1.0 / kernel.temperature));

    Matrix indicator(static_cast<int>(labels.size()), num_classes);
    Matrix keep_cols(1, num_classes);
    Matrix proto_cols(1, num_classes);
    bool need_proto = false;
    for (int k = 0; k < num_classes; ++k) {
        if (sizes[k] == 0) {
            if (!prototypes)
                throw std::runtime_error("labeled_kernel_posterior: class " + std::to_string(k) +
                                         " unrepresented");
            proto_cols(0, k) = 1.0;
            need_proto = true;
        } else {
            keep_cols(0, k) = 1.0;
        }
    }
    for (std::size_t j = 0; j < labels.size(); ++j)
        indicator(static_cast<int>(j), labels[j]) = 1.0 / sizes[labels[j]];

    ad::Var class_means = ad::matmul(sims, tape.constant(indicator));
    if (need_proto) {
        ad::Var proto_sims = ad::exp(ad::mul_scalar(
            ad::matmul_bt(z_unlabeled, tape.constant(*prototypes)), 1.0 / kernel.temperature));
        class_means = ad::add(ad::mul_rowvec(class_means, tape.constant(keep_cols)),
                              ad::mul_rowvec(proto_sims, tape.constant(proto_cols)));
    }
    std::vector<double> prior_row(pi_u.values().begin(), pi_u.values().end());
    return ad::row_normalize(
        ad::mul_rowvec(class_means, tape.constant(Matrix::row_vector(prior_row))));
}

ad::Var propagate(ad::Tape& tape, ad::Var labeled_posterior, ad::Var z_unlabeled, double beta,
                  const KernelConfig& kernel) {
    if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("propagate: beta must be in [0,1)");
    const int b = z_unlabeled.rows();
    if (labeled_posterior.rows() != b)
        throw std::invalid_argument("propagate: posterior row count mismatch");
    ad::Var graph = ad::row_normalize(ad::exp(
        ad::mul_scalar(ad::matmul_bt(z_unlabeled, z_unlabeled), 1.0 / kernel.temperature)));
    ad::Var system = ad::sub(tape.constant(Matrix::identity(b)), ad::mul_scalar(graph, beta));
    return ad::mul_scalar(ad::solve(system, labeled_posterior), 1.0 - beta);
}

Matrix kernel_graph(const Matrix& z_unlabeled, const KernelConfig& kernel) {
    ad::Tape tape;
    ad::Var g = ad::row_normalize(ad::exp(ad::mul_scalar(
        ad::matmul_bt(tape.constant(z_unlabeled), tape.constant(z_unlabeled)),
        1.0 / kernel.temperature)));
    return g.value();
}

Matrix propagate(const Matrix& labeled_posterior, const Matrix& z_unlabeled, double beta,
                 const KernelConfig& kernel) {
    ad::Tape tape;
    return propagate(tape, tape.constant(labeled_posterior), tape.constant(z_unlabeled), beta, kernel)
        .value();
}

ad::Var smoothed_consistency_loss(ad::Tape& tape, const Matrix& prop_weak, ad::Var prop_strong) {
    require_same_shape(prop_weak, prop_strong.value(), "smoothed_consistency_loss");
    ad::Var crossed = ad::mul(ad::log_floored(prop_strong, kLogFloor), tape.constant(prop_weak));
    return ad::mul_scalar(ad::total_sum(crossed), -1.0 / static_cast<double>(prop_weak.rows()));
}

double smoothed_consistency_loss(const Matrix& prop_weak, const Matrix& prop_strong) {
    ad::Tape tape;
    return smoothed_consistency_loss(tape, prop_weak, tape.constant(prop_strong)).scalar();
}

ad::Var total_loss(ad::Tape& tape, ad::Var loss_cls, ad::Var loss_rpl, ad::Var loss_spl,
                   double lambda1, double lambda2) {
    (void)tape;
    if (!(lambda1 >= 0.0 && lambda1 <= 1.0)) throw std::invalid_argument("total_loss: lambda1 in [0,1]");
    if (!(lambda2 >= 0.0)) throw std::invalid_argument("total_loss: lambda2 >= 0");
    return ad::add(ad::add(ad::mul_scalar(loss_cls, lambda1), ad::mul_scalar(loss_rpl, 1.0 - lambda1)),
                   ad::mul_scalar(loss_spl, lambda2));
}

std::string metric_csv_header() {
    return "step,top1,ece,prior_l1,masked_fraction,loss_cls,loss_rpl,loss_spl,lr";
}

std::string metric_csv_row(const MetricRow& row) {
    char buf[320];
    std::snprintf(buf, sizeof(buf), "%ld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g", row.step,
                  row.top1, row.ece, row.prior_l1, row.masked_fraction, row.loss_cls, row.loss_rpl,
                  row.loss_spl, row.lr);
    return buf;
}

namespace {

Matrix softmax_rows_values(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (int i = 0; i < logits.rows(); ++i) {
        std::vector<double> p = softmax(logits.row(i));
        std::copy(p.begin(), p.end(), out.row(i).begin());
    }
    return out;
}

Matrix select_rows_values(const Matrix& m, const std::vector<int>& rows) {
    Matrix out(static_cast<int>(rows.size()), m.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
        std::copy(m.row(rows[r]).begin(), m.row(rows[r]).end(), out.row(static_cast<int>(r)).begin());
    return out;
}

// Per-class EMA prototypes of labeled embeddings, kept unit-norm and detached.
class PrototypeBank {
public:
    PrototypeBank(int num_classes, int embed_dim, double alpha, RandomStream& rng)
        : alpha_(alpha), bank_(num_classes, embed_dim) {
        for (int k = 0; k < num_classes; ++k) {
            double norm = 0.0;
            for (int j = 0; j < embed_dim; ++j) {
                bank_(k, j) = rng.normal();
                norm += bank_(k, j) * bank_(k, j);
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (int j = 0; j < embed_dim; ++j) bank_(k, j) /= norm;
        }
    }

    void update(const Matrix& embeddings, const std::vector<int>& labels) {
        const int c = bank_.rows();
        std::vector<int> counts(c, 0);
        Matrix sums(c, bank_.cols());
        for (std::size_t i = 0; i < labels.size(); ++i) {
            counts[labels[i]]++;
            for (int j = 0; j < bank_.cols(); ++j)
                sums(labels[i], j) += embeddings(static_cast<int>(i), j);
        }
        for (int k = 0; k < c; ++k) {
            if (counts[k] == 0) continue;
            double norm = 0.0;
            for (int j = 0; j < bank_.cols(); ++j) {
                double blend = (1.0 - alpha_) * bank_(k, j) + alpha_ * sums(k, j) / counts[k];
                bank_(k, j) = blend;
                norm += blend * blend;
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (int j = 0; j < bank_.cols(); ++j) bank_(k, j) /= norm;
        }
    }

    const Matrix& matrix() const { return bank_; }

private:
    double alpha_;
    Matrix bank_;
};

struct EvalContext {
    const RunConfig& config;
    const GeneratedData& data;
    const ProbVector& pi_l;
    const ProbVector& true_pi_u;
};

MetricRow evaluate_step(const EvalContext& ctx, const ModelState& model, const PriorEstimate& prior,
                        long step, double lr) {
    MetricRow row;
    row.step = step;
    row.lr = lr;

    EvalReport report = evaluate(model, ctx.data.test_features, ctx.data.test_labels);
    row.top1 = report.top1;
    row.prior_l1 = prior_l1(prior.pi_u_hat, ctx.true_pi_u);

    // calibration of the fused pseudo-label posterior on the selected subset
    ForwardOutput pool = forward_values(model, ctx.data.unlabeled.features);
    Matrix post_b = adjust_posterior_rows(softmax_rows_values(pool.logits_b), prior.pi_u_hat);
    Matrix fused_rows = post_b;
    if (ctx.config.ablation.dual_branch) {
        std::vector<double> ratio(ctx.pi_l.size());
        for (std::size_t k = 0; k < ratio.size(); ++k)
            ratio[k] = prior.pi_u_hat[k] / (ctx.pi_l[k] + prior.pi_u_hat[k]);
        FusedPosterior fused = fuse_branches(post_b, softmax_rows_values(pool.logits_s),
                                             ProbVector::normalized(std::move(ratio)));
        fused_rows = fused.rows;
    }
    SelectionMask selector =
        ctx.config.ablation.energy_mask
            ? build_energy_mask(pool.logits_b, ctx.config.ccl.energy_zeta, ctx.config.ccl.energy_temp)
            : build_confidence_mask(fused_rows, ctx.config.ccl.conf_threshold);
    std::vector<double> confidences;
    std::vector<char> correct;
    for (int i = 0; i < fused_rows.rows(); ++i) {
        if (!selector.flags[i]) continue;
        auto r = fused_rows.row(i);
        int pred = argmax_lowest(r);
        confidences.push_back(r[pred]);
        correct.push_back(pred == ctx.data.unlabeled.true_labels[i] ? 1 : 0);
    }
    row.ece = expected_calibration_error(confidences, correct, 15);
    row.selected_fraction = static_cast<double>(selector.count()) / fused_rows.rows();
    if (!correct.empty())
        row.pseudo_acc_selected =
            static_cast<double>(std::count(correct.begin(), correct.end(), static_cast<char>(1))) /
            correct.size();
    return row;
}

}  // namespace

RunResult train(const RunConfig& config, std::uint64_t seed) {
    config.validate();
    DatasetSpec dspec = config.data;
    dspec.seed = seed;
    GeneratedData data = generate_dataset(dspec);

    RandomStream rng = seeded_rng(seed ^ 0x9e3779b97f4a7c15ull);
    ModelState model = init_model(config.model_config(), rng);

    const int c = config.data.num_classes;
    std::vector<double> labeled_counts(data.labeled.class_counts.begin(),
                                       data.labeled.class_counts.end());
    std::vector<double> unlabeled_counts(data.unlabeled.class_counts.begin(),
                                         data.unlabeled.class_counts.end());
    const ProbVector pi_l = ProbVector::normalized(labeled_counts);
    const ProbVector true_pi_u = ProbVector::normalized(unlabeled_counts);

    PriorEstimate prior{ProbVector::uniform(c), config.ccl.alpha, 0};
    PrototypeBank prototypes(c, config.embed_dim, config.ccl.alpha, rng);
    const KernelConfig kernel{config.ccl.kernel_tc};
    const double lambda1 = config.ablation.reliable_pl ? config.ccl.lambda1 : 1.0;
    const double lambda2 = config.ablation.smoothed_pl ? config.ccl.lambda2 : 0.0;

    EvalContext eval_ctx{config, data, pi_l, true_pi_u};

    RunResult result;
    result.rows.push_back(
        evaluate_step(eval_ctx, model, prior, 0, cosine_lr(config.train.base_lr, 0, config.train.steps)));

    double acc_cls = 0.0, acc_rpl = 0.0, acc_spl = 0.0, acc_masked = 0.0;
    long acc_steps = 0;

    for (long step = 1; step <= config.train.steps; ++step) {
        const double lr = cosine_lr(config.train.base_lr, step - 1, config.train.steps);
        try {
        BatchPair batch = sample_batches(data.labeled, data.unlabeled, config.train.batch_size,
                                         config.data.noise_scale, rng);
        Matrix labeled_weak =
            augment(batch.labeled.features, AugmentKind::Weak, config.data.noise_scale, rng);

        // weak unlabeled view: detached teacher signals
        ForwardOutput weak = forward_values(model, batch.unlabeled.weak);
        Matrix post_b_adj = adjust_posterior_rows(softmax_rows_values(weak.logits_b), prior.pi_u_hat);
        FusedPosterior fused;
        if (config.ablation.dual_branch) {
            std::vector<double> ratio(pi_l.size());
            for (std::size_t k = 0; k < ratio.size(); ++k)
                ratio[k] = prior.pi_u_hat[k] / (pi_l[k] + prior.pi_u_hat[k]);
            fused = fuse_branches(post_b_adj, softmax_rows_values(weak.logits_s),
                                  ProbVector::normalized(std::move(ratio)));
        } else {
            fused.rows = post_b_adj;
            fused.pseudo_labels.resize(post_b_adj.rows());
            for (int i = 0; i < post_b_adj.rows(); ++i)
                fused.pseudo_labels[i] = argmax_lowest(post_b_adj.row(i));
            fused.pi_star = ProbVector::uniform(c);
        }

        SelectionMask consistency_mask =
            config.ccl.consistency_mask == MaskKind::Energy
                ? build_energy_mask(weak.logits_b, config.ccl.energy_zeta, config.ccl.energy_temp)
                : build_confidence_mask(fused.rows, config.ccl.conf_threshold);
        SelectionMask selector =
            config.ablation.energy_mask
                ? build_energy_mask(weak.logits_b, config.ccl.energy_zeta, config.ccl.energy_temp)
                : build_confidence_mask(fused.rows, config.ccl.conf_threshold);
        std::vector<int> selected = selector.selected_indices();
        acc_masked += static_cast<double>(consistency_mask.count()) / consistency_mask.flags.size();

        ad::Tape tape;
        ModelVars vars = lift(tape, model, true);
        ForwardVars fwd_labeled = forward(tape, vars, labeled_weak);
        ForwardVars fwd_strong = forward(tape, vars, batch.unlabeled.strong);

        // classification: balanced head with logit adjustment, standard head plain
        ad::Var loss_cls =
            balanced_labeled_loss(tape, fwd_labeled.logits_b, batch.labeled.labels, pi_l, config.ccl.tau);
        if (config.ablation.dual_branch)
            loss_cls = ad::add(loss_cls, plain_ce_loss(tape, fwd_labeled.logits_s, batch.labeled.labels));
        loss_cls = ad::add(loss_cls,
                           unlabeled_consistency_loss(tape, fwd_strong.logits_b, fused.pseudo_labels,
                                                      prior.pi_u_hat, config.ccl.tau, consistency_mask));
        if (config.ablation.dual_branch && config.ccl.standard_branch_pseudo &&
            consistency_mask.count() > 0)
            loss_cls = ad::add(loss_cls, plain_ce_loss(tape, fwd_strong.logits_s, fused.pseudo_labels,
                                                       consistency_mask.selected_indices()));

        // estimated-prior EMA on the selected subset (teacher order: after the
        // classification targets are fixed, before the contrastive losses)
        if (!selected.empty()) {
            prior = update_prior(prior, select_rows_values(post_b_adj, selected));
        } else {
            result.rpl_skipped_steps++;
        }

        ad::Var loss_rpl = tape.scalar_constant(0.0);
        if (config.ablation.reliable_pl && !selected.empty()) {
            ad::Var z_reliable =
                ad::concat_rows(fwd_labeled.embeddings, ad::select_rows(fwd_strong.embeddings, selected));
            Matrix soft(static_cast<int>(batch.labeled.labels.size()) + static_cast<int>(selected.size()), c);
            Matrix labeled_one_hot = one_hot_rows(batch.labeled.labels, c);
            for (int i = 0; i < labeled_one_hot.rows(); ++i)
                std::copy(labeled_one_hot.row(i).begin(), labeled_one_hot.row(i).end(), soft.row(i).begin());
            for (std::size_t r = 0; r < selected.size(); ++r)
                std::copy(fused.rows.row(selected[r]).begin(), fused.rows.row(selected[r]).end(),
                          soft.row(labeled_one_hot.rows() + static_cast<int>(r)).begin());
            loss_rpl = reliable_contrastive_loss(tape, z_reliable, soft, prior.pi_u_hat, kernel,
                                                 prototypes.matrix());
        }

        ad::Var loss_spl = tape.scalar_constant(0.0);
        if (config.ablation.smoothed_pl) {
            Matrix prop_weak;
            {
                ad::Tape weak_tape;
                ad::Var p_l = labeled_kernel_posterior_for_unlabeled(
                    weak_tape, weak_tape.constant(weak.embeddings),
                    weak_tape.constant(fwd_labeled.embeddings.value()), batch.labeled.labels, c,
                    prior.pi_u_hat, kernel, prototypes.matrix());
                prop_weak = propagate(weak_tape, p_l, weak_tape.constant(weak.embeddings),
                                      config.ccl.beta, kernel)
                                .value();
            }
            ad::Var p_l_strong = labeled_kernel_posterior_for_unlabeled(
                tape, fwd_strong.embeddings, fwd_labeled.embeddings, batch.labeled.labels, c,
                prior.pi_u_hat, kernel, prototypes.matrix());
            ad::Var prop_strong =
                propagate(tape, p_l_strong, fwd_strong.embeddings, config.ccl.beta, kernel);
            loss_spl = smoothed_consistency_loss(tape, prop_weak, prop_strong);
        }

        ad::Var loss = total_loss(tape, loss_cls, loss_rpl, loss_spl, lambda1, lambda2);
        if (!std::isfinite(loss.scalar())) throw DivergenceError(step);

        tape.backward(loss);
        std::vector<Matrix> grads;
        grads.reserve(vars.params.size());
        for (const ad::Var& p : vars.params) grads.push_back(p.grad());
        sgd_step(model, grads, lr, config.train.momentum, config.train.weight_decay);

        prototypes.update(fwd_labeled.embeddings.value(), batch.labeled.labels);

        acc_cls += loss_cls.scalar();
        acc_rpl += loss_rpl.scalar();
        acc_spl += loss_spl.scalar();
        acc_steps++;
        } catch (const DivergenceError&) {
            throw;
        } catch (const std::runtime_error& e) {
            // non-finite activations/gradients surface as divergence with the step index
            if (std::string(e.what()).find("non-finite") != std::string::npos)
                throw DivergenceError(step);
            throw;
        }

        if (step % config.train.eval_interval == 0 || step == config.train.steps) {
            MetricRow row = evaluate_step(eval_ctx, model, prior, step, lr);
            row.loss_cls = acc_cls / acc_steps;
            row.loss_rpl = acc_rpl / acc_steps;
            row.loss_spl = acc_spl / acc_steps;
            row.masked_fraction = acc_masked / acc_steps;
            result.rows.push_back(row);
            acc_cls = acc_rpl = acc_spl = acc_masked = 0.0;
            acc_steps = 0;
        }
    }

    result.final_report = evaluate(model, data.test_features, data.test_labels);
    result.final_report.step = config.train.steps;
    result.final_report.ece = result.rows.back().ece;
    result.final_report.prior_l1 = result.rows.back().prior_l1;
    result.prior = prior;
    result.final_state = std::move(model);
    return result;
}

}  // namespace ccl
