#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ccl/config.hpp"
#include "ccl/dataset.hpp"
#include "ccl/framework.hpp"
#include "ccl/matrix.hpp"
#include "ccl/metrics.hpp"
#include "ccl/model.hpp"
#include "ccl/prob.hpp"
#include "ccl/tape.hpp"

namespace ccl {

// EMA estimate of the unlabeled class prior.
struct PriorEstimate {
    ProbVector pi_u_hat;
    double alpha = 0.1;
    long update_count = 0;
};

// Convex EMA toward the mean of the selected posterior rows; a no-op when the
// selection is empty.
PriorEstimate update_prior(const PriorEstimate& estimate, const Matrix& selected_posterior_rows);

enum class SelectionKind { Energy, Confidence };

struct SelectionMask {
    SelectionKind kind = SelectionKind::Energy;
    double threshold = 0.0;
    double temperature = 1.0;
    std::vector<char> flags;

    int count() const;
    std::vector<int> selected_indices() const;
};

// E = -T * log sum_k exp(f_k / T), computed via log-sum-exp.
double energy_score(std::span<const double> logits_row, double temperature);
SelectionMask build_energy_mask(const Matrix& logits, double zeta, double temperature);
SelectionMask build_confidence_mask(const Matrix& posterior_rows, double threshold);

struct FusedPosterior {
    Matrix rows;                    // [B_u x C]
    std::vector<int> pseudo_labels; // argmax per row, lowest index on ties
    ProbVector pi_star;
};

// Mixes the prior-adjusted balanced posterior with the standard posterior
// reweighted toward pi_star = normalize(pi_u / (pi_l + pi_u)).
FusedPosterior fuse_branches(const Matrix& post_b_adjusted, const Matrix& post_s,
                             const ProbVector& pi_star);

// Posterior rows reweighted by the estimated prior: row ~ post * pi, renormalized.
Matrix adjust_posterior_rows(const Matrix& posterior_rows, const ProbVector& pi);

// ---- losses (tape versions carry gradients; double versions evaluate) ----

ad::Var balanced_labeled_loss(ad::Tape& tape, ad::Var logits_b, const std::vector<int>& labels,
                              const ProbVector& pi_l, double tau);
double balanced_labeled_loss(const Matrix& logits_b, const std::vector<int>& labels,
                             const ProbVector& pi_l, double tau);

ad::Var plain_ce_loss(ad::Tape& tape, ad::Var logits, const std::vector<int>& labels,
                      const std::vector<int>& rows = {});

ad::Var unlabeled_consistency_loss(ad::Tape& tape, ad::Var logits_b_strong,
                                   const std::vector<int>& pseudo_labels, const ProbVector& pi_u,
                                   double tau, const SelectionMask& mask);
double unlabeled_consistency_loss(const Matrix& logits_b_strong,
                                  const std::vector<int>& pseudo_labels, const ProbVector& pi_u,
                                  double tau, const SelectionMask& mask);

// Soft contrastive loss over the reliable set: per-class kernel expectations
// weighted by the soft labels, prior-adjusted, scored against the soft labels.
// Self-similarity is excluded from both the weighted sum and its normalizer.
ad::Var reliable_contrastive_loss(ad::Tape& tape, ad::Var unit_embeddings,
                                  const Matrix& soft_labels, const ProbVector& pi_u,
                                  const KernelConfig& kernel,
                                  const std::optional<Matrix>& prototypes = std::nullopt);

// Label propagation source term: class-mean kernel similarity from the
// labeled batch to each unlabeled sample, reweighted by the estimated prior.
ad::Var labeled_kernel_posterior_for_unlabeled(ad::Tape& tape, ad::Var z_unlabeled,
                                               ad::Var z_labeled, const std::vector<int>& labels,
                                               int num_classes, const ProbVector& pi_u,
                                               const KernelConfig& kernel,
                                               const std::optional<Matrix>& prototypes = std::nullopt);

// P = (1-beta) (I - beta G)^{-1} P_L with G the row-normalized kernel matrix
// (self-similarity included).
ad::Var propagate(ad::Tape& tape, ad::Var labeled_posterior, ad::Var z_unlabeled, double beta,
                  const KernelConfig& kernel);
Matrix propagate(const Matrix& labeled_posterior, const Matrix& z_unlabeled, double beta,
                 const KernelConfig& kernel);
Matrix kernel_graph(const Matrix& z_unlabeled, const KernelConfig& kernel);  // row-stochastic G

// Soft cross-entropy between the (constant) weak-view rows and the strong-view rows.
ad::Var smoothed_consistency_loss(ad::Tape& tape, const Matrix& prop_weak, ad::Var prop_strong);
double smoothed_consistency_loss(const Matrix& prop_weak, const Matrix& prop_strong);

ad::Var total_loss(ad::Tape& tape, ad::Var loss_cls, ad::Var loss_rpl, ad::Var loss_spl,
                   double lambda1, double lambda2);

// ---- training ----

struct DivergenceError : std::runtime_error {
    long step;
    explicit DivergenceError(long step_index)
        : std::runtime_error("training diverged (non-finite loss) at step " +
                             std::to_string(step_index)),
          step(step_index) {}
};

struct MetricRow {
    long step = 0;
    double top1 = 0.0;
    double ece = 0.0;
    double prior_l1 = 0.0;
    double masked_fraction = 0.0;
    double loss_cls = 0.0;
    double loss_rpl = 0.0;
    double loss_spl = 0.0;
    double lr = 0.0;
    // diagnostics, not part of the CSV schema
    double selected_fraction = 0.0;     // selector hit rate on the pool
    double pseudo_acc_selected = 0.0;   // pseudo-label accuracy on the selected pool
};
std::string metric_csv_header();
std::string metric_csv_row(const MetricRow& row);

struct RunResult {
    std::vector<MetricRow> rows;
    EvalReport final_report;
    PriorEstimate prior;
    long rpl_skipped_steps = 0;
    ModelState final_state;
};

// Runs the full training loop for one seed (the seed drives both the dataset
// and the training stream). Deterministic: identical config+seed give
// identical results.
RunResult train(const RunConfig& config, std::uint64_t seed);

}  // namespace ccl
