#pragma once

#include <optional>
#include <vector>

#include "ccl/matrix.hpp"
#include "ccl/prob.hpp"
#include "ccl/tape.hpp"

namespace ccl {

// Gaussian kernel between unit embeddings: exp(z . z' / temperature).
// temperature 1 is the canonical form.
struct KernelConfig {
    double temperature = 1.0;
};

// A batch of unit-norm embeddings partitioned by class, with optional
// unit-norm class prototypes as a fallback for unrepresented classes.
class BatchPartition {
public:
    BatchPartition(Matrix embeddings, std::vector<int> labels, int num_classes,
                   std::optional<Matrix> prototypes = std::nullopt);

    const Matrix& embeddings() const { return embeddings_; }
    const std::vector<int>& labels() const { return labels_; }
    int num_classes() const { return num_classes_; }
    int batch_size() const { return embeddings_.rows(); }
    const std::vector<std::vector<int>>& class_indices() const { return class_indices_; }
    const std::optional<Matrix>& prototypes() const { return prototypes_; }

private:
    Matrix embeddings_;
    std::vector<int> labels_;
    int num_classes_;
    std::vector<std::vector<int>> class_indices_;
    std::optional<Matrix> prototypes_;
};

// Label-shift correction: out[y] ~ posterior[y] * target[y] / source[y].
ProbVector bayes_adjust(const ProbVector& posterior, const ProbVector& source_prior,
                        const ProbVector& target_prior);

// The unified objective: a soft cross-entropy between the source posterior and
// the chosen-prior-reweighted model posterior, with per-class importance
// weights chosen[k]/source[k].
double unified_loss_J(const ProbVector& soft_label, const ProbVector& model_posterior_t,
                      const ProbVector& source_prior, const ProbVector& chosen_prior);
ad::Var unified_loss_J(ad::Tape& tape, const ProbVector& soft_label, ad::Var logits_row,
                       const ProbVector& source_prior, const ProbVector& chosen_prior);

// Per-class kernel mean similarities for one query. With exclude_self, the
// query is dropped from its own class average (divisor |B_y|-1); every other
// class average runs over the full class, so the vector is reported
// unnormalized exactly as written.
std::vector<double> kernel_class_means(int query, const BatchPartition& partition,
                                       const KernelConfig& kernel, bool exclude_self);

// Class means renormalized into a distribution.
ProbVector kernel_posterior(int query, const BatchPartition& partition, const KernelConfig& kernel,
                            bool exclude_self);

// Tape version for a whole batch: row i is the posterior of sample i.
ad::Var kernel_posterior_rows(ad::Tape& tape, ad::Var unit_embeddings,
                              const std::vector<int>& labels, int num_classes,
                              const KernelConfig& kernel, bool exclude_self,
                              const std::optional<Matrix>& prototypes = std::nullopt);

// Supervised contrastive loss, both placements of the positive sum.
struct SclPair {
    double in_form;
    double out_form;
};
SclPair scl_losses(int query, const BatchPartition& partition, const KernelConfig& kernel);
ad::Var scl_in_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels,
                    int query, const KernelConfig& kernel);
ad::Var scl_out_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels,
                     int query, const KernelConfig& kernel);

// ---- loss zoo ----

// Fixed-capacity per-class ring buffers of detached embeddings.
class GmlQueues {
public:
    GmlQueues(int num_classes, int embed_dim, int capacity = 32);
    void push(int cls, std::span<const double> embedding);
    Matrix members(int cls) const;  // [count x embed_dim], possibly empty
    int count(int cls) const;
    int capacity() const { return capacity_; }

private:
    int embed_dim_;
    int capacity_;
    std::vector<std::vector<double>> buffers_;  // flattened rows per class
    std::vector<int> next_;
    std::vector<int> sizes_;
};

ad::Var bcl_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 int num_classes, const ProbVector& prior, std::optional<ad::Var> prototypes,
                 const KernelConfig& kernel);
ad::Var gml_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 int num_classes, const ProbVector& prior, const GmlQueues& queues,
                 const KernelConfig& kernel);
ad::Var kcl_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 const std::vector<int>& positive_subset, const KernelConfig& kernel);
ad::Var paco_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                  int num_classes, ad::Var centers, double mix, const ProbVector& prior,
                  const KernelConfig& kernel);
ad::Var tvmf_loss(ad::Tape& tape, ad::Var unit_embedding_row, int label, ad::Var centers, double q,
                  double rho, const ProbVector& prior);
ad::Var wcdas_loss(ad::Tape& tape, ad::Var embedding_row, int label, ad::Var centers, ad::Var theta,
                   const ProbVector& prior);

// t-distributed similarity profile; q -> 1 recovers exp(-rho*t/2).
double tvmf_similarity(double t, double q, double rho);

enum class ZooKind { Bcl, Gml, Kcl, Paco, Tvmf, Wcdas };

struct ZooInputs {
    Matrix embeddings;  // unit rows; for Tvmf/Wcdas a single row is used
    std::vector<int> labels;
    int query = 0;
    int num_classes = 0;
    ProbVector prior = ProbVector::uniform(1);
    std::optional<Matrix> prototypes;   // Bcl fallback / Paco, Tvmf, Wcdas centers
    const GmlQueues* queues = nullptr;  // Gml
    int k_positives = 0;                // Kcl; first K positives unless subset given
    std::vector<int> kcl_subset;
    double paco_mix = 0.5;
    double tvmf_q = 0.9;
    double tvmf_rho = 4.0;
    std::vector<double> wcdas_theta;
    KernelConfig kernel;
};
double zoo_loss(ZooKind kind, const ZooInputs& inputs);

}  // namespace ccl
