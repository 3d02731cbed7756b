#include "ccl/framework.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ccl {

namespace {

constexpr double kLogFloor = 1e-12;

Matrix class_indicator(const std::vector<int>& labels, int num_classes,
                       const std::vector<double>& column_scale) {
    Matrix h(static_cast<int>(labels.size()), num_classes);
    for (std::size_t j = 0; j < labels.size(); ++j) h(static_cast<int>(j), labels[j]) = column_scale[labels[j]];
    return h;
}

std::vector<int> class_sizes(const std::vector<int>& labels, int num_classes) {
    std::vector<int> sizes(num_classes, 0);
    for (int y : labels) sizes[y]++;
    return sizes;
}

Matrix off_diagonal_mask(int n) {
    Matrix m = Matrix::filled(n, n, 1.0);
    for (int i = 0; i < n; ++i) m(i, i) = 0.0;
    return m;
}

void check_unit_rows(const Matrix& m, const char* what) {
    for (int i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols(); ++j) s += m(i, j) * m(i, j);
        if (std::abs(std::sqrt(s) - 1.0) > 1e-8)
            throw std::invalid_argument(std::string(what) + ": row " + std::to_string(i) +
                                        " is not unit-norm");
    }
}

}  // namespace

BatchPartition::BatchPartition(Matrix embeddings, std::vector<int> labels, int num_classes,
                               std::optional<Matrix> prototypes)
    : embeddings_(std::move(embeddings)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      prototypes_(std::move(prototypes)) {
    if (static_cast<int>(labels_.size()) != embeddings_.rows())
        throw std::invalid_argument("BatchPartition: one label per embedding row required");
    if (num_classes_ < 1) throw std::invalid_argument("BatchPartition: need at least one class");
    class_indices_.resize(num_classes_);
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] < 0 || labels_[i] >= num_classes_)
            throw std::invalid_argument("BatchPartition: label out of range");
        class_indices_[labels_[i]].push_back(static_cast<int>(i));
    }
    if (prototypes_) {
        if (prototypes_->rows() != num_classes_ || prototypes_->cols() != embeddings_.cols())
            throw std::invalid_argument("BatchPartition: prototypes must be [C x embed_dim]");
        check_unit_rows(*prototypes_, "BatchPartition: prototypes");
    }
}

ProbVector bayes_adjust(const ProbVector& posterior, const ProbVector& source_prior,
                        const ProbVector& target_prior) {
    if (posterior.size() != source_prior.size() || posterior.size() != target_prior.size())
        throw std::invalid_argument("bayes_adjust: size mismatch");
    if (!source_prior.strictly_positive())
        throw std::invalid_argument("bayes_adjust: source prior must be strictly positive");
    std::vector<double> w(posterior.size());
    for (std::size_t k = 0; k < w.size(); ++k)
        w[k] = posterior[k] * target_prior[k] / source_prior[k];
    return ProbVector::normalized(std::move(w));  // throws on zero normalizer
}

double unified_loss_J(const ProbVector& soft_label, const ProbVector& model_posterior_t,
                      const ProbVector& source_prior, const ProbVector& chosen_prior) {
    const std::size_t c = soft_label.size();
    if (model_posterior_t.size() != c || source_prior.size() != c || chosen_prior.size() != c)
        throw std::invalid_argument("unified_loss_J: size mismatch");
    if (!source_prior.strictly_positive() || !chosen_prior.strictly_positive())
        throw std::invalid_argument("unified_loss_J: priors must be strictly positive");
    double norm = 0.0;
    for (std::size_t k = 0; k < c; ++k) norm += model_posterior_t[k] * chosen_prior[k];
    double loss = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        double reweighted = model_posterior_t[k] * chosen_prior[k] / norm;
        loss -= (chosen_prior[k] / source_prior[k]) * soft_label[k] *
                std::log(std::max(reweighted, kLogFloor));
    }
    return loss;
}

ad::Var unified_loss_J(ad::Tape& tape, const ProbVector& soft_label, ad::Var logits_row,
                       const ProbVector& source_prior, const ProbVector& chosen_prior) {
    const int c = logits_row.cols();
    if (logits_row.rows() != 1) throw std::invalid_argument("unified_loss_J: logits must be one row");
    if (static_cast<int>(soft_label.size()) != c)
        throw std::invalid_argument("unified_loss_J: size mismatch");
    if (!source_prior.strictly_positive() || !chosen_prior.strictly_positive())
        throw std::invalid_argument("unified_loss_J: priors must be strictly positive");
    std::vector<double> log_chosen(c), weights(c);
    for (int k = 0; k < c; ++k) {
        log_chosen[k] = std::log(chosen_prior[k]);
        weights[k] = -(chosen_prior[k] / source_prior[k]) * soft_label[k];
    }
    ad::Var adjusted = ad::add_rowvec(logits_row, tape.constant(Matrix::row_vector(log_chosen)));
    ad::Var log_post = ad::log_softmax_rows(adjusted);
    return ad::total_sum(ad::mul(log_post, tape.constant(Matrix::row_vector(weights))));
}

std::vector<double> kernel_class_means(int query, const BatchPartition& partition,
                                       const KernelConfig& kernel, bool exclude_self) {
    if (!(kernel.temperature > 0.0))
        throw std::invalid_argument("kernel_class_means: temperature must be > 0");
    const Matrix& z = partition.embeddings();
    if (query < 0 || query >= z.rows()) throw std::invalid_argument("kernel_class_means: bad query");
    const int own = partition.labels()[query];
    std::vector<double> means(partition.num_classes());
    for (int k = 0; k < partition.num_classes(); ++k) {
        const auto& members = partition.class_indices()[k];
        bool drop_self = exclude_self && k == own;
        int count = static_cast<int>(members.size()) - (drop_self ? 1 : 0);
        if (count < 1) {
            if (!partition.prototypes())
                throw std::runtime_error("kernel_class_means: class " + std::to_string(k) +
                                         " unrepresented");
            double dot = 0.0;
            for (int j = 0; j < z.cols(); ++j) dot += z(query, j) * (*partition.prototypes())(k, j);
            means[k] = std::exp(dot / kernel.temperature);
            continue;
        }
        double sum = 0.0;
        for (int idx : members) {
            if (drop_self && idx == query) continue;
            double dot = 0.0;
            for (int j = 0; j < z.cols(); ++j) dot += z(query, j) * z(idx, j);
            sum += std::exp(dot / kernel.temperature);
        }
        means[k] = sum / count;
    }
    return means;
}

ProbVector kernel_posterior(int query, const BatchPartition& partition, const KernelConfig& kernel,
                            bool exclude_self) {
    return ProbVector::normalized(kernel_class_means(query, partition, kernel, exclude_self));
}

ad::Var kernel_posterior_rows(ad::Tape& tape, ad::Var unit_embeddings,
                              const std::vector<int>& labels, int num_classes,
                              const KernelConfig& kernel, bool exclude_self,
                              const std::optional<Matrix>& prototypes) {
    if (!(kernel.temperature > 0.0))
        throw std::invalid_argument("kernel_posterior_rows: temperature must be > 0");
    const int b = unit_embeddings.rows();
    if (static_cast<int>(labels.size()) != b)
        throw std::invalid_argument("kernel_posterior_rows: one label per row required");
    std::vector<int> sizes = class_sizes(labels, num_classes);

    ad::Var sims = ad::exp(ad::mul_scalar(ad::matmul_bt(unit_embeddings, unit_embeddings),
                                          1.0 / kernel.temperature));

    std::vector<double> incl_scale(num_classes, 0.0), excl_scale(num_classes, 0.0);
    std::vector<double> proto_col(num_classes, 0.0);
    for (int k = 0; k < num_classes; ++k) {
        bool need_proto_incl = sizes[k] < 1;
        bool need_proto_excl = exclude_self && sizes[k] < 2;
        if ((need_proto_incl || need_proto_excl) && !prototypes)
            throw std::runtime_error("kernel_posterior_rows: class " + std::to_string(k) +
                                     " unrepresented");
        incl_scale[k] = need_proto_incl ? 0.0 : 1.0 / sizes[k];
        if (exclude_self) excl_scale[k] = need_proto_excl ? 0.0 : 1.0 / (sizes[k] - 1);
        proto_col[k] = (need_proto_incl || need_proto_excl) ? 1.0 : 0.0;
    }

    Matrix h_incl = class_indicator(labels, num_classes, incl_scale);
    ad::Var means_incl = ad::matmul(sims, tape.constant(h_incl));

    ad::Var proto_sims = means_incl;  // placeholder; reassigned below when needed
    bool any_proto = std::any_of(proto_col.begin(), proto_col.end(), [](double v) { return v > 0.0; });
    if (any_proto) {
        proto_sims = ad::exp(ad::mul_scalar(
            ad::matmul_bt(unit_embeddings, tape.constant(*prototypes)), 1.0 / kernel.temperature));
        Matrix keep_cols(1, num_classes);
        Matrix proto_cols(1, num_classes);
        for (int k = 0; k < num_classes; ++k) {
            proto_cols(0, k) = proto_col[k];
            keep_cols(0, k) = 1.0 - proto_col[k];
        }
        means_incl = ad::add(ad::mul_rowvec(means_incl, tape.constant(keep_cols)),
                             ad::mul_rowvec(proto_sims, tape.constant(proto_cols)));
    }

    if (!exclude_self) return ad::row_normalize(means_incl);

    ad::Var sims_offdiag = ad::mul(sims, tape.constant(off_diagonal_mask(b)));
    Matrix h_excl = class_indicator(labels, num_classes, excl_scale);
    ad::Var means_excl = ad::matmul(sims_offdiag, tape.constant(h_excl));
    if (any_proto) {
        Matrix keep_cols(1, num_classes);
        Matrix proto_cols(1, num_classes);
        for (int k = 0; k < num_classes; ++k) {
            proto_cols(0, k) = proto_col[k];
            keep_cols(0, k) = 1.0 - proto_col[k];
        }
        means_excl = ad::add(ad::mul_rowvec(means_excl, tape.constant(keep_cols)),
                             ad::mul_rowvec(proto_sims, tape.constant(proto_cols)));
    }

    // swap in the self-excluded own-class average per row
    Matrix onehot(b, num_classes);
    Matrix other(b, num_classes);
    for (int i = 0; i < b; ++i)
        for (int k = 0; k < num_classes; ++k) {
            onehot(i, k) = labels[i] == k ? 1.0 : 0.0;
            other(i, k) = labels[i] == k ? 0.0 : 1.0;
        }
    ad::Var means = ad::add(ad::mul(means_incl, tape.constant(other)),
                            ad::mul(means_excl, tape.constant(onehot)));
    return ad::row_normalize(means);
}

SclPair scl_losses(int query, const BatchPartition& partition, const KernelConfig& kernel) {
    const Matrix& z = partition.embeddings();
    if (query < 0 || query >= z.rows()) throw std::invalid_argument("scl_losses: bad query");
    const int own = partition.labels()[query];
    const auto& positives = partition.class_indices()[own];
    if (positives.size() < 2) throw std::invalid_argument("scl_losses: singleton positive set");

    double denom = 0.0;
    for (int idx = 0; idx < z.rows(); ++idx) {
        double dot = 0.0;
        for (int j = 0; j < z.cols(); ++j) dot += z(query, j) * z(idx, j);
        denom += std::exp(dot / kernel.temperature);
    }
    double pos_sum = 0.0;
    double log_sum = 0.0;
    for (int idx : positives) {
        if (idx == query) continue;
        double dot = 0.0;
        for (int j = 0; j < z.cols(); ++j) dot += z(query, j) * z(idx, j);
        double sim = std::exp(dot / kernel.temperature);
        pos_sum += sim;
        log_sum += std::log(sim / denom);
    }
    double n_pos = static_cast<double>(positives.size() - 1);
    return {-std::log(pos_sum / denom), -log_sum / n_pos};
}

namespace {

struct QuerySums {
    ad::Var incl;  // [1 x C] per-class similarity sums over the batch
    ad::Var excl;  // same with the query removed from its own class
    ad::Var denom; // [1 x 1] similarity sum over the whole batch (self included)
};

QuerySums query_class_sums(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels,
                           int num_classes, int query, const KernelConfig& kernel) {
    const int b = unit_embeddings.rows();
    ad::Var zq = ad::select_rows(unit_embeddings, {query});
    ad::Var sims = ad::exp(ad::mul_scalar(ad::matmul_bt(zq, unit_embeddings), 1.0 / kernel.temperature));
    Matrix drop_self(1, b);
    for (int i = 0; i < b; ++i) drop_self(0, i) = i == query ? 0.0 : 1.0;
    ad::Var sims_noself = ad::mul(sims, tape.constant(drop_self));
    std::vector<double> ones(num_classes, 1.0);
    Matrix indicator = class_indicator(labels, num_classes, ones);
    QuerySums out{ad::matmul(sims, tape.constant(indicator)),
                  ad::matmul(sims_noself, tape.constant(indicator)), ad::total_sum(sims)};
    return out;
}

ad::Var pick_scalar(ad::Var row, int col) { return ad::pick_per_row(row, {col}); }

ad::Var log_scalar(ad::Var s) { return ad::log_floored(s, kLogFloor); }

}  // namespace

ad::Var scl_in_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels,
                    int query, const KernelConfig& kernel) {
    int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int> sizes = class_sizes(labels, num_classes);
    if (sizes[labels[query]] < 2) throw std::invalid_argument("scl_in_loss: singleton positive set");
    QuerySums s = query_class_sums(tape, unit_embeddings, labels, num_classes, query, kernel);
    ad::Var pos = pick_scalar(s.excl, labels[query]);
    return ad::sub(log_scalar(s.denom), log_scalar(pos));
}

ad::Var scl_out_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels,
                     int query, const KernelConfig& kernel) {
    int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int> sizes = class_sizes(labels, num_classes);
    const int own = labels[query];
    if (sizes[own] < 2) throw std::invalid_argument("scl_out_loss: singleton positive set");
    const int b = unit_embeddings.rows();

    ad::Var zq = ad::select_rows(unit_embeddings, {query});
    ad::Var scaled = ad::mul_scalar(ad::matmul_bt(zq, unit_embeddings), 1.0 / kernel.temperature);
    ad::Var sims = ad::exp(scaled);
    // sum over positives of log(sim / denom) = sum of scaled sims - n_pos*log(denom)
    Matrix pos_mask(1, b);
    for (int i = 0; i < b; ++i) pos_mask(0, i) = (labels[i] == own && i != query) ? 1.0 : 0.0;
    double n_pos = static_cast<double>(sizes[own] - 1);
    ad::Var pos_logits = ad::total_sum(ad::mul(scaled, tape.constant(pos_mask)));
    ad::Var log_denom = log_scalar(ad::total_sum(sims));
    return ad::mul_scalar(ad::sub(ad::mul_scalar(log_denom, n_pos), pos_logits), 1.0 / n_pos);
}

// ---- loss zoo ----

GmlQueues::GmlQueues(int num_classes, int embed_dim, int capacity)
    : embed_dim_(embed_dim), capacity_(capacity), buffers_(num_classes), next_(num_classes, 0),
      sizes_(num_classes, 0) {
    if (capacity < 1) throw std::invalid_argument("GmlQueues: capacity must be >= 1");
    for (auto& buf : buffers_) buf.assign(static_cast<std::size_t>(capacity) * embed_dim, 0.0);
}

void GmlQueues::push(int cls, std::span<const double> embedding) {
    if (static_cast<int>(embedding.size()) != embed_dim_)
        throw std::invalid_argument("GmlQueues: embedding dim mismatch");
    auto& buf = buffers_.at(cls);
    std::copy(embedding.begin(), embedding.end(), buf.begin() + static_cast<std::size_t>(next_[cls]) * embed_dim_);
    next_[cls] = (next_[cls] + 1) % capacity_;
    sizes_[cls] = std::min(sizes_[cls] + 1, capacity_);
}

Matrix GmlQueues::members(int cls) const {
    int n = sizes_.at(cls);
    Matrix out(n, embed_dim_);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < embed_dim_; ++j)
            out(i, j) = buffers_[cls][static_cast<std::size_t>(i) * embed_dim_ + j];
    return out;
}

int GmlQueues::count(int cls) const { return sizes_.at(cls); }

ad::Var bcl_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 int num_classes, const ProbVector& prior, std::optional<ad::Var> prototypes,
                 const KernelConfig& kernel) {
    if (!prior.strictly_positive()) throw std::invalid_argument("bcl_loss: prior must be positive");
    std::vector<int> sizes = class_sizes(labels, num_classes);
    const int own = labels[query];
    QuerySums s = query_class_sums(tape, unit_embeddings, labels, num_classes, query, kernel);

    ad::Var numerator = s.excl;
    ad::Var denominator_sums = s.incl;
    std::vector<double> den_scale(num_classes), num_scale(num_classes, 0.0);
    if (prototypes) {
        ad::Var zq = ad::select_rows(unit_embeddings, {query});
        ad::Var proto_sims =
            ad::exp(ad::mul_scalar(ad::matmul_bt(zq, *prototypes), 1.0 / kernel.temperature));
        numerator = ad::add(numerator, proto_sims);
        denominator_sums = ad::add(denominator_sums, proto_sims);
        for (int k = 0; k < num_classes; ++k) den_scale[k] = 1.0 / (sizes[k] + 1);
        num_scale[own] = 1.0 / sizes[own];  // |B_y u {c_y} \ {x}| = |B_y|
    } else {
        for (int k = 0; k < num_classes; ++k) {
            if (sizes[k] < 1)
                throw std::runtime_error("bcl_loss: class " + std::to_string(k) + " unrepresented");
            den_scale[k] = 1.0 / sizes[k];
        }
        if (sizes[own] < 2) throw std::invalid_argument("bcl_loss: singleton positive set");
        num_scale[own] = 1.0 / (sizes[own] - 1);
    }
    ad::Var num = ad::mul_scalar(pick_scalar(numerator, own), num_scale[own]);
    ad::Var den = ad::total_sum(ad::mul_rowvec(denominator_sums, tape.constant(Matrix::row_vector(den_scale))));
    return ad::mul_scalar(ad::sub(log_scalar(den), log_scalar(num)), 1.0 / prior[own]);
}

ad::Var gml_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 int num_classes, const ProbVector& prior, const GmlQueues& queues,
                 const KernelConfig& kernel) {
    if (!prior.strictly_positive()) throw std::invalid_argument("gml_loss: prior must be positive");
    // append queue contents as detached batch members
    std::vector<int> all_labels = labels;
    std::vector<Matrix> per_class;
    int total_queue = 0;
    for (int k = 0; k < num_classes; ++k) {
        per_class.push_back(queues.members(k));
        total_queue += per_class.back().rows();
    }
    ad::Var merged = unit_embeddings;
    if (total_queue > 0) {
        Matrix q(total_queue, unit_embeddings.cols());
        int row = 0;
        for (int k = 0; k < num_classes; ++k)
            for (int i = 0; i < per_class[k].rows(); ++i) {
                std::copy(per_class[k].row(i).begin(), per_class[k].row(i).end(), q.row(row).begin());
                all_labels.push_back(k);
                ++row;
            }
        merged = ad::concat_rows(unit_embeddings, tape.constant(q));
    }
    std::vector<int> sizes = class_sizes(all_labels, num_classes);
    const int own = labels[query];
    if (sizes[own] < 2) throw std::invalid_argument("gml_loss: singleton positive set");
    for (int k = 0; k < num_classes; ++k)
        if (sizes[k] < 1)
            throw std::runtime_error("gml_loss: class " + std::to_string(k) + " unrepresented");

    QuerySums s = query_class_sums(tape, merged, all_labels, num_classes, query, kernel);
    ad::Var num = ad::mul_scalar(pick_scalar(s.excl, own), prior[own] / (sizes[own] - 1));
    std::vector<double> den_scale(num_classes);
    for (int k = 0; k < num_classes; ++k) den_scale[k] = prior[k] / sizes[k];
    ad::Var den = ad::total_sum(ad::mul_rowvec(s.incl, tape.constant(Matrix::row_vector(den_scale))));
    return ad::sub(log_scalar(den), log_scalar(num));
}

ad::Var kcl_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                 const std::vector<int>& positive_subset, const KernelConfig& kernel) {
    int num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int> sizes = class_sizes(labels, num_classes);
    const int own = labels[query];
    const int k_count = static_cast<int>(positive_subset.size());
    if (k_count < 1) throw std::invalid_argument("kcl_loss: need at least one positive");
    if (k_count > sizes[own] - 1)
        throw std::invalid_argument("kcl_loss: K exceeds available positives (|B_y|-1)");
    for (int idx : positive_subset)
        if (idx == query || labels[idx] != own)
            throw std::invalid_argument("kcl_loss: subset must contain same-class samples, not the query");

    const int b = unit_embeddings.rows();
    ad::Var zq = ad::select_rows(unit_embeddings, {query});
    ad::Var sims = ad::exp(ad::mul_scalar(ad::matmul_bt(zq, unit_embeddings), 1.0 / kernel.temperature));
    Matrix subset_mask(1, b);
    for (int idx : positive_subset) subset_mask(0, idx) = 1.0;
    ad::Var num = ad::mul_scalar(ad::total_sum(ad::mul(sims, tape.constant(subset_mask))),
                                 1.0 / static_cast<double>(k_count));
    ad::Var den = ad::total_sum(sims);
    return ad::sub(log_scalar(den), log_scalar(num));
}

ad::Var paco_loss(ad::Tape& tape, ad::Var unit_embeddings, const std::vector<int>& labels, int query,
                  int num_classes, ad::Var centers, double mix, const ProbVector& prior,
                  const KernelConfig& kernel) {
    if (!prior.strictly_positive()) throw std::invalid_argument("paco_loss: prior must be positive");
    if (!(mix >= 0.0 && mix <= 1.0)) throw std::invalid_argument("paco_loss: mix must be in [0,1]");
    std::vector<int> sizes = class_sizes(labels, num_classes);
    const int own = labels[query];
    for (int k = 0; k < num_classes; ++k)
        if (sizes[k] < 1)
            throw std::runtime_error("paco_loss: class " + std::to_string(k) + " unrepresented");

    QuerySums s = query_class_sums(tape, unit_embeddings, labels, num_classes, query, kernel);
    ad::Var zq = ad::select_rows(unit_embeddings, {query});
    ad::Var center_sims = ad::exp(ad::mul_scalar(ad::matmul_bt(zq, centers), 1.0 / kernel.temperature));

    std::vector<double> batch_scale(num_classes);
    for (int k = 0; k < num_classes; ++k) batch_scale[k] = mix / sizes[k];
    ad::Var mixed_incl = ad::add(ad::mul_rowvec(s.incl, tape.constant(Matrix::row_vector(batch_scale))),
                                 ad::mul_scalar(center_sims, 1.0 - mix));
    ad::Var mixed_excl = ad::add(ad::mul_rowvec(s.excl, tape.constant(Matrix::row_vector(batch_scale))),
                                 ad::mul_scalar(center_sims, 1.0 - mix));
    ad::Var num = ad::mul_scalar(pick_scalar(mixed_excl, own), prior[own]);
    std::vector<double> prior_row(prior.values().begin(), prior.values().end());
    ad::Var den = ad::total_sum(ad::mul_rowvec(mixed_incl, tape.constant(Matrix::row_vector(prior_row))));
    return ad::sub(log_scalar(den), log_scalar(num));
}

double tvmf_similarity(double t, double q, double rho) {
    double x = 0.5 * rho * t;
    if (std::abs(1.0 - q) < 1e-12) return std::exp(-x);
    double base = 1.0 - (1.0 - q) * x;
    if (!(base > 0.0)) throw std::runtime_error("tvmf_similarity: profile undefined (base <= 0)");
    return std::pow(base, 1.0 / (1.0 - q));
}

ad::Var tvmf_loss(ad::Tape& tape, ad::Var unit_embedding_row, int label, ad::Var centers, double q,
                  double rho, const ProbVector& prior) {
    if (!prior.strictly_positive()) throw std::invalid_argument("tvmf_loss: prior must be positive");
    const int c = centers.rows();
    if (unit_embedding_row.rows() != 1)
        throw std::invalid_argument("tvmf_loss: embedding must be a single row");
    ad::Var diff = ad::sub(ad::tile_rows(unit_embedding_row, c), centers);
    ad::Var dist = ad::sqrt_floored(ad::row_sum(ad::mul(diff, diff)), 1e-300);  // [C x 1]
    ad::Var s = std::abs(1.0 - q) < 1e-12
                    ? ad::exp(ad::mul_scalar(dist, -0.5 * rho))
                    : ad::pow_scalar(ad::add_scalar(ad::mul_scalar(dist, -0.5 * rho * (1.0 - q)), 1.0),
                                     1.0 / (1.0 - q));
    double s_far = tvmf_similarity(2.0, q, rho);  // s at the antipode; s at 0 is 1
    ad::Var phi = ad::add_scalar(ad::mul_scalar(ad::add_scalar(s, -s_far), 2.0 / (1.0 - s_far)), -1.0);
    std::vector<double> log_prior(c);
    for (int k = 0; k < c; ++k) log_prior[k] = std::log(prior[k]);
    ad::Var logits = ad::add_rowvec(ad::transpose(phi), tape.constant(Matrix::row_vector(log_prior)));
    return ad::mul_scalar(ad::pick_per_row(ad::log_softmax_rows(logits), {label}), -1.0);
}

ad::Var wcdas_loss(ad::Tape& tape, ad::Var embedding_row, int label, ad::Var centers, ad::Var theta,
                   const ProbVector& prior) {
    if (!prior.strictly_positive()) throw std::invalid_argument("wcdas_loss: prior must be positive");
    const int c = centers.rows();
    if (theta.rows() != 1 || theta.cols() != c)
        throw std::invalid_argument("wcdas_loss: theta must be 1 x C");
    for (int k = 0; k < c; ++k)
        if (std::abs(theta.value()(0, k)) >= 1.0)
            throw std::invalid_argument("wcdas_loss: |theta| must be < 1 (density undefined)");
    constexpr double kTwoPi = 6.283185307179586476925286766559;

    ad::Var zn = ad::row_l2_normalize(embedding_row, 1e-12);
    ad::Var mun = ad::row_l2_normalize(centers, 1e-12);
    ad::Var cos_theta = ad::matmul_bt(zn, mun);  // [1 x C]
    ad::Var theta_sq = ad::mul(theta, theta);
    ad::Var numerator = ad::add_scalar(ad::mul_scalar(theta_sq, -1.0), 1.0);
    ad::Var denominator = ad::mul_scalar(
        ad::add(ad::add_scalar(theta_sq, 1.0), ad::mul_scalar(ad::mul(theta, cos_theta), -2.0)),
        kTwoPi);
    ad::Var density = ad::div(numerator, denominator);
    std::vector<double> log_prior(c);
    for (int k = 0; k < c; ++k) log_prior[k] = std::log(prior[k]);
    ad::Var logits = ad::add_rowvec(density, tape.constant(Matrix::row_vector(log_prior)));
    return ad::mul_scalar(ad::pick_per_row(ad::log_softmax_rows(logits), {label}), -1.0);
}

double zoo_loss(ZooKind kind, const ZooInputs& in) {
    ad::Tape tape;
    ad::Var z = tape.constant(in.embeddings);
    switch (kind) {
        case ZooKind::Bcl: {
            std::optional<ad::Var> protos;
            if (in.prototypes) protos = tape.constant(*in.prototypes);
            return bcl_loss(tape, z, in.labels, in.query, in.num_classes, in.prior, protos, in.kernel)
                .scalar();
        }
        case ZooKind::Gml: {
            if (!in.queues) throw std::invalid_argument("zoo_loss: Gml requires queues");
            return gml_loss(tape, z, in.labels, in.query, in.num_classes, in.prior, *in.queues,
                            in.kernel)
                .scalar();
        }
        case ZooKind::Kcl: {
            std::vector<int> subset = in.kcl_subset;
            if (subset.empty()) {
                for (std::size_t i = 0; i < in.labels.size() && static_cast<int>(subset.size()) < in.k_positives; ++i)
                    if (static_cast<int>(i) != in.query && in.labels[i] == in.labels[in.query])
                        subset.push_back(static_cast<int>(i));
                if (static_cast<int>(subset.size()) < in.k_positives)
                    throw std::invalid_argument("kcl_loss: K exceeds available positives (|B_y|-1)");
            }
            return kcl_loss(tape, z, in.labels, in.query, subset, in.kernel).scalar();
        }
        case ZooKind::Paco: {
            if (!in.prototypes) throw std::invalid_argument("zoo_loss: Paco requires centers");
            return paco_loss(tape, z, in.labels, in.query, in.num_classes,
                             tape.constant(*in.prototypes), in.paco_mix, in.prior, in.kernel)
                .scalar();
        }
        case ZooKind::Tvmf: {
            if (!in.prototypes) throw std::invalid_argument("zoo_loss: Tvmf requires centers");
            ad::Var row = ad::select_rows(z, {in.query});
            return tvmf_loss(tape, row, in.labels[in.query], tape.constant(*in.prototypes), in.tvmf_q,
                             in.tvmf_rho, in.prior)
                .scalar();
        }
        case ZooKind::Wcdas: {
            if (!in.prototypes) throw std::invalid_argument("zoo_loss: Wcdas requires centers");
            ad::Var row = ad::select_rows(z, {in.query});
            return wcdas_loss(tape, row, in.labels[in.query], tape.constant(*in.prototypes),
                              tape.constant(Matrix::row_vector(in.wcdas_theta)), in.prior)
                .scalar();
        }
    }
    throw std::logic_error("zoo_loss: unknown kind");
}

}  // namespace ccl
