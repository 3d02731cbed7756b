#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ccl/matrix.hpp"
#include "ccl/rng.hpp"

namespace ccl {

// Shape of the unlabeled label distribution relative to the labeled long-tail.
struct UnlabeledRegime {
    enum class Kind { LongTail, Uniform, Reversed };
    Kind kind = Kind::LongTail;
    double gamma = 100.0;  // used by LongTail and Reversed

    static UnlabeledRegime parse(const std::string& text);
    std::string str() const;
};

struct DatasetSpec {
    int num_classes = 10;
    int feature_dim = 8;
    int n1 = 100;   // largest labeled class
    int m1 = 600;   // largest unlabeled class
    double gamma_l = 100.0;
    UnlabeledRegime gamma_u;
    double class_separation = 3.0;
    double noise_scale = 1.0;
    int test_per_class = 50;
    std::uint64_t seed = 0;
};

struct LabeledSet {
    Matrix features;
    std::vector<int> labels;
    std::vector<int> class_counts;
};

struct UnlabeledSet {
    Matrix features;
    std::vector<int> true_labels;  // kept for evaluation only; empty if unknown
    std::vector<int> class_counts;
};

struct GeneratedData {
    LabeledSet labeled;
    UnlabeledSet unlabeled;
    Matrix test_features;
    std::vector<int> test_labels;
};

// counts[c] = round(n1 * gamma^(-c/(C-1))), floored at 1.
std::vector<int> longtail_counts(int n1, double gamma, int num_classes);

// Gaussian blobs with class means equally spaced on a radius-class_separation
// circle in the first two feature dimensions; balanced test set.
GeneratedData generate_dataset(const DatasetSpec& spec);

enum class AugmentKind { Weak, Strong };

// Weak: additive noise with std 0.05*noise_scale. Strong: additive noise with
// std 0.25*noise_scale followed by zeroing each coordinate with probability 0.1.
Matrix augment(const Matrix& batch, AugmentKind kind, double noise_scale, RandomStream& rng);

struct LabeledBatch {
    Matrix features;
    std::vector<int> labels;
};

struct UnlabeledBatch {
    Matrix weak;
    Matrix strong;
    std::vector<int> source_indices;
};

struct BatchPair {
    LabeledBatch labeled;
    UnlabeledBatch unlabeled;
};

// Uniform sampling with replacement; the unlabeled batch carries both views.
BatchPair sample_batches(const LabeledSet& labeled, const UnlabeledSet& unlabeled, int batch_size,
                         double noise_scale, RandomStream& rng);

struct CsvDataset {
    LabeledSet labeled;
    UnlabeledSet unlabeled;
    std::vector<std::string> feature_names;
    std::vector<std::string> class_names;
    std::vector<double> column_mean;
    std::vector<double> column_std;
};

// Comma-separated file with a header row; rows with an empty label column go
// to the unlabeled pool. Features are standardized over the full pool.
CsvDataset load_csv_dataset(const std::string& path, const std::string& label_column);

// Snapshot export: the same CSV format plus a key=value metadata sidecar.
void export_dataset_csv(const GeneratedData& data, const DatasetSpec& spec,
                        const std::string& csv_path, const std::string& meta_path);

}  // namespace ccl
