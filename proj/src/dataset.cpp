#include "ccl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ccl {

UnlabeledRegime UnlabeledRegime::parse(const std::string& text) {
    UnlabeledRegime r;
    if (text == "uniform") {
        r.kind = Kind::Uniform;
        r.gamma = 1.0;
        return r;
    }
    if (text.rfind("reversed:", 0) == 0) {
        r.kind = Kind::Reversed;
        r.gamma = std::stod(text.substr(9));
        if (!(r.gamma > 0.0)) throw std::invalid_argument("gamma_u: reversed gamma must be > 0");
        return r;
    }
    std::size_t pos = 0;
    double g = std::stod(text, &pos);
    if (pos != text.size() || !(g > 0.0))
        throw std::invalid_argument("gamma_u: expected a positive number, 'uniform', or 'reversed:<gamma>'");
    r.kind = Kind::LongTail;
    r.gamma = g;
    return r;
}

std::string UnlabeledRegime::str() const {
    switch (kind) {
        case Kind::Uniform: return "uniform";
        case Kind::Reversed: {
            std::ostringstream os;
            os << "reversed:" << gamma;
            return os.str();
        }
        default: {
            std::ostringstream os;
            os << gamma;
            return os.str();
        }
    }
}

std::vector<int> longtail_counts(int n1, double gamma, int num_classes) {
    if (n1 < 1) throw std::invalid_argument("longtail_counts: n1 must be >= 1");
    if (!(gamma > 0.0)) throw std::invalid_argument("longtail_counts: gamma must be > 0");
    if (num_classes < 2) throw std::invalid_argument("longtail_counts: need at least 2 classes");
    std::vector<int> counts(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        double raw = n1 * std::pow(gamma, -static_cast<double>(c) / (num_classes - 1));
        counts[c] = std::max<long long>(1, std::llround(raw));
    }
    counts[0] = n1;
    return counts;
}

namespace {

std::vector<int> unlabeled_counts(const DatasetSpec& spec) {
    using Kind = UnlabeledRegime::Kind;
    switch (spec.gamma_u.kind) {
        case Kind::Uniform: return std::vector<int>(spec.num_classes, spec.m1);
        case Kind::Reversed: {
            std::vector<int> counts = longtail_counts(spec.m1, spec.gamma_u.gamma, spec.num_classes);
            std::reverse(counts.begin(), counts.end());
            return counts;
        }
        default: return longtail_counts(spec.m1, spec.gamma_u.gamma, spec.num_classes);
    }
}

// Class means equally spaced on a circle of radius class_separation in the
// first two dimensions (a line for 1-d features).
Matrix class_means(const DatasetSpec& spec) {
    Matrix means(spec.num_classes, spec.feature_dim);
    for (int c = 0; c < spec.num_classes; ++c) {
        if (spec.feature_dim >= 2) {
            double theta = 2.0 * 3.14159265358979323846 * c / spec.num_classes;
            means(c, 0) = spec.class_separation * std::cos(theta);
            means(c, 1) = spec.class_separation * std::sin(theta);
        } else {
            means(c, 0) = spec.class_separation * (spec.num_classes == 1
                              ? 0.0
                              : 2.0 * c / (spec.num_classes - 1) - 1.0);
        }
    }
    return means;
}

void fill_class_samples(Matrix& features, std::vector<int>& labels, const Matrix& means,
                        const std::vector<int>& counts, double noise, RandomStream& rng) {
    int row = 0;
    for (int c = 0; c < static_cast<int>(counts.size()); ++c) {
        for (int i = 0; i < counts[c]; ++i) {
            for (int j = 0; j < features.cols(); ++j)
                features(row, j) = means(c, j) + noise * rng.normal();
            labels[row] = c;
            ++row;
        }
    }
}

}  // namespace

GeneratedData generate_dataset(const DatasetSpec& spec) {
    if (spec.num_classes < 2) throw std::invalid_argument("generate_dataset: need at least 2 classes");
    if (spec.feature_dim < 1) throw std::invalid_argument("generate_dataset: feature_dim must be >= 1");
    if (spec.n1 < 1 || spec.m1 < 1) throw std::invalid_argument("generate_dataset: n1 and m1 must be >= 1");
    if (!(spec.gamma_l > 0.0)) throw std::invalid_argument("generate_dataset: gamma_l must be > 0");
    if (spec.test_per_class < 1) throw std::invalid_argument("generate_dataset: test_per_class must be >= 1");

    RandomStream rng = seeded_rng(spec.seed);
    Matrix means = class_means(spec);

    GeneratedData out;
    out.labeled.class_counts = longtail_counts(spec.n1, spec.gamma_l, spec.num_classes);
    out.unlabeled.class_counts = unlabeled_counts(spec);

    int n_l = 0, n_u = 0;
    for (int c : out.labeled.class_counts) n_l += c;
    for (int c : out.unlabeled.class_counts) n_u += c;

    out.labeled.features = Matrix(n_l, spec.feature_dim);
    out.labeled.labels.resize(n_l);
    fill_class_samples(out.labeled.features, out.labeled.labels, means, out.labeled.class_counts,
                       spec.noise_scale, rng);

    out.unlabeled.features = Matrix(n_u, spec.feature_dim);
    out.unlabeled.true_labels.resize(n_u);
    fill_class_samples(out.unlabeled.features, out.unlabeled.true_labels, means,
                       out.unlabeled.class_counts, spec.noise_scale, rng);

    std::vector<int> test_counts(spec.num_classes, spec.test_per_class);
    out.test_features = Matrix(spec.num_classes * spec.test_per_class, spec.feature_dim);
    out.test_labels.resize(out.test_features.rows());
    fill_class_samples(out.test_features, out.test_labels, means, test_counts, spec.noise_scale, rng);
    return out;
}

Matrix augment(const Matrix& batch, AugmentKind kind, double noise_scale, RandomStream& rng) {
    require_finite(batch, "augment: batch");
    Matrix out = batch;
    double std_dev = (kind == AugmentKind::Weak ? 0.05 : 0.25) * noise_scale;
    for (double& x : out.data()) x += std_dev * rng.normal();
    if (kind == AugmentKind::Strong) {
        for (double& x : out.data())
            if (rng.uniform() < 0.1) x = 0.0;
    }
    return out;
}

BatchPair sample_batches(const LabeledSet& labeled, const UnlabeledSet& unlabeled, int batch_size,
                         double noise_scale, RandomStream& rng) {
    if (labeled.features.rows() == 0 || unlabeled.features.rows() == 0)
        throw std::invalid_argument("sample_batches: empty dataset");
    if (batch_size < 1) throw std::invalid_argument("sample_batches: batch_size must be >= 1");

    BatchPair out;
    out.labeled.features = Matrix(batch_size, labeled.features.cols());
    out.labeled.labels.resize(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        int idx = static_cast<int>(rng.uniform_index(labeled.features.rows()));
        std::copy(labeled.features.row(idx).begin(), labeled.features.row(idx).end(),
                  out.labeled.features.row(i).begin());
        out.labeled.labels[i] = labeled.labels[idx];
    }

    Matrix picked(batch_size, unlabeled.features.cols());
    out.unlabeled.source_indices.resize(batch_size);
    for (int i = 0; i < batch_size; ++i) {
        int idx = static_cast<int>(rng.uniform_index(unlabeled.features.rows()));
        out.unlabeled.source_indices[i] = idx;
        std::copy(unlabeled.features.row(idx).begin(), unlabeled.features.row(idx).end(),
                  picked.row(i).begin());
    }
    out.unlabeled.weak = augment(picked, AugmentKind::Weak, noise_scale, rng);
    out.unlabeled.strong = augment(picked, AugmentKind::Strong, noise_scale, rng);
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

double parse_number(const std::string& s, int row, const std::string& column) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty())
        throw std::runtime_error("load_csv_dataset: non-numeric feature '" + s + "' at row " +
                                 std::to_string(row) + ", column " + column);
    return v;
}

}  // namespace

CsvDataset load_csv_dataset(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv_dataset: cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv_dataset: empty file");
    std::vector<std::string> header = split_csv_line(line);
    int label_idx = -1;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == label_column) label_idx = static_cast<int>(i);
    if (label_idx < 0)
        throw std::runtime_error("load_csv_dataset: label column '" + label_column + "' not found");

    CsvDataset out;
    for (std::size_t i = 0; i < header.size(); ++i)
        if (static_cast<int>(i) != label_idx) out.feature_names.push_back(header[i]);
    const int d = static_cast<int>(out.feature_names.size());
    if (d == 0) throw std::runtime_error("load_csv_dataset: no feature columns");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> row_labels;
    int row_number = 0;
    while (std::getline(in, line)) {
        ++row_number;
        if (line.empty()) continue;
        std::vector<std::string> fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw std::runtime_error("load_csv_dataset: malformed row " + std::to_string(row_number) +
                                     " (expected " + std::to_string(header.size()) + " fields, got " +
                                     std::to_string(fields.size()) + ")");
        std::vector<double> features;
        features.reserve(d);
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (static_cast<int>(i) == label_idx) continue;
            features.push_back(parse_number(fields[i], row_number, header[i]));
        }
        rows.push_back(std::move(features));
        row_labels.push_back(fields[label_idx]);
    }
    if (rows.empty()) throw std::runtime_error("load_csv_dataset: no data rows");

    // standardization statistics over the full labeled+unlabeled pool
    out.column_mean.assign(d, 0.0);
    out.column_std.assign(d, 0.0);
    for (const auto& r : rows)
        for (int j = 0; j < d; ++j) out.column_mean[j] += r[j];
    for (int j = 0; j < d; ++j) out.column_mean[j] /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (int j = 0; j < d; ++j) {
            double dx = r[j] - out.column_mean[j];
            out.column_std[j] += dx * dx;
        }
    for (int j = 0; j < d; ++j)
        out.column_std[j] = std::sqrt(std::max(out.column_std[j] / rows.size(), 1e-12));

    std::map<std::string, int> class_index;
    for (const auto& lab : row_labels)
        if (!lab.empty()) class_index.emplace(lab, 0);
    int next = 0;
    for (auto& [name, idx] : class_index) {
        idx = next++;
        out.class_names.push_back(name);
    }
    const int num_classes = next;

    int n_labeled = 0;
    for (const auto& lab : row_labels)
        if (!lab.empty()) ++n_labeled;
    int n_unlabeled = static_cast<int>(rows.size()) - n_labeled;

    out.labeled.features = Matrix(n_labeled, d);
    out.labeled.labels.reserve(n_labeled);
    out.labeled.class_counts.assign(std::max(num_classes, 1), 0);
    out.unlabeled.features = Matrix(n_unlabeled, d);
    out.unlabeled.class_counts.assign(std::max(num_classes, 1), 0);

    int li = 0, ui = 0;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        Matrix& target = row_labels[r].empty() ? out.unlabeled.features : out.labeled.features;
        int row = row_labels[r].empty() ? ui++ : li;
        for (int j = 0; j < d; ++j)
            target(row, j) = (rows[r][j] - out.column_mean[j]) / out.column_std[j];
        if (!row_labels[r].empty()) {
            int cls = class_index[row_labels[r]];
            out.labeled.labels.push_back(cls);
            out.labeled.class_counts[cls]++;
            ++li;
        }
    }
    return out;
}

void export_dataset_csv(const GeneratedData& data, const DatasetSpec& spec,
                        const std::string& csv_path, const std::string& meta_path) {
    std::ofstream csv(csv_path);
    if (!csv) throw std::runtime_error("export_dataset_csv: cannot write " + csv_path);
    const int d = data.labeled.features.cols();
    for (int j = 0; j < d; ++j) csv << "f" << j << ",";
    csv << "label\n";
    char buf[64];
    auto write_row = [&](const Matrix& m, int i, const std::string& label) {
        for (int j = 0; j < d; ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            csv << buf << ",";
        }
        csv << label << "\n";
    };
    for (int i = 0; i < data.labeled.features.rows(); ++i)
        write_row(data.labeled.features, i, std::to_string(data.labeled.labels[i]));
    for (int i = 0; i < data.unlabeled.features.rows(); ++i)
        write_row(data.unlabeled.features, i, "");

    std::ofstream meta(meta_path);
    if (!meta) throw std::runtime_error("export_dataset_csv: cannot write " + meta_path);
    meta << "num_classes = " << spec.num_classes << "\n";
    meta << "feature_dim = " << spec.feature_dim << "\n";
    meta << "n1 = " << spec.n1 << "\n";
    meta << "m1 = " << spec.m1 << "\n";
    meta << "gamma_l = " << spec.gamma_l << "\n";
    meta << "gamma_u = " << spec.gamma_u.str() << "\n";
    meta << "class_separation = " << spec.class_separation << "\n";
    meta << "noise_scale = " << spec.noise_scale << "\n";
    meta << "test_per_class = " << spec.test_per_class << "\n";
    meta << "seed = " << spec.seed << "\n";
    auto write_counts = [&meta](const char* key, const std::vector<int>& counts) {
        meta << key << " =";
        for (int c : counts) meta << " " << c;
        meta << "\n";
    };
    write_counts("labeled_counts", data.labeled.class_counts);
    write_counts("unlabeled_counts", data.unlabeled.class_counts);
    meta << "test_count = " << data.test_features.rows() << "\n";
}

}  // namespace ccl
