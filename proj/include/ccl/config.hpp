#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ccl/dataset.hpp"
#include "ccl/model.hpp"

namespace ccl {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class MaskKind { Confidence, Energy };

struct CCLHyper {
    double lambda1 = 0.7;         // classification weight; 1-lambda1 on the reliable-PL loss
    double lambda2 = 1.0;         // smoothed-PL loss weight
    double beta = 0.2;            // propagation mixing
    double tau = 2.0;             // logit-adjustment scale on log priors
    double conf_threshold = 0.95; // confidence mask threshold
    double energy_zeta = -8.75;   // energy mask threshold
    double energy_temp = 1.0;     // energy temperature
    double alpha = 0.1;           // EMA momentum for the class-prior estimate
    double kernel_tc = 1.0;       // kernel temperature
    MaskKind consistency_mask = MaskKind::Confidence;
    bool standard_branch_pseudo = true;  // standard head also trains on masked pseudo-labels
};

struct TrainParams {
    long steps = 4000;
    long eval_interval = 250;
    int batch_size = 64;
    double base_lr = 0.03;
    double momentum = 0.9;
    double weight_decay = 5e-4;
};

// Mirrors the ablation axes: each switch removes one ingredient.
struct AblationFlags {
    bool dual_branch = true;
    bool reliable_pl = true;
    bool smoothed_pl = true;
    bool energy_mask = true;  // off = confidence-based selection for prior/reliable set
};

struct RunConfig {
    DatasetSpec data;
    std::vector<int> hidden_dims{64, 64};
    int embed_dim = 16;
    double init_scale = 1.0;
    CCLHyper ccl;
    TrainParams train;
    AblationFlags ablation;
    std::vector<std::uint64_t> seeds{0};
    std::string output_dir = "runs/out";
    bool parallel = false;

    ModelConfig model_config() const;
    void validate() const;  // throws ConfigError naming the offending field
    // Full key=value echo of every setting, one per line.
    std::string echo() const;
};

RunConfig parse_config_file(const std::string& path);
// Overrides of the form "--section.key=value"; later entries win.
void apply_overrides(RunConfig& config, const std::vector<std::string>& overrides);
// Sets one dotted key; throws ConfigError on unknown keys or bad values.
void set_config_key(RunConfig& config, const std::string& key, const std::string& value);

}  // namespace ccl
