#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ccl/config.hpp"
#include "ccl/pipeline.hpp"

namespace ccl {

struct SeedOutcome {
    std::uint64_t seed = 0;
    double final_top1 = 0.0;
    double final_ece = 0.0;
    double final_prior_l1 = 0.0;
};

struct ExperimentOutcome {
    std::vector<SeedOutcome> per_seed;
    double mean_top1 = 0.0;
    double std_top1 = 0.0;
};

// One run per seed: metrics_seed<k>.csv + summary_seed<k>.txt under
// output_dir, then aggregate.csv and summary.txt. With config.parallel the
// seeds run in forked worker processes.
ExperimentOutcome run_experiment(const RunConfig& config, std::ostream& log);

struct AblationRow {
    std::string regime;
    AblationFlags flags;
    double mean_top1 = 0.0;
    double std_top1 = 0.0;
};

// The six flag combinations under consistent / uniform / reversed unlabeled
// regimes; writes ablation.csv under output_dir.
std::vector<AblationRow> run_ablation_grid(const RunConfig& base, std::ostream& log);

std::string metrics_csv_text(const RunResult& result);

}  // namespace ccl
