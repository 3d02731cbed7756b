#include "ccl/runner.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace ccl {

namespace {

namespace fs = std::filesystem;

std::string metrics_path(const RunConfig& config, std::uint64_t seed) {
    return config.output_dir + "/metrics_seed" + std::to_string(seed) + ".csv";
}

std::string summary_path(const RunConfig& config, std::uint64_t seed) {
    return config.output_dir + "/summary_seed" + std::to_string(seed) + ".txt";
}

SeedOutcome run_one_seed(const RunConfig& config, std::uint64_t seed) {
    auto started = std::chrono::steady_clock::now();
    RunResult result = train(config, seed);
    double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::ofstream csv(metrics_path(config, seed));
    if (!csv) throw std::runtime_error("run: cannot write " + metrics_path(config, seed));
    csv << metrics_csv_text(result);

    save_checkpoint(result.final_state, config.train.steps,
                    config.output_dir + "/model_seed" + std::to_string(seed) + ".ckpt");

    std::ofstream summary(summary_path(config, seed));
    summary << "seed = " << seed << "\n";
    summary << config.echo();
    summary << "rpl_skipped_steps = " << result.rpl_skipped_steps << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", wall);
    summary << "wall_time_seconds = " << buf << "\n";
    summary << "final:\n" << result.final_report.summary();

    const MetricRow& last = result.rows.back();
    return SeedOutcome{seed, last.top1, last.ece, last.prior_l1};
}

SeedOutcome read_outcome_from_csv(const RunConfig& config, std::uint64_t seed) {
    std::ifstream in(metrics_path(config, seed));
    if (!in) throw std::runtime_error("run: missing worker output " + metrics_path(config, seed));
    std::string line, last;
    std::getline(in, line);  // header
    while (std::getline(in, line))
        if (!line.empty()) last = line;
    SeedOutcome out;
    out.seed = seed;
    long step;
    double masked, lc, lr_, ls, lr2;
    if (std::sscanf(last.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &step, &out.final_top1,
                    &out.final_ece, &out.final_prior_l1, &masked, &lc, &lr_, &ls, &lr2) != 9)
        throw std::runtime_error("run: malformed metrics row in " + metrics_path(config, seed));
    return out;
}

void aggregate(const RunConfig& config, ExperimentOutcome& outcome, std::ostream& log) {
    double mean = 0.0;
    for (const SeedOutcome& s : outcome.per_seed) mean += s.final_top1;
    mean /= static_cast<double>(outcome.per_seed.size());
    double var = 0.0;
    for (const SeedOutcome& s : outcome.per_seed) var += (s.final_top1 - mean) * (s.final_top1 - mean);
    var /= static_cast<double>(outcome.per_seed.size());
    outcome.mean_top1 = mean;
    outcome.std_top1 = std::sqrt(var);

    std::ofstream agg(config.output_dir + "/aggregate.csv");
    agg << "seed,top1,ece,prior_l1\n";
    char buf[160];
    for (const SeedOutcome& s : outcome.per_seed) {
        std::snprintf(buf, sizeof(buf), "%llu,%.12g,%.12g,%.12g",
                      static_cast<unsigned long long>(s.seed), s.final_top1, s.final_ece,
                      s.final_prior_l1);
        agg << buf << "\n";
    }

    std::ofstream summary(config.output_dir + "/summary.txt");
    summary << config.echo();
    std::snprintf(buf, sizeof(buf), "mean_top1 = %.6f\nstd_top1 = %.6f\n", outcome.mean_top1,
                  outcome.std_top1);
    summary << buf;
    log << "mean top1 " << outcome.mean_top1 << " (std " << outcome.std_top1 << ") over "
        << outcome.per_seed.size() << " seed(s)\n";
}

}  // namespace

std::string metrics_csv_text(const RunResult& result) {
    std::ostringstream os;
    os << metric_csv_header() << "\n";
    for (const MetricRow& row : result.rows) os << metric_csv_row(row) << "\n";
    return os.str();
}

ExperimentOutcome run_experiment(const RunConfig& config, std::ostream& log) {
    config.validate();
    fs::create_directories(config.output_dir);

    ExperimentOutcome outcome;
    if (config.parallel && config.seeds.size() > 1) {
        std::vector<std::pair<std::uint64_t, pid_t>> workers;
        for (std::uint64_t seed : config.seeds) {
            pid_t pid = fork();
            if (pid < 0) throw std::runtime_error("run: fork failed");
            if (pid == 0) {
                try {
                    run_one_seed(config, seed);
                    _exit(0);
                } catch (const std::exception& e) {
                    std::fprintf(stderr, "seed %llu failed: %s\n",
                                 static_cast<unsigned long long>(seed), e.what());
                    _exit(1);
                }
            }
            workers.emplace_back(seed, pid);
        }
        bool failed = false;
        for (auto [seed, pid] : workers) {
            int status = 0;
            waitpid(pid, &status, 0);
            if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) failed = true;
        }
        if (failed) throw std::runtime_error("run: a worker process failed");
        for (std::uint64_t seed : config.seeds)
            outcome.per_seed.push_back(read_outcome_from_csv(config, seed));
    } else {
        for (std::uint64_t seed : config.seeds) {
            log << "seed " << seed << "...\n";
            outcome.per_seed.push_back(run_one_seed(config, seed));
        }
    }
    aggregate(config, outcome, log);
    return outcome;
}

std::vector<AblationRow> run_ablation_grid(const RunConfig& base, std::ostream& log) {
    base.validate();
    fs::create_directories(base.output_dir);

    // ingredient lattice: rows mirror the ablation table
    const std::vector<AblationFlags> combos = {
        {false, false, false, true}, {true, false, false, true}, {true, false, true, true},
        {true, true, false, true},   {true, true, true, false},  {true, true, true, true},
    };
    const std::vector<std::pair<std::string, UnlabeledRegime>> regimes = {
        {"consistent", UnlabeledRegime{UnlabeledRegime::Kind::LongTail, base.data.gamma_l}},
        {"uniform", UnlabeledRegime{UnlabeledRegime::Kind::Uniform, 1.0}},
        {"reversed", UnlabeledRegime{UnlabeledRegime::Kind::Reversed, base.data.gamma_l}},
    };

    std::vector<AblationRow> rows;
    std::ofstream csv(base.output_dir + "/ablation.csv");
    csv << "regime,dual_branch,reliable_pl,smoothed_pl,energy_mask,mean_top1,std_top1\n";
    for (const auto& [regime_name, regime] : regimes) {
        for (std::size_t i = 0; i < combos.size(); ++i) {
            RunConfig config = base;
            config.data.gamma_u = regime;
            config.ablation = combos[i];
            config.output_dir = base.output_dir + "/" + regime_name + "/combo" + std::to_string(i);
            fs::create_directories(config.output_dir);
            log << regime_name << " combo " << i << "\n";
            ExperimentOutcome outcome = run_experiment(config, log);
            AblationRow row{regime_name, combos[i], outcome.mean_top1, outcome.std_top1};
            rows.push_back(row);
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%d,%.12g,%.12g", regime_name.c_str(),
                          row.flags.dual_branch ? 1 : 0, row.flags.reliable_pl ? 1 : 0,
                          row.flags.smoothed_pl ? 1 : 0, row.flags.energy_mask ? 1 : 0, row.mean_top1,
                          row.std_top1);
            csv << buf << "\n";
        }
    }
    return rows;
}

}  // namespace ccl
