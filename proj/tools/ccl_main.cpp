#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccl/config.hpp"
#include "ccl/dataset.hpp"
#include "ccl/gradsuite.hpp"
#include "ccl/pipeline.hpp"
#include "ccl/runner.hpp"

namespace {

ccl::RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
    ccl::RunConfig config = path.empty() ? ccl::RunConfig{} : ccl::parse_config_file(path);
    ccl::apply_overrides(config, overrides);
    config.validate();
    return config;
}

int cmd_run(const std::string& config_path, const std::vector<std::string>& overrides) {
    ccl::RunConfig config = load_config(config_path, overrides);
    ccl::run_experiment(config, std::cout);
    std::cout << "artifacts in " << config.output_dir << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& overrides) {
    ccl::RunConfig config = load_config(config_path, overrides);
    std::vector<ccl::AblationRow> rows = ccl::run_ablation_grid(config, std::cout);
    std::printf("%-11s %-5s %-4s %-7s %-7s %s\n", "regime", "dual", "rpl", "spl", "energy", "top1");
    for (const ccl::AblationRow& r : rows)
        std::printf("%-11s %-5d %-4d %-7d %-7d %.4f +- %.4f\n", r.regime.c_str(),
                    r.flags.dual_branch, r.flags.reliable_pl, r.flags.smoothed_pl,
                    r.flags.energy_mask, r.mean_top1, r.std_top1);
    return 0;
}

int cmd_gradcheck(int seeds) {
    std::vector<ccl::GradCheckCase> cases = ccl::run_loss_gradient_suite(seeds);
    std::printf("%-52s %-12s %-12s %s\n", "case", "max_rel_err", "max_abs_err", "params");
    bool ok = true;
    for (const ccl::GradCheckCase& c : cases) {
        std::printf("%-52s %-12.3e %-12.3e %zu\n", c.name.c_str(), c.report.max_rel_err,
                    c.report.max_abs_err, c.report.param_count);
        ok = ok && c.report.max_rel_err < 1e-4;
    }
    std::printf("worst relative error: %.3e (%s)\n", ccl::worst_relative_error(cases),
                ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

int cmd_datagen(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::string& out_dir) {
    ccl::RunConfig config = load_config(config_path, overrides);
    std::filesystem::create_directories(out_dir);
    ccl::GeneratedData data = ccl::generate_dataset(config.data);
    ccl::export_dataset_csv(data, config.data, out_dir + "/dataset.csv", out_dir + "/dataset.meta");
    std::cout << "wrote " << out_dir << "/dataset.csv and dataset.meta\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"long-tailed semi-supervised learning lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "runs/datagen";
    int gradcheck_seeds = 5;

    CLI::App* run = app.add_subcommand("run", "train and evaluate over the configured seeds");
    run->add_option("--config", config_path, "config file (key = value lines)");
    run->allow_extras();

    CLI::App* ablate = app.add_subcommand("ablate", "flag-combination grid over the three regimes");
    ablate->add_option("--config", config_path, "config file");
    ablate->allow_extras();

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every loss");
    gradcheck->add_option("--seeds", gradcheck_seeds, "number of random instances per loss");

    CLI::App* datagen = app.add_subcommand("datagen", "write a dataset snapshot (CSV + metadata)");
    datagen->add_option("--config", config_path, "config file");
    datagen->add_option("--out", out_dir, "output directory");
    datagen->allow_extras();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, run->remaining());
        if (ablate->parsed()) return cmd_ablate(config_path, ablate->remaining());
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_seeds);
        if (datagen->parsed()) return cmd_datagen(config_path, datagen->remaining(), out_dir);
    } catch (const ccl::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ccl::DivergenceError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
