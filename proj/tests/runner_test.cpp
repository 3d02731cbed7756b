#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ccl/gradsuite.hpp"
#include "ccl/model.hpp"
#include "ccl/runner.hpp"

using namespace ccl;

namespace {

namespace fs = std::filesystem;

RunConfig tiny_config(const std::string& dir) {
    RunConfig config;
    config.data.num_classes = 3;
    config.data.feature_dim = 3;
    config.data.n1 = 20;
    config.data.m1 = 40;
    config.data.gamma_l = 4.0;
    config.data.gamma_u = UnlabeledRegime::parse("4");
    config.data.class_separation = 2.5;
    config.data.noise_scale = 0.8;
    config.data.test_per_class = 10;
    config.hidden_dims = {12};
    config.embed_dim = 6;
    config.ccl.energy_zeta = -1.5;
    config.train.steps = 25;
    config.train.eval_interval = 25;
    config.train.batch_size = 12;
    config.seeds = {0, 1};
    config.output_dir = dir;
    return config;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct NullBuffer : std::streambuf {
    int overflow(int c) override { return c; }
};

}  // namespace

TEST_CASE("run_experiment writes per-seed artifacts and an aggregate") {
    NullBuffer sink;
    std::ostream quiet(&sink);
    RunConfig config = tiny_config("runner_test_out");
    ExperimentOutcome outcome = run_experiment(config, quiet);

    CHECK(outcome.per_seed.size() == 2);
    CHECK(fs::exists("runner_test_out/metrics_seed0.csv"));
    CHECK(fs::exists("runner_test_out/metrics_seed1.csv"));
    CHECK(fs::exists("runner_test_out/summary_seed0.txt"));
    CHECK(fs::exists("runner_test_out/aggregate.csv"));
    CHECK(fs::exists("runner_test_out/summary.txt"));
    CHECK(fs::exists("runner_test_out/model_seed0.ckpt"));

    // the per-seed summary echoes every config value used
    std::string summary = slurp("runner_test_out/summary_seed0.txt");
    CHECK(summary.find("ccl.lambda1") != std::string::npos);
    CHECK(summary.find("wall_time_seconds") != std::string::npos);
    std::string aggregate = slurp("runner_test_out/aggregate.csv");
    CHECK(aggregate.find("seed,top1,ece,prior_l1") == 0);

    // the checkpoint is loadable and matches the run configuration
    auto [model, step] = load_checkpoint("runner_test_out/model_seed0.ckpt");
    CHECK(step == 25);
    CHECK(model.config.num_classes == 3);

    // metrics header matches the documented column order
    std::string metrics = slurp("runner_test_out/metrics_seed0.csv");
    CHECK(metrics.find("step,top1,ece,prior_l1,masked_fraction,loss_cls,loss_rpl,loss_spl,lr\n") == 0);

    // identical reruns are byte-identical
    RunConfig again = tiny_config("runner_test_out2");
    run_experiment(again, quiet);
    CHECK(slurp("runner_test_out/metrics_seed0.csv") == slurp("runner_test_out2/metrics_seed0.csv"));
    CHECK(slurp("runner_test_out/metrics_seed1.csv") == slurp("runner_test_out2/metrics_seed1.csv"));

    fs::remove_all("runner_test_out");
    fs::remove_all("runner_test_out2");
}

TEST_CASE("parallel seed execution reproduces the sequential artifacts") {
    NullBuffer sink;
    std::ostream quiet(&sink);
    RunConfig sequential = tiny_config("runner_test_seq");
    run_experiment(sequential, quiet);

    RunConfig parallel = tiny_config("runner_test_par");
    parallel.parallel = true;
    ExperimentOutcome outcome = run_experiment(parallel, quiet);
    CHECK(outcome.per_seed.size() == 2);
    CHECK(slurp("runner_test_seq/metrics_seed0.csv") == slurp("runner_test_par/metrics_seed0.csv"));
    CHECK(slurp("runner_test_seq/metrics_seed1.csv") == slurp("runner_test_par/metrics_seed1.csv"));

    fs::remove_all("runner_test_seq");
    fs::remove_all("runner_test_par");
}

TEST_CASE("ablation grid covers six combinations per regime") {
    NullBuffer sink;
    std::ostream quiet(&sink);
    RunConfig base = tiny_config("runner_test_ablate");
    base.seeds = {0};
    std::vector<AblationRow> rows = run_ablation_grid(base, quiet);
    CHECK(rows.size() == 18);

    int consistent_rows = 0;
    for (const AblationRow& r : rows)
        if (r.regime == "consistent") consistent_rows++;
    CHECK(consistent_rows == 6);
    CHECK(fs::exists("runner_test_ablate/ablation.csv"));

    // the all-flags-on combination equals a plain run with the same settings
    RunConfig direct = base;
    direct.output_dir = "runner_test_direct";
    run_experiment(direct, quiet);
    CHECK(slurp("runner_test_ablate/consistent/combo5/metrics_seed0.csv") ==
          slurp("runner_test_direct/metrics_seed0.csv"));

    fs::remove_all("runner_test_ablate");
    fs::remove_all("runner_test_direct");
}

TEST_CASE("the loss gradient suite stays under the contract tolerance") {
    std::vector<GradCheckCase> cases = run_loss_gradient_suite(5);
    CHECK(cases.size() > 0);
    for (const GradCheckCase& c : cases) {
        CAPTURE(c.name);
        CHECK(c.report.max_rel_err < 1e-4);
    }
}
