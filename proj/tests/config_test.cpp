#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "ccl/config.hpp"

using namespace ccl;

TEST_CASE("config file parsing with comments and overrides") {
    const char* path = "config_test_basic.cfg";
    {
        std::ofstream out(path);
        out << "# experiment setup\n";
        out << "data.num_classes = 4\n";
        out << "data.gamma_u = reversed:50   # inverted tail\n";
        out << "ccl.lambda1 = 0.6\n";
        out << "train.steps = 123\n";
        out << "run.seeds = 1,2,3\n";
    }
    RunConfig config = parse_config_file(path);
    CHECK(config.data.num_classes == 4);
    CHECK(config.data.gamma_u.kind == UnlabeledRegime::Kind::Reversed);
    CHECK(config.data.gamma_u.gamma == doctest::Approx(50.0));
    CHECK(config.ccl.lambda1 == doctest::Approx(0.6));
    CHECK(config.train.steps == 123);
    CHECK(config.seeds == std::vector<std::uint64_t>{1, 2, 3});

    apply_overrides(config, {"--train.steps=7", "--ccl.beta=0.4"});
    CHECK(config.train.steps == 7);
    CHECK(config.ccl.beta == doctest::Approx(0.4));
    std::remove(path);
}

TEST_CASE("unknown keys are rejected by name") {
    RunConfig config;
    CHECK_THROWS_WITH_AS(set_config_key(config, "data.bogus", "1"),
                         doctest::Contains("data.bogus"), ConfigError);
    CHECK_THROWS_WITH_AS(set_config_key(config, "train.steps", "abc"),
                         doctest::Contains("train.steps"), ConfigError);
}

TEST_CASE("validation names the offending field") {
    RunConfig config;
    config.ccl.lambda1 = 1.5;
    CHECK_THROWS_WITH_AS(config.validate(), doctest::Contains("ccl.lambda1"), ConfigError);

    RunConfig empty_seeds;
    empty_seeds.seeds.clear();
    CHECK_THROWS_WITH_AS(empty_seeds.validate(), doctest::Contains("run.seeds"), ConfigError);

    RunConfig bad_beta;
    bad_beta.ccl.beta = 1.0;
    CHECK_THROWS_WITH_AS(bad_beta.validate(), doctest::Contains("ccl.beta"), ConfigError);
}

TEST_CASE("echo lists every configuration key") {
    RunConfig config;
    std::string echo = config.echo();
    for (const char* key :
         {"data.num_classes", "data.feature_dim", "data.n1", "data.m1", "data.gamma_l",
          "data.gamma_u", "data.class_separation", "data.noise_scale", "data.test_per_class",
          "model.hidden_dims", "model.embed_dim", "model.init_scale", "ccl.lambda1", "ccl.lambda2",
          "ccl.beta", "ccl.tau", "ccl.conf_threshold", "ccl.energy_zeta", "ccl.energy_temp",
          "ccl.alpha", "ccl.kernel_tc", "ccl.consistency_mask", "ccl.standard_branch_pseudo",
          "train.steps", "train.eval_interval", "train.batch_size", "train.base_lr",
          "train.momentum", "train.weight_decay", "ablation.dual_branch", "ablation.reliable_pl",
          "ablation.smoothed_pl", "ablation.energy_mask", "run.seeds", "run.output_dir",
          "run.parallel"}) {
        CAPTURE(key);
        CHECK(echo.find(key) != std::string::npos);
    }
}

TEST_CASE("regime strings round-trip") {
    CHECK(UnlabeledRegime::parse("uniform").str() == "uniform");
    CHECK(UnlabeledRegime::parse("reversed:100").str() == "reversed:100");
    CHECK(UnlabeledRegime::parse("42").kind == UnlabeledRegime::Kind::LongTail);
    CHECK_THROWS(UnlabeledRegime::parse("sideways"));
    CHECK_THROWS(UnlabeledRegime::parse("-3"));
}
