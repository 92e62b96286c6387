#include <doctest.h>

#include <cmath>

#include "fedpt/config.hpp"
#include "fedpt/metrics.hpp"

using namespace fedpt;

TEST_CASE("toml: scalars, arrays, comments, and rejection of tables") {
  const auto t = parse_toml(
      "# experiment\n"
      "name = \"demo run\"   # inline comment\n"
      "rounds = 1_500\n"
      "lr = 3.16e-1\n"
      "flag = true\n"
      "dims = [32, 512, 4]\n"
      "plans = [\"\", \"dense_0\"]\n");
  CHECK(t.at("name").str == "demo run");
  CHECK(t.at("rounds").integer == 1500);
  CHECK(t.at("lr").floating == doctest::Approx(0.316));
  CHECK(t.at("flag").boolean == true);
  REQUIRE(t.at("dims").array.size() == 3);
  CHECK(t.at("dims").array[1].integer == 512);
  CHECK(t.at("plans").array[1].str == "dense_0");

  CHECK_THROWS_AS(parse_toml("[section]\nx = 1\n"), FormatError);
  CHECK_THROWS_AS(parse_toml("x 1\n"), FormatError);
  CHECK_THROWS_AS(parse_toml("x = \n"), FormatError);
  CHECK_THROWS_AS(parse_toml("x = 1\nx = 2\n"), FormatError);
}

TEST_CASE("minimal config gets the documented defaults") {
  const ExperimentConfig cfg = config_from_table(parse_toml("rounds = 5\n"));
  CHECK(cfg.rounds == 5);
  CHECK(cfg.server_opt.kind == OptKind::sgd);
  CHECK(cfg.protect_norm == true);
  CHECK(cfg.weighting == "examples");
  CHECK_FALSE(cfg.dp);
  CHECK_FALSE(cfg.local_steps.has_value());
  CHECK(cfg.data.partition == "dirichlet");
}

TEST_CASE("unknown keys and unknown freeze blocks are named in the error") {
  try {
    config_from_table(parse_toml("no_such_key = 1\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
  }

  try {
    config_from_table(parse_toml("freeze = \"dense_7\"\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("dense_7") != std::string::npos);
  }
}

TEST_CASE("model 'mlp' without dims names the missing field") {
  try {
    config_from_table(parse_toml("model = \"mlp\"\nmlp_dims = []\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("mlp_dims") != std::string::npos);
  }
}

TEST_CASE("the emnist-cnn preset pins the published run shape") {
  const ExperimentConfig cfg = config_from_table(parse_toml("preset = \"emnist-cnn\"\n"));
  CHECK(cfg.rounds == 1500);
  CHECK(cfg.clients_per_round == 20);
  CHECK(cfg.batch_size == 16);
  CHECK(cfg.client_opt.kind == OptKind::sgd);
  CHECK(cfg.client_opt.lr == doctest::Approx(0.05));
  CHECK(cfg.server_opt.kind == OptKind::sgd);
  CHECK(cfg.server_opt.lr == doctest::Approx(0.5));
  CHECK(cfg.model == "emnist-cnn");
  CHECK(cfg.data.classes == 62);

  // explicit keys override the preset regardless of file order
  const ExperimentConfig c2 =
      config_from_table(parse_toml("rounds = 3\npreset = \"emnist-cnn\"\n"));
  CHECK(c2.rounds == 3);
  CHECK(c2.clients_per_round == 20);
}

TEST_CASE("config validation rejects inconsistent setups") {
  CHECK_THROWS_AS(config_from_table(parse_toml("rounds = 0\n")), ConfigError);
  CHECK_THROWS_AS(config_from_table(parse_toml("clients_per_round = 100\nnum_clients = 10\n")),
                  ConfigError);
  CHECK_THROWS_AS(
      config_from_table(parse_toml("num_clients = 10\nexamples_per_client = 1000\n")),
      ConfigError);
  CHECK_THROWS_AS(config_from_table(parse_toml("dp = true\nserver_optimizer = \"adam\"\n")),
                  ConfigError);
  CHECK_THROWS_AS(config_from_table(parse_toml("weighting = \"magic\"\n")), ConfigError);
  CHECK_THROWS_AS(config_from_table(parse_toml("freeze = \"dense_0\"\nfedavg_baseline = true\n")),
                  ConfigError);
  CHECK_THROWS_AS(config_from_table(parse_toml("classes = 7\n")), ConfigError);  // mlp ends at 4
}

TEST_CASE("comm_cost: published counts and the degenerate-client error") {
  const CommCost c = comm_cost(84030, 20);
  CHECK(c.bytes_up == 20LL * 4 * 84030);
  CHECK(c.bytes_up == 6722400);
  CHECK(c.bytes_down == 20LL * (4 * 84030 + 8));

  CHECK_THROWS_AS(comm_cost(84030, 0), ConfigError);
  CHECK_THROWS_AS(comm_cost(0, 20), ConfigError);

  // Full-model vs partially trainable downlink for the character task: ~20x.
  const double ratio = 1690174.0 / 84030.0;
  CHECK(std::round(ratio * 10) / 10 == doctest::Approx(20.1));
  CHECK(std::round(ratio) == 20);
}

TEST_CASE("reduction_factor reproduces every published reduction") {
  auto around = [](double fraction_pct, double expected) {
    const double r = reduction_factor(fraction_pct / 100.0);
    CHECK(std::round(r * 10) / 10 == doctest::Approx(expected));
  };
  // image-classification ladder
  around(2.16, 46.3);
  around(3.47, 28.8);
  around(8.07, 12.4);
  around(26.25, 3.8);
  around(100.0, 1.0);
  // next-word-prediction ladder
  around(73.8, 1.4);
  around(82.6, 1.2);
  around(91.3, 1.1);
  around(100.0, 1.0);

  CHECK(reduction_factor(1.0) == 1.0);
  CHECK_THROWS_AS(reduction_factor(0.0), ConfigError);
  CHECK_THROWS_AS(reduction_factor(1.2), ConfigError);
}

TEST_CASE("metrics csv: golden header and row shape") {
  CHECK(std::string(kMetricsCsvHeader) ==
        "round,train_loss,eval_accuracy,trainable_params,frozen_params,bytes_down,bytes_up,"
        "round_ms,peak_alloc_bytes,clip_fraction,noise_multiplier");

  MetricsRow r;
  r.round = 3;
  r.train_loss = 1.25;
  r.trainable_params = 84030;
  r.frozen_params = 1606144;
  r.bytes_down = 100;
  r.bytes_up = 80;
  r.round_ms = 12.5;
  r.peak_alloc_bytes = 4096;
  CHECK(format_metrics_row(r) == "3,1.250000,,84030,1606144,100,80,12.500,4096,,");

  r.eval_accuracy = 0.9175;
  r.clip_fraction = 0.25;
  r.noise_multiplier = 6.21;
  CHECK(format_metrics_row(r) == "3,1.250000,0.9175,84030,1606144,100,80,12.500,4096,0.2500,6.21");
}

TEST_CASE("outlier filter drops 10 from {1,1,1,10} and keeps uniform data") {
  const auto kept = filter_outliers_one_sd({1, 1, 1, 10});
  CHECK(kept == std::vector<double>{1, 1, 1});
  const auto same = filter_outliers_one_sd({2, 2, 2});
  CHECK(same == std::vector<double>{2, 2, 2});
}

TEST_CASE("mean-std formatting matches the reported style") {
  CHECK(format_mean_std({83.59, 83.91, 83.91, 83.59, 83.75}) == "83.75 ± 0.16");
  CHECK(format_mean_std({5.0}) == "5.00 ± 0.00");
}

TEST_CASE("sweep grids expand to the advertised cartesian size") {
  // Three client rates by five server rates, the published search shape.
  const auto grid = parse_toml_ordered(
      "client_lr = [0.0316227766, 0.1, 0.316227766]\n"
      "server_lr = [0.0316227766, 0.1, 0.316227766, 1.0, 1.7782794]\n");
  size_t total = 1;
  for (const auto& [k, v] : grid) total *= v.array.size();
  CHECK(total == 15);
}

TEST_CASE("overrides reuse config keys and re-validate") {
  ExperimentConfig base = config_from_table(parse_toml("rounds = 5\n"));
  TomlValue lr;
  lr.type = TomlValue::Type::floating;
  lr.floating = 0.2;
  const ExperimentConfig out = apply_overrides(base, {{"client_lr", lr}});
  CHECK(out.client_opt.lr == doctest::Approx(0.2));

  TomlValue bad;
  bad.type = TomlValue::Type::integer;
  bad.integer = 0;
  CHECK_THROWS_AS(apply_overrides(base, {{"rounds", bad}}), ConfigError);
}
