#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "blockdrop/config.hpp"
#include "blockdrop/metrics.hpp"

using namespace blockdrop;
namespace fs = std::filesystem;

TEST_CASE("desk defaults validate and expose the documented shape") {
  RunConfig c = default_desk_config();
  c.validate();
  CHECK(c.backbone.block_count() == 15);
  CHECK(c.policy.classes == 15);
  CHECK(c.policy.family == Family::Mlp);
  CHECK(c.schedule.alpha == 0.8f);
}

TEST_CASE("json keys override defaults, unknown keys are rejected") {
  RunConfig c = parse_config(R"({
    "dataset": {"train_n": 64, "test_n": 32},
    "reward": {"gamma": 10.0},
    "schedule": {"curriculum_epochs": 7},
    "seed": 42
  })");
  CHECK(c.dataset.train_n == 64);
  CHECK(c.reward.gamma == 10.0);
  CHECK(c.schedule.curriculum_epochs == 7);
  CHECK(c.seed == 42);
  // untouched keys keep their defaults
  CHECK(c.schedule.finetune_epochs == default_desk_config().schedule.finetune_epochs);

  CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), ValueError);
  CHECK_THROWS_AS(parse_config(R"({"reward": {"gama": 1}})"), ValueError);
  CHECK_THROWS_AS(parse_config("not json"), ValueError);
}

TEST_CASE("policy width follows the backbone unless pinned") {
  RunConfig c = parse_config(R"({"backbone": {"blocks_per_segment": 4}})");
  CHECK(c.backbone.block_count() == 12);
  CHECK(c.policy.classes == 12);
  RunConfig pinned = parse_config(
      R"({"backbone": {"blocks_per_segment": 4}, "policy": {"classes": 9}})");
  CHECK(pinned.policy.classes == 9);
  CHECK_THROWS_AS(pinned.validate(), ValueError);
}

TEST_CASE("config validation catches bad values before running") {
  RunConfig c = default_desk_config();
  c.dataset.kind = "imagenet";
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = default_desk_config();
  c.dataset.train_n = 20;  // not a multiple of 8
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = default_desk_config();
  c.dataset.kind = "cifar10";
  CHECK_THROWS_AS(c.validate(), ValueError);  // dir missing
  c = default_desk_config();
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = default_desk_config();
  c.reward.gamma = -1.0;
  CHECK_THROWS_AS(c.validate(), ValueError);
}

TEST_CASE("run ids are stable and key on content") {
  RunConfig a = default_desk_config();
  RunConfig b = default_desk_config();
  CHECK(a.run_id() == b.run_id());
  b.seed = a.seed + 1;
  CHECK(a.run_id() != b.run_id());
  CHECK(a.run_id().size() == 16);
}

TEST_CASE("effective config round-trips through disk") {
  std::string dir = (fs::temp_directory_path() / "bd_config_test").string();
  fs::create_directories(dir);
  RunConfig a = default_desk_config();
  a.seed = 99;
  a.reward.gamma = 2.0;
  save_effective_config(a, dir + "/config.json");
  RunConfig b = load_config(dir + "/config.json");
  CHECK(a.run_id() == b.run_id());
  CHECK(b.seed == 99);
  CHECK(b.reward.gamma == 2.0);
  CHECK_THROWS_AS(load_config(dir + "/missing.json"), IoError);
}

TEST_CASE("metrics rows print fixed decimals under the documented header") {
  CHECK(std::string(kMetricsHeader) ==
        "run_id,phase,epoch,strategy,gamma,accuracy,blocks_mean,blocks_std,"
        "flops_mean,flops_std,seed");
  MetricsRow r;
  r.run_id = "abc";
  r.phase = "eval";
  r.epoch = 3;
  r.strategy = "policy";
  r.gamma = 5.0;
  r.accuracy = 0.9875;
  r.blocks_mean = 7.5;
  r.blocks_std = 1.25;
  r.flops_mean = 9179392.0;
  r.flops_std = 0.0;
  r.seed = 11;
  CHECK(metrics_line(r) ==
        "abc,eval,3,policy,5.000000,0.987500,7.500000,1.250000,"
        "9179392.000000,0.000000,11");
  CHECK(format_fixed(1e-7) == "0.000000");
  CHECK(format_fixed(12345678.0) == "12345678.000000");  // never scientific

  MetricsRow empty;
  CHECK_THROWS_AS(metrics_line(empty), ValueError);
}

TEST_CASE("metrics csv round-trips losslessly") {
  std::string dir = (fs::temp_directory_path() / "bd_metrics_test").string();
  fs::create_directories(dir);
  std::string path = dir + "/m.csv";
  MetricsRow r;
  r.run_id = "deadbeef";
  r.phase = "pretrain";
  r.epoch = 1;
  r.strategy = "full";
  r.gamma = 5.0;
  r.accuracy = 0.5;
  r.blocks_mean = 15.0;
  r.seed = 7;
  write_metrics_csv(path, {r, r});
  auto rows = read_metrics_csv(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].run_id == "deadbeef");
  CHECK(rows[0].accuracy == 0.5);
  CHECK(rows[0].blocks_mean == 15.0);
  CHECK(rows[1].seed == 7);

  append_metrics_csv(path, {r});
  CHECK(read_metrics_csv(path).size() == 3);
}
