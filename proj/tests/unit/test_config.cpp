// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "dagrpo/config.hpp"

using namespace dagrpo;
namespace fs = std::filesystem;

TEST_CASE("defaults validate and round-trip") {
  TrainConfig cfg;
  cfg.validate();
  CHECK(cfg.group_size == 8);
  CHECK(cfg.delta == 3.0);
  CHECK(cfg.steps == 500);
  CHECK(cfg.task.prompts_per_batch == 128);
  CHECK(cfg.updates_per_step == 64);
  CHECK(cfg.eval.sampling.temperature == 0.6);
  const auto doc = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(doc)) == doc);
  for (const auto& k : config_keys()) CHECK(doc.contains(k.name));
  CHECK(doc.size() == config_keys().size());
}

TEST_CASE("overrides") {
  TrainConfig cfg;
  apply_override(cfg, "algorithm=dagrpo");
  apply_override(cfg, "chain_lengths=[1,2]");
  apply_override(cfg, "learning_rate=0.1");
  apply_override(cfg, "context_view=full_prompt");
  CHECK(cfg.algorithm == Algorithm::dagrpo);
  CHECK(cfg.task.chain_lengths == std::vector<int>{1, 2});
  CHECK(cfg.optimizer.learning_rate == 0.1);
  CHECK(cfg.policy.view == ContextView::full_prompt);
  CHECK(cfg.anchors_per_group() == 1);
  CHECK(cfg.on_policy_per_group() == 7);
  apply_override(cfg, "algorithm=grpo");
  CHECK(cfg.anchors_per_group() == 0);

  try {
    apply_override(cfg, "foo=1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "foo");
  }
  CHECK_THROWS_AS(apply_override(cfg, "missing_equals"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "algorithm=ppo"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "group_size=two"), ConfigError);
}

TEST_CASE("invariants") {
  auto expect_key = [](TrainConfig cfg, const std::string& key) {
    try {
      cfg.validate();
      FAIL("expected ConfigError for " << key);
    } catch (const ConfigError& e) {
      CHECK(e.key() == key);
    }
  };
  TrainConfig c;
  c.group_size = 1;
  expect_key(c, "group_size");
  c = {};
  c.algorithm = Algorithm::dagrpo;
  c.n_off = 8;
  expect_key(c, "n_off");
  c = {};
  c.delta = -1;
  expect_key(c, "delta");
  c = {};
  c.optimizer.learning_rate = 0.0;
  expect_key(c, "learning_rate");
}

TEST_CASE("algorithm settings") {
  TrainConfig c;
  c.algorithm = Algorithm::dr_grpo;
  CHECK_FALSE(c.effective_objective().length_normalize);
  CHECK(c.advantage_mode().kind == AdvantageMode::Kind::dr_grpo);
  CHECK_FALSE(c.uses_masks());
  c.algorithm = Algorithm::dagrpo_no_offpolicy;
  CHECK(c.uses_masks());
  CHECK(c.anchors_per_group() == 0);
  c.algorithm = Algorithm::dagrpo;
  CHECK(c.advantage_mode().kind == AdvantageMode::Kind::mixed);
  c.eval.levels.clear();
  c.task.chain_lengths = {2, 3};
  CHECK(c.effective_eval().levels == std::vector<int>{2, 3});
}

TEST_CASE("shipped schema and configs") {
  const fs::path root = DAGRPO_SOURCE_DIR;
  std::ifstream in(root / "docs" / "config.schema.json");
  REQUIRE(in);
  CHECK(nlohmann::json::parse(in) == config_schema());
  for (const auto& k : config_keys()) CHECK(config_schema()["properties"].contains(k.name));
  for (const char* name : {"easy.json", "hard.json", "mixed.json"}) {
    INFO(name);
    const auto cfg = load_config_file(root / "configs" / name);
    CHECK_NOTHROW(cfg.validate());
  }
  CHECK_THROWS_AS(load_config_file(root / "configs" / "missing.json"), Error);
}
