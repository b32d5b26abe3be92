// SPDX-License-Identifier: Apache-2.0
//
// Training configuration: a flat key/value document with command-line overrides.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dagrpo/advantage.hpp"
#include "dagrpo/gradient.hpp"
#include "dagrpo/judge.hpp"
#include "dagrpo/optimizer.hpp"
#include "dagrpo/policy.hpp"
#include "dagrpo/tasks.hpp"

namespace dagrpo {

enum class Algorithm { grpo, dr_grpo, dagrpo, dagrpo_no_offpolicy };

std::string to_string(Algorithm algorithm);
Algorithm algorithm_from_string(const std::string& name);

/// Forces every partitioned rollout to λ = 1 (used to check DaGRPO reduces to GRPO).
enum class MaskOverride { none, all_ones };

std::string to_string(MaskOverride o);
MaskOverride mask_override_from_string(const std::string& name);

struct EvalConfig {
  /// Chain lengths to report; empty means the training task's lengths.
  std::vector<int> levels;
  int prompts_per_level = 256;
  int k = 8;
  SamplingConfig sampling{0.6, 1.0, 32};
  std::uint64_t seed = 0;
};

/// Raised for unknown keys and invalid values; `key()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what) : Error(what), key_(std::move(key)) {}
  [[nodiscard]] const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct TrainConfig {
  Algorithm algorithm = Algorithm::grpo;
  int group_size = 8;
  int n_off = 1;
  double delta = 3.0;
  long steps = 500;
  /// Prompts per optimizer update; a rollout batch of task.prompts_per_batch prompts
  /// yields ceil(prompts / updates_per_step) updates.
  int updates_per_step = 64;
  int inner_epochs = 1;
  OptimizerConfig optimizer;
  SamplingConfig sampling{1.0, 1.0, 32};
  ObjectiveConfig objective;
  double epsilon_std = 1e-6;
  JudgeOptions judge;
  ExternalJudgeConfig external_judge;
  TaskConfig task;
  PolicyShape policy;
  MaskOverride mask_override = MaskOverride::none;
  std::uint64_t seed = 0;
  int threads = 0;

  EvalConfig eval;
  int eval_every = 50;
  int checkpoint_every = 100;
  /// Rollout dumps at the first step and every `dump_every` steps (0: first step only).
  int dump_every = 100;
  bool conflict_metrics = true;
  bool log_wall_time = false;

  /// Throws ConfigError naming the first invalid key.
  void validate() const;

  [[nodiscard]] bool uses_masks() const;
  [[nodiscard]] bool uses_judge() const { return uses_masks(); }
  [[nodiscard]] int anchors_per_group() const;
  [[nodiscard]] int on_policy_per_group() const { return group_size - anchors_per_group(); }
  [[nodiscard]] AdvantageMode advantage_mode() const;
  /// Objective with the algorithm's forced settings (Dr.GRPO drops length normalization).
  [[nodiscard]] ObjectiveConfig effective_objective() const;
  [[nodiscard]] EvalConfig effective_eval() const;
};

struct ConfigKey {
  std::string name;
  std::string type;
  std::string help;
  std::function<void(TrainConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const TrainConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

void apply_config_json(TrainConfig& cfg, const nlohmann::json& doc);
/// "KEY=VALUE"; VALUE is read as JSON when it parses, otherwise as a string.
void apply_override(TrainConfig& cfg, const std::string& assignment);

TrainConfig load_config_file(const std::filesystem::path& path);
nlohmann::json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& doc);

/// JSON schema describing every key.
nlohmann::json config_schema();

}  // namespace dagrpo
