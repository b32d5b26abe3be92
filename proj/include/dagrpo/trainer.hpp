// SPDX-License-Identifier: Apache-2.0
//
// Training loop: sample, verify, judge, mix, mask, accumulate, update. Rollout
// collection and per-group work run as OpenMP kernels with serial reference versions.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dagrpo/config.hpp"
#include "dagrpo/gradient.hpp"
#include "dagrpo/metrics.hpp"
#include "dagrpo/optimizer.hpp"
#include "dagrpo/policy.hpp"

namespace dagrpo {

enum class Execution { serial, parallel };

std::string to_string(Execution e);

/// Raised when a step produces a non-finite gradient or similar unrecoverable state.
class TrainingAborted : public Error {
 public:
  using Error::Error;
};

struct TrainState {
  PolicyParams params;
  PolicyParams reference;
  Optimizer optimizer;
  /// Number of completed steps; the next step is step + 1.
  long step = 0;
  std::uint64_t seed = 0;
};

TrainState initial_state(const TrainConfig& cfg);

/// Samples the step's groups under `params`: on-policy rollouts, anchors when the
/// algorithm uses them, verifier rewards. Prompt `i` of step `s` draws only from streams
/// derived from (seed, s, i), so both execution modes return identical groups.
std::vector<Group> collect_groups(const PolicyParams& params, const TrainConfig& cfg, long step,
                                  Execution exec);

/// Judge scores (mask modes only), advantages, partitions and masks for scored groups.
/// External judging runs group by group with the judge's own in-flight bound.
std::vector<Group> prepare_groups(std::vector<Group> groups, const TrainConfig& cfg, Execution exec,
                                  ExternalJudge* external = nullptr, int* fallbacks = nullptr);

/// Per-group ascent gradients for groups [begin, end), summed in index order and divided
/// by the number of groups.
GradientVector batch_gradient(const std::vector<Group>& groups, std::size_t begin, std::size_t end,
                              const PolicyParams& params, const PolicyParams& params_old,
                              const PolicyParams& reference, const TrainConfig& cfg, Execution exec);

/// One conflict report per group, on the retained subgroup in mask modes.
std::vector<ConflictReport> conflict_reports(const std::vector<Group>& groups, const PolicyParams& params,
                                             const TrainConfig& cfg, Execution exec);

struct StepResult {
  StepMetrics metrics;
  std::vector<Group> groups;
  std::vector<ConflictReport> reports;
};

/// Advances `state` by one step. Throws TrainingAborted on a non-finite gradient.
StepResult train_step(TrainState& state, const TrainConfig& cfg, Execution exec = Execution::parallel,
                      ExternalJudge* external = nullptr);

struct LevelReport {
  int chain_length = 0;
  int prompts = 0;
  double pass_at_1 = 0.0;
  double avg_at_k = 0.0;
  int k = 0;
};

struct EvalReport {
  long step = 0;
  std::vector<LevelReport> levels;

  [[nodiscard]] const LevelReport& level(int chain_length) const;
};

/// Held-out prompts from eval_cfg.seed; pass@1 scores the first of the k samples.
EvalReport evaluate(const PolicyParams& params, const EvalConfig& eval_cfg, int modulus,
                    Execution exec = Execution::parallel, int threads = 0);

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Checkpoint directory: policy.txt plus state.json (optimizer moments, step, seed).
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir, const TrainConfig& cfg);

struct ExperimentResult {
  TrainState state;
  EvalReport final_eval;
  std::vector<StepMetrics> metrics;
};

struct ExperimentOptions {
  std::filesystem::path out_dir;
  /// Checkpoint directory to resume from.
  std::optional<std::filesystem::path> resume;
  Execution exec = Execution::parallel;
  /// Progress line every n steps on stderr; 0 disables.
  int progress_every = 0;
};

/// Writes config.json, metrics.jsonl, eval.jsonl, rollouts.jsonl, conflicts.jsonl,
/// timing.jsonl, checkpoints/ and summary.json under out_dir. On abort, abort.txt holds
/// the diagnostic and the exception is rethrown.
ExperimentResult run_experiment(const TrainConfig& cfg, const ExperimentOptions& opts);

}  // namespace dagrpo
