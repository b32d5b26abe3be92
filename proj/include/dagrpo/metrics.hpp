// SPDX-License-Identifier: Apache-2.0
//
// Per-step training-dynamics records and cross-run comparison.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dagrpo/advantage.hpp"
#include "dagrpo/gradient.hpp"
#include "dagrpo/policy.hpp"

namespace dagrpo {

struct StepMetrics {
  long step = 0;
  double reward_mean = 0.0;
  double response_length_mean = 0.0;
  double entropy_mean = 0.0;
  double grad_norm = 0.0;
  double masked_pos_fraction = 0.0;
  double masked_neg_fraction = 0.0;
  double zero_advantage_group_fraction = 0.0;
  double interference_index_mean = 0.0;
  double cancellation_mass_mean = 0.0;
  double anchor_reward_mean = 0.0;
  /// Groups holding a corrupted anchor alongside a clean (fully correct) on-policy positive.
  long corrupted_anchor_groups = 0;
  /// Of those, groups where the corrupted anchor kept λ⁺ = 1.
  long corrupted_anchor_kept = 0;
  long judge_fallbacks = 0;
  std::optional<double> wall_time;

  bool operator==(const StepMetrics&) const = default;
};

/// Field names, in serialization order; wall_time is optional and listed last.
const std::vector<std::string>& step_metric_fields();
/// The numeric series compare_runs aligns.
const std::vector<std::string>& compared_metric_fields();

nlohmann::json to_json(const StepMetrics& m);
StepMetrics step_metrics_from_json(const nlohmann::json& j);
double metric_value(const StepMetrics& m, const std::string& field);

/// Means over the step's groups. Rewards, lengths and entropy use on-policy rollouts;
/// entropy is averaged over every visited context under `sampling_params`. Masked
/// fractions read each group's masks (absent masks mean all retained). `reports`
/// holds one conflict report per group, or is empty.
StepMetrics summarize_step(long step, std::span<const Group> groups, const PolicyParams& sampling_params,
                           const GradientVector& gradient, std::span<const ConflictReport> reports);

std::vector<StepMetrics> read_metrics(const std::filesystem::path& path);

struct RunSeries {
  std::string name;
  std::filesystem::path source;
  std::vector<StepMetrics> records;
};

struct ComparisonTable {
  std::vector<std::string> runs;
  std::vector<long> steps;
  /// values[run][field][row]
  std::vector<std::vector<std::vector<double>>> values;
  /// tail_means[run][field] over the last `tail` aligned steps
  std::vector<std::vector<double>> tail_means;
  int tail = 50;
};

/// Aligns runs on the steps they share. Each path is a metrics.jsonl file or a run
/// directory containing one.
ComparisonTable compare_runs(std::span<const std::filesystem::path> paths, int tail = 50);
void write_comparison_csv(const ComparisonTable& table, std::ostream& out);

}  // namespace dagrpo
