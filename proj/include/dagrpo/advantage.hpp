// SPDX-License-Identifier: Apache-2.0
//
// Group-relative advantages, sign partitions, distinctiveness masks and mixed groups.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dagrpo/core.hpp"

namespace dagrpo {

/// Masks λ⁺ / λ⁻ with the extrema they were derived from.
struct MaskSet {
  std::map<std::size_t, int> lambda_plus;
  std::map<std::size_t, int> lambda_minus;
  std::optional<double> s_max_neg;
  std::optional<double> s_min_pos;
  double delta = 3.0;

  /// λ for rollout `index`; 0 for rollouts outside both partitions.
  [[nodiscard]] int lambda(std::size_t index) const;
};

/// All rollouts for one prompt: on-policy members first, then off-policy anchors.
struct Group {
  Prompt prompt;
  std::vector<Rollout> rollouts;
  std::optional<MaskSet> masks;

  [[nodiscard]] std::size_t size() const { return rollouts.size(); }
  [[nodiscard]] std::size_t on_policy_count() const;
};

struct AdvantageMode {
  enum class Kind { grpo_standard, dr_grpo, mixed };
  Kind kind = Kind::grpo_standard;
  double epsilon_std = 1e-6;
};

std::string to_string(AdvantageMode::Kind kind);

struct Partition {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::vector<std::size_t> zeros;
};

/// grpo_standard / mixed: (R - mean) / std with population std; all zero when
/// std < epsilon. dr_grpo: R - mean.
Group compute_advantages(Group group, const AdvantageMode& mode);

Partition partition(const Group& group);

/// λ⁺(j) = [S_j - S_max- >= δ], λ⁻(k) = [S_min+ - S_k >= δ]. With no negatives every
/// λ⁺ is 1; with no positives every λ⁻ is 0.
MaskSet compute_masks(const Group& group, const Partition& part, double delta);

/// Mask with every partitioned rollout retained.
MaskSet all_ones_masks(const Partition& part, double delta);

/// Appends anchors to the on-policy group; advantages and masks are cleared.
Group mix_groups(Group on, const std::vector<Rollout>& anchors);

}  // namespace dagrpo
