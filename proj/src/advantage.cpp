// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/advantage.hpp"

#include <algorithm>
#include <cmath>

namespace dagrpo {

int MaskSet::lambda(std::size_t index) const {
  if (auto it = lambda_plus.find(index); it != lambda_plus.end()) return it->second;
  if (auto it = lambda_minus.find(index); it != lambda_minus.end()) return it->second;
  return 0;
}

std::size_t Group::on_policy_count() const {
  return static_cast<std::size_t>(std::count_if(rollouts.begin(), rollouts.end(), [](const Rollout& r) {
    return r.origin == Origin::on_policy;
  }));
}

std::string to_string(AdvantageMode::Kind kind) {
  switch (kind) {
    case AdvantageMode::Kind::grpo_standard: return "grpo_standard";
    case AdvantageMode::Kind::dr_grpo: return "dr_grpo";
    case AdvantageMode::Kind::mixed: return "mixed";
  }
  return "?";
}

Group compute_advantages(Group group, const AdvantageMode& mode) {
  if (group.size() < 2) throw Error("compute_advantages: group needs at least 2 rollouts");
  if (!(mode.epsilon_std > 0.0)) throw Error("compute_advantages: epsilon_std must be > 0");
  const auto n = static_cast<double>(group.size());

  double sum = 0.0;
  for (const auto& r : group.rollouts) {
    if (!r.reward) throw Error("compute_advantages: rollout without reward");
    sum += *r.reward;
  }
  const double mean = sum / n;

  if (mode.kind == AdvantageMode::Kind::dr_grpo) {
    for (auto& r : group.rollouts) r.advantage = *r.reward - mean;
    return group;
  }

  double ss = 0.0;
  for (const auto& r : group.rollouts) {
    const double d = *r.reward - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / n);
  for (auto& r : group.rollouts) {
    r.advantage = sd < mode.epsilon_std ? 0.0 : (*r.reward - mean) / sd;
  }
  return group;
}

Partition partition(const Group& group) {
  Partition p;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& a = group.rollouts[i].advantage;
    if (!a) throw Error("partition: rollout without advantage");
    if (*a > 0.0) p.positives.push_back(i);
    else if (*a < 0.0) p.negatives.push_back(i);
    else p.zeros.push_back(i);
  }
  return p;
}

MaskSet compute_masks(const Group& group, const Partition& part, double delta) {
  if (!(delta >= 0.0)) throw Error("compute_masks: delta must be >= 0");
  auto score = [&](std::size_t i) {
    const auto& s = group.rollouts.at(i).judge_score;
    if (!s) throw Error("compute_masks: rollout " + std::to_string(i) + " has no judge score");
    return *s;
  };

  MaskSet m;
  m.delta = delta;
  for (std::size_t k : part.negatives) {
    const double s = score(k);
    m.s_max_neg = m.s_max_neg ? std::max(*m.s_max_neg, s) : s;
  }
  for (std::size_t j : part.positives) {
    const double s = score(j);
    m.s_min_pos = m.s_min_pos ? std::min(*m.s_min_pos, s) : s;
  }
  for (std::size_t j : part.positives) {
    m.lambda_plus[j] = !m.s_max_neg || score(j) - *m.s_max_neg >= delta ? 1 : 0;
  }
  for (std::size_t k : part.negatives) {
    m.lambda_minus[k] = m.s_min_pos && *m.s_min_pos - score(k) >= delta ? 1 : 0;
  }
  return m;
}

MaskSet all_ones_masks(const Partition& part, double delta) {
  MaskSet m;
  m.delta = delta;
  for (std::size_t j : part.positives) m.lambda_plus[j] = 1;
  for (std::size_t k : part.negatives) m.lambda_minus[k] = 1;
  return m;
}

Group mix_groups(Group on, const std::vector<Rollout>& anchors) {
  const auto id = on.prompt.key();
  for (const auto& a : anchors) {
    if (a.prompt_id != id) {
      throw Error("mix_groups: anchor for prompt '" + a.prompt_id + "' mixed into group '" + id + "'");
    }
    on.rollouts.push_back(a);
  }
  for (auto& r : on.rollouts) r.advantage.reset();
  on.masks.reset();
  return on;
}

}  // namespace dagrpo
