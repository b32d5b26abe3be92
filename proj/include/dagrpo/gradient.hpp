// SPDX-License-Identifier: Apache-2.0
//
// Objective gradients (GRPO, Dr.GRPO, rectified / DaGRPO), the clipped surrogate with a
// KL penalty, and the gradient-conflict analyzer.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dagrpo/advantage.hpp"
#include "dagrpo/gradient_vector.hpp"
#include "dagrpo/policy.hpp"

namespace dagrpo {

enum class RatioMode { exact, unit_approx };

std::string to_string(RatioMode mode);
RatioMode ratio_mode_from_string(const std::string& name);

struct ObjectiveConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 0.0;
  bool length_normalize = true;
  RatioMode ratio_mode = RatioMode::unit_approx;

  void validate() const;
};

/// Per-rollout scalar weight A_i / |o_i| (or A_i without length normalization).
double sequence_coefficient(const Rollout& r, const ObjectiveConfig& cfg);

/// (1/G) Σ_i (A_i/|o_i|) Σ_t r_{i,t} ∇ log π(o_{i,t}). In exact mode r uses the stored
/// behavior log-probs; off-policy members always use r = 1.
GradientVector grpo_gradient(const Group& group, const PolicyParams& params,
                             const ObjectiveConfig& cfg);

/// Same sum restricted to `members`, still scaled by 1/G of the whole group.
GradientVector partial_gradient(const Group& group, std::span<const std::size_t> members,
                                const PolicyParams& params, const ObjectiveConfig& cfg);

/// Rectified gradient: each partitioned term multiplied by its λ. The 1/|G_mix| prefactor
/// is kept regardless of how many members survive.
GradientVector dagrpo_gradient(const Group& group, const MaskSet& masks, const PolicyParams& params,
                               const ObjectiveConfig& cfg);

struct SurrogateResult {
  double objective = 0.0;
  GradientVector gradient;
};

/// Clipped surrogate with KL penalty, ratios against `params_old`:
///   (1/G) Σ_i (1/|o_i|) Σ_t [ λ_i min(r A_i, clip(r, 1±ε) A_i) − β KL(π_θ‖π_ref)(h_{i,t}) ]
/// Off-policy members use a unit ratio (π_θ / stop_grad π_θ). `masks` may be null (λ ≡ 1).
SurrogateResult clipped_surrogate(const Group& group, const PolicyParams& params_new,
                                  const PolicyParams& params_old, const PolicyParams& params_ref,
                                  const ObjectiveConfig& cfg, const MaskSet* masks = nullptr);

/// KL(p‖q) between two categorical distributions.
double categorical_kl(std::span<const double> p, std::span<const double> q);

struct SharedPair {
  Context context;
  Token token = 0;
  double net_coefficient = 0.0;
  int positive_count = 0;
  int negative_count = 0;
};

struct ConflictReport {
  std::vector<SharedPair> shared_pairs;
  /// Fraction of touched coordinates receiving both a strictly positive and a strictly
  /// negative per-rollout contribution.
  double interference_index = 0.0;
  std::vector<std::vector<double>> pairwise_cosine;
  /// (Σ|contributions| − Σ|net|) / Σ|contributions| over all coordinates.
  double cancellation_mass = 0.0;
};

/// Per-rollout gradient vectors (A_i/|o_i|) Σ_t ∇ log π(o_{i,t}).
std::vector<GradientVector> per_rollout_gradients(const Group& group, const PolicyParams& params,
                                                  const ObjectiveConfig& cfg);

ConflictReport conflict_report(const Group& group, const PolicyParams& params,
                               const ObjectiveConfig& cfg);

/// The group with λ = 0 members (and zero-advantage members) removed.
Group retained_subgroup(const Group& group, const MaskSet& masks);

nlohmann::json conflict_report_to_json(const ConflictReport& report, long step);

}  // namespace dagrpo
