// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of the analytic gradients. Objectives are re-evaluated from
// log-probabilities alone, independently of the gradient code.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dagrpo/advantage.hpp"
#include "dagrpo/gradient.hpp"
#include "dagrpo/policy.hpp"

namespace dagrpo {

enum class CheckedObjective {
  log_prob,         ///< Σ_t log π(o_t | h_t) of one rollout
  grpo,             ///< grpo_gradient
  dagrpo,           ///< dagrpo_gradient
  clipped,          ///< clipped_surrogate
};

std::string to_string(CheckedObjective o);

/// One random instance: a group with advantages, masks and the three parameter sets.
struct GradCheckInstance {
  Group group;
  MaskSet masks;
  PolicyParams params;
  PolicyParams params_old;
  PolicyParams reference;
  ObjectiveConfig objective;
};

/// Scalar objective whose gradient at `params` equals the analytic one. Unit ratios are
/// represented by log π (same value of the gradient, no stop-gradient needed).
double objective_value(CheckedObjective kind, const GradCheckInstance& inst, const PolicyParams& params);

GradientVector analytic_gradient(CheckedObjective kind, const GradCheckInstance& inst);

struct GradCheckOutcome {
  /// ‖analytic − numeric‖₂ / (‖analytic‖₂ + ‖numeric‖₂); 0 when both vanish.
  double relative_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences with step `h` over every coordinate of every context visited by
/// the group's rollouts.
GradCheckOutcome finite_difference_check(CheckedObjective kind, const GradCheckInstance& inst,
                                         double h = 1e-5);

struct SuiteSpec {
  std::string name;
  CheckedObjective kind = CheckedObjective::grpo;
  RatioMode ratio_mode = RatioMode::unit_approx;
  bool length_normalize = true;
  double kl_beta = 0.0;
  bool with_anchor = false;
};

/// Suites covering the policy, GRPO, Dr.GRPO, DaGRPO and clipped objectives.
std::vector<SuiteSpec> default_suites();

/// Random instance; clipped instances are resampled until every ratio is at least
/// `kink_margin` away from 1 ± ε.
GradCheckInstance random_instance(const SuiteSpec& spec, Rng& rng, double kink_margin = 1e-3);

struct SuiteResult {
  std::string name;
  int instances = 0;
  double max_relative_error = 0.0;
  double max_abs_error = 0.0;
};

SuiteResult run_suite(const SuiteSpec& spec, int instances, std::uint64_t seed);

}  // namespace dagrpo
