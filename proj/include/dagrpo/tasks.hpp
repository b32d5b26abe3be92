// SPDX-License-Identifier: Apache-2.0
//
// Chain-arithmetic tasks: prompt generation, reference traces, the binary verifier,
// step-level correctness and the noisy demonstrator.

#pragma once

#include <span>
#include <vector>

#include "dagrpo/core.hpp"
#include "dagrpo/rng.hpp"

namespace dagrpo {

/// Which value token a corrupted demonstration replaces.
enum class CorruptionTarget {
  any,    ///< uniformly chosen value token
  final,  ///< always the final answer, so every corruption breaks the answer
};

std::string to_string(CorruptionTarget target);
CorruptionTarget corruption_target_from_string(const std::string& name);

struct TaskConfig {
  int modulus = 16;
  /// Chain lengths drawn uniformly from this list.
  std::vector<int> chain_lengths{1};
  int prompts_per_batch = 128;
  double noise_rate = 0.0;
  CorruptionTarget corruption = CorruptionTarget::any;

  void validate() const;
};

Prompt generate_prompt(const TaskConfig& cfg, Rng& rng);
Prompt generate_prompt(const TaskConfig& cfg, int chain_length, Rng& rng);

/// [v_1, SEP, v_2, SEP, ..., v_L, SEP, EOS].
std::vector<Token> reference_solution(const Prompt& prompt);

/// Structure of a response: leading (value, SEP) pairs and whether the whole sequence is
/// exactly difficulty() such pairs followed by EOS.
struct ResponseShape {
  int steps = 0;
  bool well_formed = false;
};

ResponseShape parse_response(const Prompt& prompt, std::span<const Token> tokens);

/// 1 iff well-formed and the last value equals the true final value; intermediate values
/// are not checked.
int verify(const Prompt& prompt, std::span<const Token> tokens);

/// Fraction of the true intermediate values present at their step position (value at 2s,
/// SEP at 2s+1).
double step_fraction(const Prompt& prompt, std::span<const Token> tokens);

/// Off-policy demonstration; with probability noise_rate one value token of the reference
/// is replaced by a different value.
Rollout demonstrate(const Prompt& prompt, const TaskConfig& cfg, Rng& rng);

}  // namespace dagrpo
