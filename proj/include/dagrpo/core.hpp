// SPDX-License-Identifier: Apache-2.0
//
// Shared domain types: tokens, vocabulary, prompts and rollouts.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dagrpo {

using Token = std::int32_t;

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Value tokens occupy [0, modulus); SEP and EOS follow.
struct Vocabulary {
  int modulus = 16;

  [[nodiscard]] int size() const { return modulus + 2; }
  [[nodiscard]] Token sep() const { return modulus; }
  [[nodiscard]] Token eos() const { return modulus + 1; }
  [[nodiscard]] bool is_value(Token t) const { return t >= 0 && t < modulus; }
  [[nodiscard]] bool contains(Token t) const { return t >= 0 && t < size(); }

  bool operator==(const Vocabulary&) const = default;
};

enum class OpCode { add, sub, mul };

std::string to_string(OpCode code);
OpCode op_code_from_string(const std::string& name);

struct Op {
  OpCode code = OpCode::add;
  int operand = 0;

  bool operator==(const Op&) const = default;
};

/// A chain-arithmetic question: apply `operations` in order to `start_value`, mod `modulus`.
struct Prompt {
  int start_value = 0;
  std::vector<Op> operations;
  int modulus = 16;

  [[nodiscard]] int difficulty() const { return static_cast<int>(operations.size()); }
  [[nodiscard]] Vocabulary vocabulary() const { return Vocabulary{modulus}; }

  /// Values after each operation; size() == difficulty().
  [[nodiscard]] std::vector<int> chain_values() const;
  [[nodiscard]] int final_value() const;

  /// Canonical identifier, e.g. "m16:3;add5;mul2".
  [[nodiscard]] std::string key() const;

  bool operator==(const Prompt&) const = default;
};

int apply_op(const Op& op, int value, int modulus);

enum class Origin { on_policy, off_policy };

std::string to_string(Origin origin);
Origin origin_from_string(const std::string& name);

/// One response o_i and everything learned about it along the pipeline.
struct Rollout {
  std::string prompt_id;
  std::vector<Token> tokens;
  Origin origin = Origin::on_policy;
  std::optional<std::vector<double>> behavior_logprobs;
  std::optional<int> reward;
  std::optional<double> judge_score;
  std::optional<double> advantage;

  [[nodiscard]] std::size_t length() const { return tokens.size(); }
  [[nodiscard]] bool is_anchor() const { return origin == Origin::off_policy; }
};

}  // namespace dagrpo
