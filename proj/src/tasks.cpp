// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/tasks.hpp"

namespace dagrpo {

std::string to_string(CorruptionTarget target) {
  return target == CorruptionTarget::any ? "any" : "final";
}

CorruptionTarget corruption_target_from_string(const std::string& name) {
  if (name == "any") return CorruptionTarget::any;
  if (name == "final") return CorruptionTarget::final;
  throw Error("unknown corruption target: " + name);
}

void TaskConfig::validate() const {
  if (modulus < 2) throw Error("modulus must be >= 2");
  if (chain_lengths.empty()) throw Error("chain_lengths must not be empty");
  for (int l : chain_lengths) {
    if (l < 1) throw Error("chain lengths must be >= 1");
  }
  if (prompts_per_batch < 1) throw Error("prompts_per_step must be >= 1");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw Error("noise_rate must be in [0, 1]");
}

Prompt generate_prompt(const TaskConfig& cfg, int chain_length, Rng& rng) {
  Prompt p;
  p.modulus = cfg.modulus;
  p.start_value = uniform_int(rng, 0, cfg.modulus - 1);
  p.operations.reserve(static_cast<std::size_t>(chain_length));
  for (int i = 0; i < chain_length; ++i) {
    Op op;
    op.code = static_cast<OpCode>(uniform_int(rng, 0, 2));
    op.operand = uniform_int(rng, 0, cfg.modulus - 1);
    p.operations.push_back(op);
  }
  return p;
}

Prompt generate_prompt(const TaskConfig& cfg, Rng& rng) {
  const int idx = uniform_int(rng, 0, static_cast<int>(cfg.chain_lengths.size()) - 1);
  return generate_prompt(cfg, cfg.chain_lengths[static_cast<std::size_t>(idx)], rng);
}

std::vector<Token> reference_solution(const Prompt& prompt) {
  const auto vocab = prompt.vocabulary();
  std::vector<Token> out;
  out.reserve(prompt.operations.size() * 2 + 1);
  for (int v : prompt.chain_values()) {
    out.push_back(static_cast<Token>(v));
    out.push_back(vocab.sep());
  }
  out.push_back(vocab.eos());
  return out;
}

ResponseShape parse_response(const Prompt& prompt, std::span<const Token> tokens) {
  const auto vocab = prompt.vocabulary();
  ResponseShape shape;
  std::size_t i = 0;
  while (i + 1 < tokens.size() && vocab.is_value(tokens[i]) && tokens[i + 1] == vocab.sep()) {
    ++shape.steps;
    i += 2;
  }
  shape.well_formed = shape.steps == prompt.difficulty() && i + 1 == tokens.size() &&
                      tokens[i] == vocab.eos();
  return shape;
}

int verify(const Prompt& prompt, std::span<const Token> tokens) {
  const auto shape = parse_response(prompt, tokens);
  if (!shape.well_formed) return 0;
  const Token last = tokens[tokens.size() - 3];
  return last == prompt.final_value() ? 1 : 0;
}

double step_fraction(const Prompt& prompt, std::span<const Token> tokens) {
  const auto sep = prompt.vocabulary().sep();
  const auto truth = prompt.chain_values();
  int correct = 0;
  for (std::size_t s = 0; s < truth.size(); ++s) {
    const std::size_t at = 2 * s;
    if (at + 1 < tokens.size() && tokens[at] == truth[s] && tokens[at + 1] == sep) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

Rollout demonstrate(const Prompt& prompt, const TaskConfig& cfg, Rng& rng) {
  Rollout r;
  r.prompt_id = prompt.key();
  r.origin = Origin::off_policy;
  r.tokens = reference_solution(prompt);
  if (uniform01(rng) < cfg.noise_rate) {
    const int steps = prompt.difficulty();
    const int step = cfg.corruption == CorruptionTarget::final ? steps - 1
                                                                 : uniform_int(rng, 0, steps - 1);
    auto& tok = r.tokens[static_cast<std::size_t>(2 * step)];
    // Uniform over the modulus - 1 wrong values.
    int wrong = uniform_int(rng, 0, prompt.modulus - 2);
    if (wrong >= tok) ++wrong;
    tok = static_cast<Token>(wrong);
  }
  return r;
}

}  // namespace dagrpo
