// SPDX-License-Identifier: Apache-2.0
//
// Tabular k-gram softmax policy with exact log-probabilities and sparse gradients.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dagrpo/context.hpp"
#include "dagrpo/core.hpp"
#include "dagrpo/gradient_vector.hpp"
#include "dagrpo/rng.hpp"

namespace dagrpo {

/// How a (prompt, prefix) pair is projected into a table row.
///
/// chain_state: the prompt key names the pending computation when the next token should
/// be a value ("add5@3": apply add 5 to the last value, or to the start value before any
/// value is written), "done" once every operation has a value, and "fmt" when the last
/// token is not a separator. The history covers the virtual stream [start, SEP, prefix...]
/// with every value token replaced by kValueClass. Rows are shared across prompts and
/// chain positions, so the table generalizes to unseen prompts.
///
/// full_prompt: the key is Prompt::key() and the history holds the last k generated
/// tokens verbatim. The table is then a per-prompt memorizer.
enum class ContextView { chain_state, full_prompt };

/// History symbol standing for any value token under ContextView::chain_state.
inline constexpr Token kValueClass = -1;

std::string to_string(ContextView view);
ContextView context_view_from_string(const std::string& name);

struct PolicyShape {
  int history_k = 2;
  ContextView view = ContextView::chain_state;

  bool operator==(const PolicyShape&) const = default;
};

class PolicyParams {
 public:
  using Table = std::unordered_map<Context, std::vector<double>, ContextHash>;

  PolicyParams() = default;
  PolicyParams(Vocabulary vocab, PolicyShape shape) : vocab_(vocab), shape_(shape) {}

  [[nodiscard]] const Vocabulary& vocab() const { return vocab_; }
  [[nodiscard]] const PolicyShape& shape() const { return shape_; }
  [[nodiscard]] int vocab_size() const { return vocab_.size(); }
  [[nodiscard]] std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  /// Logit row for `ctx`, or nullptr when unseen (all-zero logits).
  [[nodiscard]] const std::vector<double>* find(const Context& ctx) const;
  /// Mutable row, zero-initialized on first access.
  std::vector<double>& row(const Context& ctx);
  [[nodiscard]] const Table& table() const { return logits_; }
  [[nodiscard]] std::size_t size() const { return logits_.size(); }

  /// Adds `scale * grad` to the logits.
  void apply(const GradientVector& grad, double scale);

  bool operator==(const PolicyParams& other) const;

 private:
  Vocabulary vocab_;
  PolicyShape shape_;
  Table logits_;
  std::uint64_t version_ = 0;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_len = 32;

  void validate() const;
};

/// Context in which the token at position `prefix.size()` of the response is emitted.
Context context_at(const PolicyShape& shape, const Vocabulary& vocab, const Prompt& prompt,
                   std::span<const Token> prefix);
Context context_at(const PolicyParams& params, const Prompt& prompt,
                   std::span<const Token> prefix);

/// Softmax of the row for `ctx` at temperature 1 with no truncation.
std::vector<double> softmax_row(const PolicyParams& params, const Context& ctx);

/// Sampling distribution: temperature-scaled softmax, then nucleus truncation. Ties at
/// the nucleus boundary are broken by ascending token id.
std::vector<double> token_distribution(const PolicyParams& params, const Context& ctx,
                                       const SamplingConfig& cfg);
std::vector<double> apply_sampling(std::span<const double> logits, const SamplingConfig& cfg);

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

SequenceLogProb logprob_sequence(const PolicyParams& params, const Prompt& prompt,
                                 std::span<const Token> tokens);

/// Σ_t ∇θ log π(o_t | h_t): each visited row receives onehot(o_t) − π(·|h_t).
GradientVector grad_logprob_sequence(const PolicyParams& params, const Prompt& prompt,
                                     std::span<const Token> tokens);

/// Adds `scale * (onehot(token) - probs)` to `row`.
void accumulate_logprob_grad(std::span<double> row, std::span<const double> probs, Token token,
                             double scale);

/// Samples until EOS or `cfg.max_len` tokens; behavior log-probs are taken under the
/// sampling distribution.
Rollout sample_rollout(const PolicyParams& params, const Prompt& prompt, const SamplingConfig& cfg,
                       Rng& rng);

/// Categorical draw by inverse CDF.
Token sample_categorical(std::span<const double> probs, Rng& rng);

double entropy(std::span<const double> probs);

/// Mean Shannon entropy (nats) of the unmodified distributions over `contexts`.
double policy_entropy(const PolicyParams& params, std::span<const Context> contexts);

/// Contexts visited while emitting `tokens`, in order.
std::vector<Context> visited_contexts(const PolicyParams& params, const Prompt& prompt,
                                      std::span<const Token> tokens);

/// Text checkpoint. Header line then one line per context:
///   <encoded context>\t<logit_0> ... <logit_{V-1}>
/// Logits are written in shortest round-trip form, so load(save(p)) == p exactly.
void save_params(const PolicyParams& params, std::ostream& out);
PolicyParams load_params(std::istream& in);

}  // namespace dagrpo
