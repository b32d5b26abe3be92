// SPDX-License-Identifier: Apache-2.0
//
// Fine-grained rollout scoring in [1, 10]: a deterministic oracle judge and a client for
// an external chat-completion judge with a persistent score cache.

#pragma once

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>

#include "dagrpo/advantage.hpp"
#include "dagrpo/core.hpp"

namespace dagrpo {

enum class JudgeSource { oracle, external };
enum class JudgeMode { oracle, external };
enum class JudgeFallback { abort, oracle };

std::string to_string(JudgeMode mode);
JudgeMode judge_mode_from_string(const std::string& name);
std::string to_string(JudgeFallback fallback);
JudgeFallback judge_fallback_from_string(const std::string& name);

struct JudgeScore {
  double value = 1.0;
  JudgeSource source = JudgeSource::oracle;
};

struct JudgeRequest {
  std::string prompt_text;
  std::string candidate_text;
  std::string reference_text;
  std::string rubric;

  void validate() const;
};

class JudgeUnavailable : public Error {
 public:
  using Error::Error;
};

class MalformedJudgment : public Error {
 public:
  using Error::Error;
};

/// Versioned rubric text shipped in assets/.
const std::string& default_rubric();
const std::string& rubric_version();

std::string render_prompt(const Prompt& prompt);
std::string render_tokens(std::span<const Token> tokens, const Vocabulary& vocab);
JudgeRequest make_request(const Prompt& prompt, const Rollout& rollout,
                          std::span<const Token> reference);

/// Components of the oracle rubric, each in [0, 1].
struct OracleComponents {
  double answer = 0.0;        ///< verify()
  double validity = 0.0;      ///< step_fraction()
  double completeness = 0.0;  ///< min(1, emitted steps / L)
};

OracleComponents oracle_components(const Prompt& prompt, std::span<const Token> tokens);

/// S = 1 + 3 (answer + validity + completeness).
JudgeScore oracle_score(const Prompt& prompt, const Rollout& rollout,
                        std::span<const Token> reference);

/// First integer in `reply`; must lie in [1, 10].
int parse_judgment(std::string_view reply);

/// Append-only score cache keyed by a SHA-256 content hash.
class JudgeCache {
 public:
  JudgeCache() = default;
  explicit JudgeCache(std::filesystem::path path);

  std::optional<double> get(const std::string& key) const;
  void put(const std::string& key, double score);
  [[nodiscard]] std::size_t size() const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, double> entries_;
};

std::string sha256_hex(std::string_view data);

struct ExternalJudgeConfig {
  std::string url;  ///< full endpoint, e.g. https://host/v1/chat/completions
  std::string api_key;
  std::string model = "gpt-4o";
  double timeout_seconds = 30.0;  ///< total budget per request, retries included
  int max_retries = 2;
  int max_in_flight = 4;
  std::filesystem::path cache_path;

  /// Reads DAGRPO_JUDGE_URL and DAGRPO_JUDGE_KEY.
  static ExternalJudgeConfig from_env();
};

class ExternalJudge {
 public:
  explicit ExternalJudge(ExternalJudgeConfig cfg);

  /// Thread-safe; identical requests are answered from the cache.
  JudgeScore score(const JudgeRequest& req);

  /// Request body in chat-completion format.
  [[nodiscard]] std::string request_body(const JudgeRequest& req) const;
  [[nodiscard]] const ExternalJudgeConfig& config() const { return cfg_; }
  [[nodiscard]] std::size_t network_calls() const;

 private:
  std::string call(const std::string& body);

  ExternalJudgeConfig cfg_;
  JudgeCache cache_;
  mutable std::mutex stats_mutex_;
  std::size_t network_calls_ = 0;
};

struct JudgeOptions {
  JudgeMode mode = JudgeMode::oracle;
  JudgeFallback fallback = JudgeFallback::oracle;
};

/// Sets judge_score on every rollout. External requests run with at most
/// `max_in_flight` in flight; results do not depend on completion order.
/// `fallbacks`, when given, is incremented once per oracle fallback.
Group score_group(Group group, const JudgeOptions& opts, ExternalJudge* external = nullptr,
                  int* fallbacks = nullptr);

}  // namespace dagrpo
