// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/judge.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>
#include <vector>

#include <openssl/evp.h>

#include "httplib.h"
#include "json.hpp"

#include "dagrpo/tasks.hpp"
#include "rubric_asset.hpp"

namespace dagrpo {

namespace {

using Clock = std::chrono::steady_clock;

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw JudgeUnavailable("judge URL lacks a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/v1/chat/completions"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::string to_string(JudgeMode mode) { return mode == JudgeMode::oracle ? "oracle" : "external"; }

JudgeMode judge_mode_from_string(const std::string& name) {
  if (name == "oracle") return JudgeMode::oracle;
  if (name == "external") return JudgeMode::external;
  throw Error("unknown judge mode: " + name);
}

std::string to_string(JudgeFallback fallback) {
  return fallback == JudgeFallback::abort ? "abort" : "oracle";
}

JudgeFallback judge_fallback_from_string(const std::string& name) {
  if (name == "abort") return JudgeFallback::abort;
  if (name == "oracle") return JudgeFallback::oracle;
  throw Error("unknown judge fallback: " + name);
}

void JudgeRequest::validate() const {
  if (prompt_text.empty() || candidate_text.empty() || reference_text.empty() || rubric.empty()) {
    throw Error("judge request has an empty rendering");
  }
}

const std::string& default_rubric() {
  static const std::string text = kJudgeRubricV1;
  return text;
}

const std::string& rubric_version() {
  static const std::string v = "judge_rubric_v1";
  return v;
}

std::string render_prompt(const Prompt& prompt) {
  std::string s = "Start with " + std::to_string(prompt.start_value) + ".";
  for (const auto& op : prompt.operations) {
    switch (op.code) {
      case OpCode::add: s += " Add " + std::to_string(op.operand) + "."; break;
      case OpCode::sub: s += " Subtract " + std::to_string(op.operand) + "."; break;
      case OpCode::mul: s += " Multiply by " + std::to_string(op.operand) + "."; break;
    }
  }
  s += " Work modulo " + std::to_string(prompt.modulus) + " and write the value after every step.";
  return s;
}

std::string render_tokens(std::span<const Token> tokens, const Vocabulary& vocab) {
  if (tokens.empty()) return "<empty>";
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    const Token t = tokens[i];
    if (t == vocab.sep()) s += ';';
    else if (t == vocab.eos()) s += "<eos>";
    else s += std::to_string(t);
  }
  return s;
}

JudgeRequest make_request(const Prompt& prompt, const Rollout& rollout,
                          std::span<const Token> reference) {
  const auto vocab = prompt.vocabulary();
  return {render_prompt(prompt), render_tokens(rollout.tokens, vocab),
          render_tokens(reference, vocab), default_rubric()};
}

OracleComponents oracle_components(const Prompt& prompt, std::span<const Token> tokens) {
  OracleComponents c;
  c.answer = static_cast<double>(verify(prompt, tokens));
  c.validity = step_fraction(prompt, tokens);
  const auto shape = parse_response(prompt, tokens);
  c.completeness = std::min(1.0, static_cast<double>(shape.steps) / prompt.difficulty());
  return c;
}

JudgeScore oracle_score(const Prompt& prompt, const Rollout& rollout,
                        std::span<const Token> /*reference*/) {
  // The reference is reference_solution(prompt); the components read the same facts from
  // the prompt directly.
  const auto c = oracle_components(prompt, rollout.tokens);
  return {1.0 + 3.0 * (c.answer + c.validity + c.completeness), JudgeSource::oracle};
}

int parse_judgment(std::string_view reply) {
  const auto first = std::find_if(reply.begin(), reply.end(),
                                  [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); });
  if (first == reply.end()) throw MalformedJudgment("judge reply has no score: " + std::string(reply));
  auto last = first;
  while (last != reply.end() && std::isdigit(static_cast<unsigned char>(*last))) ++last;
  const std::string digits(first, last);
  if (digits.size() > 2) throw MalformedJudgment("judge score out of range: " + digits);
  const int v = std::stoi(digits);
  if (v < 1 || v > 10) throw MalformedJudgment("judge score out of range: " + digits);
  return v;
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

JudgeCache::JudgeCache(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      entries_[rec.at("key").get<std::string>()] = rec.at("score").get<double>();
    } catch (const nlohmann::json::exception&) {
      // A torn final line from an interrupted run; later lines still load.
    }
  }
}

std::optional<double> JudgeCache::get(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void JudgeCache::put(const std::string& key, double score) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(key, score).second) return;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to judge cache: " + path_.string());
  out << nlohmann::json{{"key", key}, {"score", score}}.dump() << '\n';
}

std::size_t JudgeCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

ExternalJudgeConfig ExternalJudgeConfig::from_env() {
  ExternalJudgeConfig cfg;
  if (const char* url = std::getenv("DAGRPO_JUDGE_URL")) cfg.url = url;
  if (const char* key = std::getenv("DAGRPO_JUDGE_KEY")) cfg.api_key = key;
  return cfg;
}

ExternalJudge::ExternalJudge(ExternalJudgeConfig cfg)
    : cfg_(std::move(cfg)), cache_(cfg_.cache_path) {}

std::string ExternalJudge::request_body(const JudgeRequest& req) const {
  const std::string user = "Problem:\n" + req.prompt_text + "\n\nCandidate solution:\n" +
                           req.candidate_text + "\n\nReference solution:\n" + req.reference_text +
                           "\n\nScore (1-10):";
  nlohmann::json body = {
      {"model", cfg_.model},
      {"temperature", 0},
      {"messages",
       nlohmann::json::array({{{"role", "system"}, {"content", req.rubric}},
                              {{"role", "user"}, {"content", user}}})}};
  return body.dump();
}

std::size_t ExternalJudge::network_calls() const {
  std::lock_guard lock(stats_mutex_);
  return network_calls_;
}

std::string ExternalJudge::call(const std::string& body) {
  if (cfg_.url.empty()) throw JudgeUnavailable("no judge endpoint configured (DAGRPO_JUDGE_URL)");
  const auto ep = split_url(cfg_.url);
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(cfg_.timeout_seconds));
  std::string last_error = "no attempt made";
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    const auto remaining = std::chrono::duration<double>(deadline - Clock::now()).count();
    if (remaining <= 0.0) break;
    const auto secs = static_cast<time_t>(remaining);
    const auto usecs = static_cast<time_t>((remaining - static_cast<double>(secs)) * 1e6);

    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    {
      std::lock_guard lock(stats_mutex_);
      ++network_calls_;
    }
    auto res = cli.Post(ep.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 200) return res->body;
    last_error = "HTTP " + std::to_string(res->status);
  }
  throw JudgeUnavailable("judge unavailable after " + std::to_string(cfg_.max_retries + 1) +
                         " attempts: " + last_error);
}

JudgeScore ExternalJudge::score(const JudgeRequest& req) {
  req.validate();
  const auto body = request_body(req);
  const auto key = sha256_hex(body);
  if (auto hit = cache_.get(key)) return {*hit, JudgeSource::external};

  const auto raw = call(body);
  std::string content;
  try {
    const auto reply = nlohmann::json::parse(raw);
    content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedJudgment(std::string("unreadable judge response: ") + e.what());
  }
  const double v = parse_judgment(content);
  cache_.put(key, v);
  return {v, JudgeSource::external};
}

Group score_group(Group group, const JudgeOptions& opts, ExternalJudge* external, int* fallbacks) {
  const auto reference = reference_solution(group.prompt);
  for (const auto& r : group.rollouts) {
    if (!r.reward) throw Error("score_group: rollout scored before verification");
  }

  if (opts.mode == JudgeMode::oracle) {
    for (auto& r : group.rollouts) r.judge_score = oracle_score(group.prompt, r, reference).value;
    return group;
  }
  if (!external) throw JudgeUnavailable("external judge mode without a client");

  const std::size_t n = group.size();
  std::vector<std::optional<double>> scores(n);
  std::vector<std::string> errors(n);
  std::vector<std::exception_ptr> failures(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        scores[i] = external->score(make_request(group.prompt, group.rollouts[i], reference)).value;
      } catch (const JudgeUnavailable& e) {
        errors[i] = e.what();
        failures[i] = std::current_exception();
      } catch (const MalformedJudgment& e) {
        errors[i] = e.what();
        failures[i] = std::current_exception();
      }
    }
  };
  const auto workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, external->config().max_in_flight)));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < n; ++i) {
    auto& r = group.rollouts[i];
    if (scores[i]) {
      r.judge_score = *scores[i];
      continue;
    }
    if (opts.fallback == JudgeFallback::abort) std::rethrow_exception(failures[i]);
    std::clog << "[judge] falling back to oracle for " << r.prompt_id << ": " << errors[i] << '\n';
    r.judge_score = oracle_score(group.prompt, r, reference).value;
    if (fallbacks) ++*fallbacks;
  }
  return group;
}

}  // namespace dagrpo
