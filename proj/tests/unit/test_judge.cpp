// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <chrono>
#include <filesystem>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"

#include "dagrpo/judge.hpp"
#include "dagrpo/tasks.hpp"

using namespace dagrpo;
namespace fs = std::filesystem;

namespace {

Prompt two_step() {
  Prompt p;
  p.start_value = 3;
  p.operations = {{OpCode::add, 5}, {OpCode::mul, 2}};
  return p;
}

Rollout rollout_of(const Prompt& p, std::vector<Token> tokens, Origin origin = Origin::on_policy) {
  Rollout r;
  r.prompt_id = p.key();
  r.tokens = std::move(tokens);
  r.origin = origin;
  r.reward = verify(p, r.tokens);
  return r;
}

std::string reply(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Chat-completion stand-in on 127.0.0.1 with a handful of behaviours.
class MockJudge {
 public:
  MockJudge() {
    server_.Post("/ok", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_auth_ = req.get_header_value("Authorization");
      res.set_content(reply("Score: 7"), "application/json");
    });
    server_.Post("/flaky", [this](const httplib::Request&, httplib::Response& res) {
      if (hits_++ < 2) {
        res.status = 503;
        return;
      }
      res.set_content(reply("8"), "application/json");
    });
    server_.Post("/slow", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_;
      std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      res.set_content(reply("9"), "application/json");
    });
    server_.Post("/garbled", [this](const httplib::Request&, httplib::Response& res) {
      ++hits_;
      res.set_content(reply("excellent work"), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~MockJudge() {
    server_.stop();
    thread_.join();
  }
  [[nodiscard]] std::string url(const std::string& path) const {
    return "http://127.0.0.1:" + std::to_string(port_) + path;
  }
  [[nodiscard]] int hits() const { return hits_; }
  [[nodiscard]] std::string last_auth() const { return last_auth_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  std::string last_auth_;
};

fs::path temp_path(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dagrpo_test_judge_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("oracle scores") {
  const auto p = two_step();
  const auto ref = reference_solution(p);
  CHECK(oracle_score(p, rollout_of(p, ref), ref).value == 10.0);
  CHECK(oracle_score(p, rollout_of(p, {17}), ref).value == 1.0);
  CHECK(oracle_score(p, rollout_of(p, {}), ref).value == 1.0);
  const auto half = oracle_components(p, std::vector<Token>{8, 16, 1, 16, 17});
  CHECK(half.answer == 0.0);
  CHECK(half.validity == 0.5);
  CHECK(half.completeness == 1.0);
  CHECK(oracle_score(p, rollout_of(p, {8, 16, 1, 16, 17}), ref).value == 5.5);
}

TEST_CASE("oracle group scoring") {
  const auto p = two_step();
  const auto ref = reference_solution(p);
  Group g;
  g.prompt = p;
  g.rollouts = {rollout_of(p, ref), rollout_of(p, ref)};
  const auto s1 = score_group(g, {});
  for (const auto& r : s1.rollouts) CHECK(*r.judge_score == 10.0);
  const auto s2 = score_group(g, {});
  CHECK(*s2.rollouts[0].judge_score == *s1.rollouts[0].judge_score);

  TaskConfig noisy;
  noisy.noise_rate = 1.0;
  noisy.corruption = CorruptionTarget::final;
  auto rng = derive_stream(1, StreamPurpose::anchor, {});
  auto anchor = demonstrate(p, noisy, rng);
  anchor.reward = verify(p, anchor.tokens);
  Group mixed;
  mixed.prompt = p;
  mixed.rollouts = {rollout_of(p, ref), anchor};
  const auto sm = score_group(mixed, {});
  CHECK(*sm.rollouts[1].judge_score < *sm.rollouts[0].judge_score);

  Group unverified;
  unverified.prompt = p;
  unverified.rollouts = {Rollout{}};
  CHECK_THROWS_AS(score_group(unverified, {}), Error);
}

TEST_CASE("judgment parsing") {
  CHECK(parse_judgment("Score: 7") == 7);
  CHECK(parse_judgment("10") == 10);
  CHECK(parse_judgment("I'd give it a 3 out of 10") == 3);
  CHECK_THROWS_AS(parse_judgment("no digits here"), MalformedJudgment);
  CHECK_THROWS_AS(parse_judgment("0"), MalformedJudgment);
  CHECK_THROWS_AS(parse_judgment("11"), MalformedJudgment);
}

TEST_CASE("sha256 and the score cache") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const auto path = temp_path("cache.jsonl");
  {
    JudgeCache cache(path);
    CHECK_FALSE(cache.get("k").has_value());
    cache.put("k", 6.0);
    cache.put("k", 9.0);
    CHECK(*cache.get("k") == 6.0);
  }
  JudgeCache reopened(path);
  CHECK(reopened.size() == 1);
  CHECK(*reopened.get("k") == 6.0);
  fs::remove(path);
}

TEST_CASE("request rendering") {
  const auto p = two_step();
  const auto ref = reference_solution(p);
  const auto req = make_request(p, rollout_of(p, ref), ref);
  CHECK(req.rubric == default_rubric());
  CHECK_FALSE(rubric_version().empty());
  CHECK(req.candidate_text == req.reference_text);
  CHECK(req.prompt_text.find('3') != std::string::npos);
  ExternalJudge judge({});
  const auto body = nlohmann::json::parse(judge.request_body(req));
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][1]["content"].get<std::string>().find(req.candidate_text) != std::string::npos);
}

TEST_CASE("external judge against a local endpoint") {
  MockJudge mock;
  const auto p = two_step();
  const auto ref = reference_solution(p);
  const auto req = make_request(p, rollout_of(p, ref), ref);

  SUBCASE("score, auth header and cache hit") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/ok");
    cfg.api_key = "secret";
    cfg.cache_path = temp_path("ok.jsonl");
    ExternalJudge judge(cfg);
    const auto s = judge.score(req);
    CHECK(s.value == 7.0);
    CHECK(s.source == JudgeSource::external);
    CHECK(mock.last_auth() == "Bearer secret");
    CHECK(judge.score(req).value == 7.0);
    CHECK(judge.network_calls() == 1);
    ExternalJudge again(cfg);
    CHECK(again.score(req).value == 7.0);
    CHECK(again.network_calls() == 0);
    fs::remove(cfg.cache_path);
  }

  SUBCASE("retries on server errors") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/flaky");
    cfg.max_retries = 2;
    ExternalJudge judge(cfg);
    CHECK(judge.score(req).value == 8.0);
    CHECK(judge.network_calls() == 3);
  }

  SUBCASE("retries exhausted") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/flaky");
    cfg.max_retries = 1;
    ExternalJudge judge(cfg);
    CHECK_THROWS_AS(judge.score(req), JudgeUnavailable);
  }

  SUBCASE("timeout") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/slow");
    cfg.timeout_seconds = 0.3;
    const auto t0 = std::chrono::steady_clock::now();
    ExternalJudge judge(cfg);
    CHECK_THROWS_AS(judge.score(req), JudgeUnavailable);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::milliseconds(1200));
  }

  SUBCASE("malformed reply") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/garbled");
    ExternalJudge judge(cfg);
    CHECK_THROWS_AS(judge.score(req), MalformedJudgment);
  }

  SUBCASE("group scoring with fallback") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/garbled");
    cfg.max_in_flight = 3;
    ExternalJudge judge(cfg);
    Group g;
    g.prompt = p;
    g.rollouts = {rollout_of(p, ref), rollout_of(p, {8, 16, 1, 16, 17}), rollout_of(p, {17})};
    JudgeOptions opts{JudgeMode::external, JudgeFallback::oracle};
    int fallbacks = 0;
    const auto scored = score_group(g, opts, &judge, &fallbacks);
    CHECK(fallbacks == 3);
    CHECK(*scored.rollouts[0].judge_score == 10.0);
    CHECK(*scored.rollouts[1].judge_score == 5.5);
    CHECK(*scored.rollouts[2].judge_score == 1.0);

    opts.fallback = JudgeFallback::abort;
    CHECK_THROWS_AS(score_group(g, opts, &judge), MalformedJudgment);
  }

  SUBCASE("group scoring externally") {
    ExternalJudgeConfig cfg;
    cfg.url = mock.url("/ok");
    ExternalJudge judge(cfg);
    Group g;
    g.prompt = p;
    g.rollouts = {rollout_of(p, ref), rollout_of(p, {17})};
    const auto scored = score_group(g, {JudgeMode::external, JudgeFallback::abort}, &judge);
    for (const auto& r : scored.rollouts) CHECK(*r.judge_score == 7.0);
  }
}

TEST_CASE("unreachable endpoint") {
  ExternalJudgeConfig cfg;
  cfg.url = "http://127.0.0.1:1/v1/chat/completions";
  cfg.timeout_seconds = 2.0;
  cfg.max_retries = 0;
  ExternalJudge judge(cfg);
  const auto p = two_step();
  const auto ref = reference_solution(p);
  CHECK_THROWS_AS(judge.score(make_request(p, rollout_of(p, ref), ref)), JudgeUnavailable);
  ExternalJudge unset({});
  CHECK_THROWS_AS(unset.score(make_request(p, rollout_of(p, ref), ref)), JudgeUnavailable);
}
