// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "doctest.h"

#include "dagrpo/policy.hpp"
#include "dagrpo/tasks.hpp"

using namespace dagrpo;

namespace {

// V = 4: two value tokens plus SEP and EOS.
Prompt tiny_prompt() {
  Prompt p;
  p.modulus = 2;
  p.start_value = 1;
  p.operations = {{OpCode::add, 1}, {OpCode::add, 1}, {OpCode::add, 1}};
  return p;
}

void set_all_visited(PolicyParams& params, const Prompt& p, const std::vector<Token>& tokens,
                     const std::vector<double>& logits) {
  for (const auto& ctx : visited_contexts(params, p, tokens)) params.row(ctx) = logits;
}

}  // namespace

TEST_CASE("token distribution: uniform and hand-computed softmax") {
  const auto u = apply_sampling(std::vector<double>{0, 0, 0, 0}, {});
  for (double x : u) CHECK(x == doctest::Approx(0.25).epsilon(1e-15));

  const std::vector<double> logits{std::log(2.0), 0, 0, 0};
  const auto p = apply_sampling(logits, {});
  CHECK(p[0] == doctest::Approx(0.4).epsilon(1e-12));
  for (int j = 1; j < 4; ++j) CHECK(p[static_cast<std::size_t>(j)] == doctest::Approx(0.2).epsilon(1e-12));

  SamplingConfig nucleus;
  nucleus.top_p = 0.4;
  const auto q = apply_sampling(logits, nucleus);
  CHECK(q == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("temperature sharpens towards the argmax") {
  const std::vector<double> logits{1.0, 0.0, 0.0, 0.0};
  SamplingConfig cold;
  cold.temperature = 0.5;
  const auto p = apply_sampling(logits, cold);
  const double z = std::exp(2.0) + 3.0;
  CHECK(p[0] == doctest::Approx(std::exp(2.0) / z).epsilon(1e-12));
}

TEST_CASE("sequence log-probabilities") {
  const auto prompt = tiny_prompt();
  PolicyParams uniform(prompt.vocabulary(), {});
  const std::vector<Token> three{0, 2, 1};
  CHECK(logprob_sequence(uniform, prompt, three).total == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-12));
  CHECK(logprob_sequence(uniform, prompt, three).total == doctest::Approx(-4.1589).epsilon(1e-4));

  PolicyParams tilted(prompt.vocabulary(), {});
  const std::vector<Token> zeros{0, 0};
  set_all_visited(tilted, prompt, zeros, {std::log(2.0), 0, 0, 0});
  CHECK(logprob_sequence(tilted, prompt, zeros).total == doctest::Approx(2.0 * std::log(0.4)).epsilon(1e-12));
  CHECK(logprob_sequence(tilted, prompt, zeros).total == doctest::Approx(-1.8326).epsilon(1e-4));

  const std::vector<Token> one{1};
  const auto lp1 = logprob_sequence(tilted, prompt, one);
  CHECK(lp1.total == lp1.per_token[0]);
  CHECK(lp1.total == doctest::Approx(std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("log-prob gradient at the uniform policy and linearity") {
  const auto prompt = tiny_prompt();
  PolicyParams uniform(prompt.vocabulary(), {});
  const std::vector<Token> one{0};
  const auto g = grad_logprob_sequence(uniform, prompt, one);
  REQUIRE(g.row_count() == 1);
  const auto& row = g.rows().begin()->second;
  CHECK(row[0] == doctest::Approx(0.75).epsilon(1e-15));
  for (int j = 1; j < 4; ++j) CHECK(row[static_cast<std::size_t>(j)] == doctest::Approx(-0.25).epsilon(1e-15));

  std::vector<double> once(4, 0.0), twice(4, 0.0);
  const std::vector<double> probs{0.4, 0.2, 0.2, 0.2};
  accumulate_logprob_grad(once, probs, 1, 1.0);
  accumulate_logprob_grad(twice, probs, 1, 1.0);
  accumulate_logprob_grad(twice, probs, 1, 1.0);
  for (std::size_t j = 0; j < 4; ++j) CHECK(twice[j] == 2.0 * once[j]);
}

TEST_CASE("log-prob gradient matches central differences") {
  auto rng = derive_stream(7, StreamPurpose::test, {1});
  TaskConfig task;
  task.modulus = 5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto prompt = generate_prompt(task, 1 + trial % 3, rng);
    PolicyParams params(prompt.vocabulary(), {2, trial % 2 ? ContextView::chain_state : ContextView::full_prompt});
    std::vector<Token> tokens;
    const int len = uniform_int(rng, 1, 6);
    for (int t = 0; t < len; ++t) tokens.push_back(static_cast<Token>(uniform_int(rng, 0, 6)));
    std::normal_distribution<double> noise(0.0, 1.0);
    for (const auto& ctx : visited_contexts(params, prompt, tokens)) {
      for (double& x : params.row(ctx)) x = noise(rng);
    }
    const auto g = grad_logprob_sequence(params, prompt, tokens);
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (const auto& [ctx, row] : g.rows()) {
      for (std::size_t j = 0; j < row.size(); ++j) {
        PolicyParams plus = params, minus = params;
        plus.row(ctx)[j] += 1e-5;
        minus.row(ctx)[j] -= 1e-5;
        const double numeric = (logprob_sequence(plus, prompt, tokens).total -
                                logprob_sequence(minus, prompt, tokens).total) / 2e-5;
        diff2 += (row[j] - numeric) * (row[j] - numeric);
        a2 += row[j] * row[j];
        n2 += numeric * numeric;
      }
    }
    CHECK(std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(n2)) < 1e-5);
  }
}

TEST_CASE("sampling: degenerate, deterministic and Monte-Carlo frequencies") {
  const auto prompt = tiny_prompt();
  PolicyParams forced(prompt.vocabulary(), {});
  SamplingConfig cfg;
  cfg.max_len = 7;
  std::vector<Token> zeros(7, 0);
  set_all_visited(forced, prompt, zeros, {1e6, 0, 0, 0});
  auto rng = derive_stream(1, StreamPurpose::test, {2});
  const auto r = sample_rollout(forced, prompt, cfg, rng);
  CHECK(r.tokens == zeros);

  PolicyParams random_policy(prompt.vocabulary(), {});
  auto a = derive_stream(3, StreamPurpose::test, {4});
  auto b = derive_stream(3, StreamPurpose::test, {4});
  const auto ra = sample_rollout(random_policy, prompt, cfg, a);
  const auto rb = sample_rollout(random_policy, prompt, cfg, b);
  CHECK(ra.tokens == rb.tokens);
  CHECK(*ra.behavior_logprobs == *rb.behavior_logprobs);

  const std::vector<double> probs{0.4, 0.2, 0.2, 0.2};
  std::vector<int> counts(4, 0);
  auto mc = derive_stream(5, StreamPurpose::test, {6});
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_categorical(probs, mc))];
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(counts[j] / double(n) - probs[j]) < 0.01);
}

TEST_CASE("entropy") {
  CHECK(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(entropy(std::vector<double>{1.0, 0.0, 0.0, 0.0}) == 0.0);

  const auto prompt = tiny_prompt();
  PolicyParams params(prompt.vocabulary(), {});
  const std::vector<Token> tokens{0, 2};
  const auto ctxs = visited_contexts(params, prompt, tokens);
  REQUIRE(ctxs.size() == 2);
  REQUIRE(ctxs[0] != ctxs[1]);
  params.row(ctxs[1]) = {1e6, 0, 0, 0};
  CHECK(policy_entropy(params, ctxs) == doctest::Approx(std::log(4.0) / 2.0).epsilon(1e-12));
  CHECK(policy_entropy(params, ctxs) == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("chain-state contexts") {
  Prompt p;
  p.modulus = 16;
  p.start_value = 3;
  p.operations = {{OpCode::add, 5}, {OpCode::mul, 2}};
  PolicyParams params(p.vocabulary(), {});
  const auto ref = reference_solution(p);
  const auto ctxs = visited_contexts(params, p, ref);
  REQUIRE(ctxs.size() == 5);
  CHECK(ctxs[0].prompt_key == "add5@3");
  CHECK(ctxs[0].history == std::vector<Token>{kValueClass, 16});
  CHECK(ctxs[1].prompt_key == "fmt");
  CHECK(ctxs[2].prompt_key == "mul2@8");
  CHECK(ctxs[3].prompt_key == "fmt");
  CHECK(ctxs[4].prompt_key == "done");

  PolicyParams full(p.vocabulary(), {2, ContextView::full_prompt});
  const auto c0 = context_at(full, p, std::span<const Token>(ref.data(), 0));
  CHECK(c0.prompt_key == p.key());
  CHECK(c0.history.empty());
  const auto c3 = context_at(full, p, std::span<const Token>(ref.data(), 3));
  CHECK(c3.history == std::vector<Token>{16, 0});
}

TEST_CASE("checkpoint text round-trips exactly") {
  auto rng = derive_stream(11, StreamPurpose::test, {});
  PolicyParams params(Vocabulary{16}, {3, ContextView::full_prompt});
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int i = 0; i < 30; ++i) {
    Context ctx{"m16:" + std::to_string(i), {static_cast<Token>(i % 18), 16}};
    for (double& x : params.row(ctx)) x = noise(rng) / 3.0;
  }
  std::stringstream ss;
  save_params(params, ss);
  const auto loaded = load_params(ss);
  CHECK(loaded == params);
}
