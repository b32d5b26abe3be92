// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"

#include "dagrpo/advantage.hpp"
#include "dagrpo/tasks.hpp"

using namespace dagrpo;

namespace {

Group group_with_rewards(const std::vector<int>& rewards) {
  Group g;
  g.prompt.start_value = 3;
  g.prompt.operations = {{OpCode::add, 5}};
  for (int r : rewards) {
    Rollout x;
    x.prompt_id = g.prompt.key();
    x.tokens = {static_cast<Token>(r ? 8 : 1), 16, 17};
    x.reward = r;
    g.rollouts.push_back(x);
  }
  return g;
}

Group scored(const std::vector<double>& advantages, const std::vector<double>& scores) {
  Group g;
  for (std::size_t i = 0; i < advantages.size(); ++i) {
    Rollout r;
    r.tokens = {17};
    r.reward = advantages[i] > 0 ? 1 : 0;
    r.advantage = advantages[i];
    r.judge_score = scores[i];
    g.rollouts.push_back(r);
  }
  return g;
}

std::vector<double> advantages_of(const Group& g) {
  std::vector<double> out;
  for (const auto& r : g.rollouts) out.push_back(*r.advantage);
  return out;
}

}  // namespace

TEST_CASE("standard advantages") {
  const auto flat = advantages_of(compute_advantages(group_with_rewards({1, 1, 1, 1}), {}));
  CHECK(flat == std::vector<double>{0, 0, 0, 0});

  const auto a = advantages_of(compute_advantages(group_with_rewards({1, 0, 0, 0}), {}));
  CHECK(a[0] == doctest::Approx(std::sqrt(3.0)).epsilon(1e-12));
  CHECK(a[0] == doctest::Approx(1.7321).epsilon(1e-4));
  for (int i = 1; i < 4; ++i) CHECK(a[static_cast<std::size_t>(i)] == doctest::Approx(-1.0 / std::sqrt(3.0)).epsilon(1e-12));

  AdvantageMode dr;
  dr.kind = AdvantageMode::Kind::dr_grpo;
  CHECK(advantages_of(compute_advantages(group_with_rewards({1, 0}), dr)) == std::vector<double>{0.5, -0.5});
}

TEST_CASE("mixed groups") {
  auto on = group_with_rewards({0, 0, 0, 0, 0, 0, 0});
  Rollout anchor;
  anchor.prompt_id = on.prompt.key();
  anchor.origin = Origin::off_policy;
  anchor.tokens = reference_solution(on.prompt);
  anchor.reward = 1;
  auto mixed = mix_groups(on, {anchor});
  REQUIRE(mixed.size() == 8);
  CHECK(mixed.on_policy_count() == 7);
  AdvantageMode mode;
  mode.kind = AdvantageMode::Kind::mixed;
  const auto a = advantages_of(compute_advantages(mixed, mode));
  CHECK(a[7] == doctest::Approx(std::sqrt(7.0)).epsilon(1e-12));
  CHECK(a[7] == doctest::Approx(2.6458).epsilon(1e-4));
  for (int i = 0; i < 7; ++i) CHECK(a[static_cast<std::size_t>(i)] == doctest::Approx(-1.0 / std::sqrt(7.0)).epsilon(1e-12));

  auto with_adv = compute_advantages(group_with_rewards({1, 0}), {});
  const auto same = mix_groups(with_adv, {});
  CHECK(same.size() == 2);
  CHECK_FALSE(same.rollouts[0].advantage.has_value());
  CHECK_FALSE(same.masks.has_value());

  auto four = group_with_rewards({1, 1, 1, 1});
  std::vector<Rollout> anchors(4, anchor);
  CHECK(advantages_of(compute_advantages(mix_groups(four, anchors), mode)) == std::vector<double>(8, 0.0));
}

TEST_CASE("partitions") {
  auto p = partition(scored({1.73, -0.58, -0.58, -0.58}, {1, 1, 1, 1}));
  CHECK(p.positives == std::vector<std::size_t>{0});
  CHECK(p.negatives == std::vector<std::size_t>{1, 2, 3});
  p = partition(scored({0, 0}, {1, 1}));
  CHECK(p.positives.empty());
  CHECK(p.negatives.empty());
  CHECK(p.zeros == std::vector<std::size_t>{0, 1});
  p = partition(scored({0.5, -0.5, 0.0}, {1, 1, 1}));
  CHECK(p.positives == std::vector<std::size_t>{0});
  CHECK(p.negatives == std::vector<std::size_t>{1});
  CHECK(p.zeros == std::vector<std::size_t>{2});
}

TEST_CASE("distinctiveness masks") {
  const auto g = scored({1, 1, -1, -1}, {9, 8, 6, 4});
  const auto m = compute_masks(g, partition(g), 3.0);
  CHECK(m.lambda_plus.at(0) == 1);
  CHECK(m.lambda_plus.at(1) == 0);
  CHECK(m.lambda_minus.at(3) == 1);
  CHECK(m.lambda_minus.at(2) == 0);
  CHECK(*m.s_max_neg == 6);
  CHECK(*m.s_min_pos == 8);

  const auto z = compute_masks(g, partition(g), 0.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.lambda(i) == 1);

  const auto only_pos = scored({1, 1, 0}, {2, 3, 5});
  const auto mp = compute_masks(only_pos, partition(only_pos), 3.0);
  CHECK(mp.lambda(0) == 1);
  CHECK(mp.lambda(1) == 1);
  CHECK(mp.lambda(2) == 0);

  const auto only_neg = scored({-1, -1}, {1, 1});
  const auto mn = compute_masks(only_neg, partition(only_neg), 3.0);
  CHECK(mn.lambda(0) == 0);
  CHECK(mn.lambda(1) == 0);

  const auto ones = all_ones_masks(partition(g), 3.0);
  for (std::size_t i = 0; i < 4; ++i) CHECK(ones.lambda(i) == 1);
}

TEST_CASE("masks agree with the quantified definition on random groups") {
  auto rng = derive_stream(21, StreamPurpose::test, {});
  const double deltas[] = {0.0, 1.0, 3.0, 3.5};
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = uniform_int(rng, 1, 8);
    std::vector<double> adv, score;
    for (int i = 0; i < n; ++i) {
      adv.push_back(static_cast<double>(uniform_int(rng, -1, 1)));
      score.push_back(static_cast<double>(uniform_int(rng, 2, 20)) / 2.0);
    }
    const double delta = deltas[trial % 4];
    const auto g = scored(adv, score);
    const auto m = compute_masks(g, partition(g), delta);
    bool any_pos = false;
    for (double a : adv) any_pos |= a > 0;
    for (int j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      int expect = 0;
      if (adv[uj] > 0) {
        expect = 1;
        for (int k = 0; k < n; ++k) {
          if (adv[static_cast<std::size_t>(k)] < 0 && !(score[uj] - score[static_cast<std::size_t>(k)] >= delta)) expect = 0;
        }
      } else if (adv[uj] < 0 && any_pos) {
        expect = 1;
        for (int k = 0; k < n; ++k) {
          if (adv[static_cast<std::size_t>(k)] > 0 && !(score[static_cast<std::size_t>(k)] - score[uj] >= delta)) expect = 0;
        }
      }
      CHECK(m.lambda(uj) == expect);
    }
  }
}
