// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

#include "dagrpo/metrics.hpp"
#include "dagrpo/tasks.hpp"

using namespace dagrpo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dagrpo_test_metrics_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_series(const fs::path& path, long first, long last, double value) {
  std::ofstream out(path);
  for (long s = first; s <= last; ++s) {
    StepMetrics m;
    m.step = s;
    m.reward_mean = value;
    m.grad_norm = static_cast<double>(s);
    out << to_json(m).dump() << '\n';
  }
}

Group correct_group(int copies) {
  Group g;
  g.prompt.start_value = 3;
  g.prompt.operations = {{OpCode::add, 5}};
  for (int i = 0; i < copies; ++i) {
    Rollout r;
    r.tokens = reference_solution(g.prompt);
    r.reward = 1;
    r.advantage = 0.0;
    g.rollouts.push_back(r);
  }
  return g;
}

}  // namespace

TEST_CASE("summaries of deterministic correct groups") {
  std::vector<Group> groups{correct_group(4), correct_group(4)};
  PolicyParams params(Vocabulary{16}, {});
  for (const auto& ctx : visited_contexts(params, groups[0].prompt, groups[0].rollouts[0].tokens)) {
    auto& row = params.row(ctx);
    const auto& ref = groups[0].rollouts[0].tokens;
    row.assign(18, 0.0);
    // A logit gap this large makes the softmax exactly one-hot in double precision.
    for (std::size_t t = 0; t < ref.size(); ++t) {
      if (visited_contexts(params, groups[0].prompt, ref)[t] == ctx) row[static_cast<std::size_t>(ref[t])] = 1e6;
    }
  }
  const auto m = summarize_step(3, groups, params, GradientVector(18), {});
  CHECK(m.step == 3);
  CHECK(m.reward_mean == 1.0);
  CHECK(m.entropy_mean == 0.0);
  CHECK(m.grad_norm == 0.0);
  CHECK(m.response_length_mean == 3.0);
  CHECK(m.zero_advantage_group_fraction == 1.0);
  CHECK(m.masked_pos_fraction == 0.0);
}

TEST_CASE("entropy agrees with the policy module") {
  auto rng = derive_stream(8, StreamPurpose::test, {});
  TaskConfig task;
  task.chain_lengths = {1, 2};
  PolicyParams params(Vocabulary{16}, {});
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<Group> groups;
  std::vector<Context> visited;
  for (int i = 0; i < 6; ++i) {
    Group g;
    g.prompt = generate_prompt(task, rng);
    for (int j = 0; j < 3; ++j) {
      auto r = sample_rollout(params, g.prompt, {}, rng);
      r.reward = verify(g.prompt, r.tokens);
      r.advantage = 0.0;
      g.rollouts.push_back(r);
    }
    groups.push_back(g);
  }
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      for (const auto& c : visited_contexts(params, g.prompt, r.tokens)) {
        auto& row = params.row(c);
        if (row[0] == 0.0) for (double& x : row) x = noise(rng);
      }
    }
  }
  for (const auto& g : groups) {
    for (const auto& r : g.rollouts) {
      for (auto& c : visited_contexts(params, g.prompt, r.tokens)) visited.push_back(std::move(c));
    }
  }
  const auto m = summarize_step(1, groups, params, GradientVector(18), {});
  CHECK(std::abs(m.entropy_mean - policy_entropy(params, visited)) < 1e-12);
}

TEST_CASE("conflict means") {
  std::vector<Group> groups{correct_group(2), correct_group(2)};
  std::vector<ConflictReport> reports(2);
  reports[0].interference_index = 0.2;
  reports[1].interference_index = 0.4;
  reports[0].cancellation_mass = 0.5;
  reports[1].cancellation_mass = 1.0;
  const auto m = summarize_step(1, groups, PolicyParams(Vocabulary{16}, {}), GradientVector(18), reports);
  CHECK(m.interference_index_mean == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(m.cancellation_mass_mean == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("masked fractions") {
  Group g = correct_group(4);
  g.rollouts[0].advantage = 1.0;
  g.rollouts[1].advantage = 1.0;
  g.rollouts[2].advantage = -1.0;
  g.rollouts[3].advantage = -1.0;
  MaskSet m;
  m.lambda_plus = {{0, 1}, {1, 0}};
  m.lambda_minus = {{2, 0}, {3, 0}};
  g.masks = m;
  std::vector<Group> groups{g};
  const auto s = summarize_step(1, groups, PolicyParams(Vocabulary{16}, {}), GradientVector(18), {});
  CHECK(s.masked_pos_fraction == 0.5);
  CHECK(s.masked_neg_fraction == 1.0);
  CHECK(s.zero_advantage_group_fraction == 0.0);
}

TEST_CASE("records round-trip") {
  StepMetrics m;
  m.step = 12;
  m.reward_mean = 0.1 + 0.2;
  m.entropy_mean = 1.0 / 3.0;
  m.grad_norm = 1e-300;
  m.corrupted_anchor_groups = 5;
  CHECK(step_metrics_from_json(nlohmann::json::parse(to_json(m).dump())) == m);
  m.wall_time = 2.5;
  CHECK(step_metrics_from_json(nlohmann::json::parse(to_json(m).dump())) == m);
  CHECK(metric_value(m, "reward_mean") == m.reward_mean);
  CHECK_THROWS(metric_value(m, "nope"));
  for (const auto& f : compared_metric_fields()) CHECK(to_json(m).contains(f));
}

TEST_CASE("run comparison") {
  const auto dir = temp_dir("compare");
  write_series(dir / "a.jsonl", 1, 120, 0.7);
  write_series(dir / "b.jsonl", 61, 200, 0.9);
  write_series(dir / "c.jsonl", 300, 310, 0.9);

  SUBCASE("self comparison") {
    const std::vector<fs::path> paths{dir / "a.jsonl", dir / "a.jsonl"};
    const auto t = compare_runs(paths);
    REQUIRE(t.runs.size() == 2);
    CHECK(t.runs[0] != t.runs[1]);
    CHECK(t.values[0] == t.values[1]);
    CHECK(t.tail_means[0] == t.tail_means[1]);
  }
  SUBCASE("alignment and tail means") {
    const std::vector<fs::path> paths{dir / "a.jsonl", dir / "b.jsonl"};
    const auto t = compare_runs(paths);
    CHECK(t.steps.front() == 61);
    CHECK(t.steps.back() == 120);
    const auto& fields = compared_metric_fields();
    const auto reward = static_cast<std::size_t>(
        std::find(fields.begin(), fields.end(), "reward_mean") - fields.begin());
    CHECK(t.tail_means[0][reward] == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(t.tail_means[1][reward] == doctest::Approx(0.9).epsilon(1e-15));
    std::ostringstream csv;
    write_comparison_csv(t, csv);
    CHECK(csv.str().rfind("step,", 0) == 0);
    CHECK(csv.str().find("summary_last_50_mean") != std::string::npos);
  }
  SUBCASE("disjoint ranges") {
    const std::vector<fs::path> paths{dir / "a.jsonl", dir / "c.jsonl"};
    CHECK_THROWS_AS(compare_runs(paths), Error);
  }
  SUBCASE("empty and malformed files name the file") {
    std::ofstream(dir / "empty.jsonl").close();
    {
      std::ofstream bad(dir / "bad.jsonl");
      bad << "{\"step\": 1}\n";
    }
    for (const char* name : {"empty.jsonl", "bad.jsonl"}) {
      const std::vector<fs::path> paths{dir / "a.jsonl", dir / name};
      try {
        compare_runs(paths);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(std::string(e.what()).find(name) != std::string::npos);
      }
    }
  }
  fs::remove_all(dir);
}
