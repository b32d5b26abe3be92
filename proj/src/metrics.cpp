// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "dagrpo/tasks.hpp"

namespace dagrpo {

using nlohmann::json;

const std::vector<std::string>& step_metric_fields() {
  static const std::vector<std::string> f = {
      "step", "reward_mean", "response_length_mean", "entropy_mean", "grad_norm",
      "masked_pos_fraction", "masked_neg_fraction", "zero_advantage_group_fraction",
      "interference_index_mean", "cancellation_mass_mean", "anchor_reward_mean",
      "corrupted_anchor_groups", "corrupted_anchor_kept", "judge_fallbacks", "wall_time"};
  return f;
}

const std::vector<std::string>& compared_metric_fields() {
  static const std::vector<std::string> f = {
      "reward_mean", "response_length_mean", "entropy_mean", "grad_norm",
      "masked_pos_fraction", "masked_neg_fraction", "zero_advantage_group_fraction",
      "interference_index_mean", "cancellation_mass_mean"};
  return f;
}

json to_json(const StepMetrics& m) {
  json j = {{"step", m.step},
            {"reward_mean", m.reward_mean},
            {"response_length_mean", m.response_length_mean},
            {"entropy_mean", m.entropy_mean},
            {"grad_norm", m.grad_norm},
            {"masked_pos_fraction", m.masked_pos_fraction},
            {"masked_neg_fraction", m.masked_neg_fraction},
            {"zero_advantage_group_fraction", m.zero_advantage_group_fraction},
            {"interference_index_mean", m.interference_index_mean},
            {"cancellation_mass_mean", m.cancellation_mass_mean},
            {"anchor_reward_mean", m.anchor_reward_mean},
            {"corrupted_anchor_groups", m.corrupted_anchor_groups},
            {"corrupted_anchor_kept", m.corrupted_anchor_kept},
            {"judge_fallbacks", m.judge_fallbacks}};
  if (m.wall_time) j["wall_time"] = *m.wall_time;
  return j;
}

StepMetrics step_metrics_from_json(const json& j) {
  StepMetrics m;
  m.step = j.at("step").get<long>();
  m.reward_mean = j.at("reward_mean").get<double>();
  m.response_length_mean = j.at("response_length_mean").get<double>();
  m.entropy_mean = j.at("entropy_mean").get<double>();
  m.grad_norm = j.at("grad_norm").get<double>();
  m.masked_pos_fraction = j.at("masked_pos_fraction").get<double>();
  m.masked_neg_fraction = j.at("masked_neg_fraction").get<double>();
  m.zero_advantage_group_fraction = j.at("zero_advantage_group_fraction").get<double>();
  m.interference_index_mean = j.at("interference_index_mean").get<double>();
  m.cancellation_mass_mean = j.at("cancellation_mass_mean").get<double>();
  m.anchor_reward_mean = j.at("anchor_reward_mean").get<double>();
  m.corrupted_anchor_groups = j.at("corrupted_anchor_groups").get<long>();
  m.corrupted_anchor_kept = j.at("corrupted_anchor_kept").get<long>();
  m.judge_fallbacks = j.at("judge_fallbacks").get<long>();
  if (j.contains("wall_time")) m.wall_time = j.at("wall_time").get<double>();
  return m;
}

double metric_value(const StepMetrics& m, const std::string& field) {
  if (field == "step") return static_cast<double>(m.step);
  if (field == "reward_mean") return m.reward_mean;
  if (field == "response_length_mean") return m.response_length_mean;
  if (field == "entropy_mean") return m.entropy_mean;
  if (field == "grad_norm") return m.grad_norm;
  if (field == "masked_pos_fraction") return m.masked_pos_fraction;
  if (field == "masked_neg_fraction") return m.masked_neg_fraction;
  if (field == "zero_advantage_group_fraction") return m.zero_advantage_group_fraction;
  if (field == "interference_index_mean") return m.interference_index_mean;
  if (field == "cancellation_mass_mean") return m.cancellation_mass_mean;
  if (field == "anchor_reward_mean") return m.anchor_reward_mean;
  if (field == "corrupted_anchor_groups") return static_cast<double>(m.corrupted_anchor_groups);
  if (field == "corrupted_anchor_kept") return static_cast<double>(m.corrupted_anchor_kept);
  if (field == "judge_fallbacks") return static_cast<double>(m.judge_fallbacks);
  if (field == "wall_time") return m.wall_time.value_or(0.0);
  throw Error("unknown metric: " + field);
}

StepMetrics summarize_step(long step, std::span<const Group> groups, const PolicyParams& sampling_params,
                           const GradientVector& gradient, std::span<const ConflictReport> reports) {
  StepMetrics m;
  m.step = step;
  m.grad_norm = gradient.norm();

  double reward_sum = 0.0, length_sum = 0.0, entropy_sum = 0.0;
  double anchor_reward_sum = 0.0;
  std::size_t on_count = 0, anchor_count = 0, contexts = 0;
  std::size_t positives = 0, negatives = 0, masked_pos = 0, masked_neg = 0, zero_groups = 0;

  for (const auto& g : groups) {
    bool all_zero = true;
    bool clean_positive = false;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& r = g.rollouts[i];
      const double a = r.advantage.value_or(0.0);
      all_zero = all_zero && a == 0.0;
      if (r.origin == Origin::off_policy) {
        anchor_reward_sum += r.reward.value_or(0);
        ++anchor_count;
        continue;
      }
      reward_sum += r.reward.value_or(0);
      length_sum += static_cast<double>(r.tokens.size());
      ++on_count;
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const auto ctx = context_at(sampling_params, g.prompt, std::span<const Token>(r.tokens.data(), t));
        entropy_sum += entropy(softmax_row(sampling_params, ctx));
        ++contexts;
      }
      if (a > 0.0 && r.reward.value_or(0) == 1 && step_fraction(g.prompt, r.tokens) == 1.0) {
        clean_positive = true;
      }
    }
    zero_groups += all_zero ? 1 : 0;

    for (std::size_t i = 0; i < g.size(); ++i) {
      const double a = g.rollouts[i].advantage.value_or(0.0);
      const int lambda = g.masks ? g.masks->lambda(i) : 1;
      if (a > 0.0) {
        ++positives;
        masked_pos += lambda == 0 ? 1 : 0;
      } else if (a < 0.0) {
        ++negatives;
        masked_neg += lambda == 0 ? 1 : 0;
      }
    }

    if (clean_positive) {
      const auto reference = reference_solution(g.prompt);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& r = g.rollouts[i];
        if (r.origin != Origin::off_policy || r.tokens == reference) continue;
        ++m.corrupted_anchor_groups;
        const bool kept = r.advantage.value_or(0.0) > 0.0 && (!g.masks || g.masks->lambda(i) == 1);
        m.corrupted_anchor_kept += kept ? 1 : 0;
        break;
      }
    }
  }

  auto ratio = [](double num, std::size_t den) { return den ? num / static_cast<double>(den) : 0.0; };
  m.reward_mean = ratio(reward_sum, on_count);
  m.response_length_mean = ratio(length_sum, on_count);
  m.entropy_mean = ratio(entropy_sum, contexts);
  m.anchor_reward_mean = ratio(anchor_reward_sum, anchor_count);
  m.masked_pos_fraction = ratio(static_cast<double>(masked_pos), positives);
  m.masked_neg_fraction = ratio(static_cast<double>(masked_neg), negatives);
  m.zero_advantage_group_fraction = ratio(static_cast<double>(zero_groups), groups.size());

  double ii = 0.0, cm = 0.0;
  for (const auto& r : reports) {
    ii += r.interference_index;
    cm += r.cancellation_mass;
  }
  m.interference_index_mean = ratio(ii, reports.size());
  m.cancellation_mass_mean = ratio(cm, reports.size());
  return m;
}

std::vector<StepMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open metrics file: " + path.string());
  std::vector<StepMetrics> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(step_metrics_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": schema mismatch (" + e.what() + ")");
    }
  }
  if (out.empty()) throw Error(path.string() + ": no metrics records");
  return out;
}

ComparisonTable compare_runs(std::span<const std::filesystem::path> paths, int tail) {
  if (paths.size() < 2) throw Error("compare_runs: need at least two runs");
  std::vector<RunSeries> runs;
  std::map<std::string, int> name_uses;
  for (const auto& p : paths) {
    RunSeries s;
    s.source = std::filesystem::is_directory(p) ? p / "metrics.jsonl" : p;
    std::string base = std::filesystem::is_directory(p) ? p.filename().string() : p.stem().string();
    if (base.empty()) base = p.parent_path().filename().string();
    const int n = ++name_uses[base];
    s.name = n == 1 ? base : base + "#" + std::to_string(n);
    s.records = read_metrics(s.source);
    runs.push_back(std::move(s));
  }

  std::set<long> shared;
  for (const auto& r : runs.front().records) shared.insert(r.step);
  for (std::size_t i = 1; i < runs.size(); ++i) {
    std::set<long> mine;
    for (const auto& r : runs[i].records) mine.insert(r.step);
    std::set<long> both;
    std::set_intersection(shared.begin(), shared.end(), mine.begin(), mine.end(),
                          std::inserter(both, both.begin()));
    if (both.empty()) {
      throw Error("compare_runs: " + runs[i].source.string() + " shares no steps with " +
                  runs.front().source.string());
    }
    shared = std::move(both);
  }

  ComparisonTable t;
  t.tail = tail;
  t.steps.assign(shared.begin(), shared.end());
  const auto& fields = compared_metric_fields();
  for (const auto& run : runs) {
    t.runs.push_back(run.name);
    std::map<long, const StepMetrics*> by_step;
    for (const auto& r : run.records) by_step[r.step] = &r;
    std::vector<std::vector<double>> cols(fields.size());
    for (long s : t.steps) {
      for (std::size_t f = 0; f < fields.size(); ++f) cols[f].push_back(metric_value(*by_step.at(s), fields[f]));
    }
    std::vector<double> means;
    const std::size_t n = t.steps.size();
    const std::size_t from = n > static_cast<std::size_t>(tail) ? n - static_cast<std::size_t>(tail) : 0;
    for (const auto& col : cols) {
      double sum = 0.0;
      for (std::size_t i = from; i < n; ++i) sum += col[i];
      means.push_back(sum / static_cast<double>(n - from));
    }
    t.values.push_back(std::move(cols));
    t.tail_means.push_back(std::move(means));
  }
  return t;
}

void write_comparison_csv(const ComparisonTable& t, std::ostream& out) {
  const auto& fields = compared_metric_fields();
  out << "step";
  for (const auto& run : t.runs) {
    for (const auto& f : fields) out << ',' << run << ':' << f;
  }
  out << '\n';
  for (std::size_t row = 0; row < t.steps.size(); ++row) {
    out << t.steps[row];
    for (std::size_t r = 0; r < t.runs.size(); ++r) {
      for (std::size_t f = 0; f < fields.size(); ++f) out << ',' << json(t.values[r][f][row]).dump();
    }
    out << '\n';
  }
  out << '\n' << "summary_last_" << t.tail << "_mean";
  for (const auto& run : t.runs) out << ',' << run;
  out << '\n';
  for (std::size_t f = 0; f < fields.size(); ++f) {
    out << fields[f];
    for (std::size_t r = 0; r < t.runs.size(); ++r) out << ',' << json(t.tail_means[r][f]).dump();
    out << '\n';
  }
}

}  // namespace dagrpo
