// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/records.hpp"

#include <fstream>

namespace dagrpo {

using nlohmann::json;

namespace {

template <typename T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from_json(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

json prompt_to_json(const Prompt& prompt) {
  json ops = json::array();
  for (const auto& op : prompt.operations) ops.push_back(json::array({to_string(op.code), op.operand}));
  return {{"start_value", prompt.start_value},
          {"operations", ops},
          {"modulus", prompt.modulus},
          {"difficulty", prompt.difficulty()}};
}

Prompt prompt_from_json(const json& j) {
  Prompt p;
  p.start_value = j.at("start_value").get<int>();
  p.modulus = j.at("modulus").get<int>();
  for (const auto& op : j.at("operations")) {
    p.operations.push_back({op_code_from_string(op.at(0).get<std::string>()), op.at(1).get<int>()});
  }
  if (j.contains("difficulty") && j.at("difficulty").get<int>() != p.difficulty()) {
    throw Error("prompt record: difficulty does not match operation count");
  }
  if (p.modulus < 2 || p.start_value < 0 || p.start_value >= p.modulus) {
    throw Error("prompt record: value out of range");
  }
  return p;
}

json rollout_to_json(const Rollout& r) {
  return {{"prompt_id", r.prompt_id},
          {"tokens", r.tokens},
          {"origin", to_string(r.origin)},
          {"behavior_logprobs", optional_to_json(r.behavior_logprobs)},
          {"reward", optional_to_json(r.reward)},
          {"judge_score", optional_to_json(r.judge_score)},
          {"advantage", optional_to_json(r.advantage)}};
}

Rollout rollout_from_json(const json& j) {
  Rollout r;
  r.prompt_id = j.at("prompt_id").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<Token>>();
  r.origin = origin_from_string(j.at("origin").get<std::string>());
  r.behavior_logprobs = optional_from_json<std::vector<double>>(j, "behavior_logprobs");
  r.reward = optional_from_json<int>(j, "reward");
  r.judge_score = optional_from_json<double>(j, "judge_score");
  r.advantage = optional_from_json<double>(j, "advantage");
  if (r.judge_score && !(*r.judge_score >= 1.0 && *r.judge_score <= 10.0)) {
    throw Error("rollout record: judge_score outside [1, 10]");
  }
  return r;
}

json masks_to_json(const MaskSet& m) {
  json plus = json::object(), minus = json::object();
  for (const auto& [i, v] : m.lambda_plus) plus[std::to_string(i)] = v;
  for (const auto& [i, v] : m.lambda_minus) minus[std::to_string(i)] = v;
  return {{"lambda_plus", plus},
          {"lambda_minus", minus},
          {"s_max_neg", optional_to_json(m.s_max_neg)},
          {"s_min_pos", optional_to_json(m.s_min_pos)},
          {"delta", m.delta}};
}

MaskSet masks_from_json(const json& j) {
  MaskSet m;
  for (const auto& [k, v] : j.at("lambda_plus").items()) m.lambda_plus[std::stoul(k)] = v.get<int>();
  for (const auto& [k, v] : j.at("lambda_minus").items()) m.lambda_minus[std::stoul(k)] = v.get<int>();
  m.s_max_neg = optional_from_json<double>(j, "s_max_neg");
  m.s_min_pos = optional_from_json<double>(j, "s_min_pos");
  m.delta = j.at("delta").get<double>();
  return m;
}

json group_to_json(const Group& group, long step) {
  json rollouts = json::array();
  for (const auto& r : group.rollouts) rollouts.push_back(rollout_to_json(r));
  return {{"step", step},
          {"prompt", prompt_to_json(group.prompt)},
          {"rollouts", rollouts},
          {"masks", group.masks ? masks_to_json(*group.masks) : json(nullptr)}};
}

Group group_from_json(const json& j) {
  Group g;
  g.prompt = prompt_from_json(j.at("prompt"));
  for (const auto& r : j.at("rollouts")) g.rollouts.push_back(rollout_from_json(r));
  if (j.contains("masks") && !j.at("masks").is_null()) g.masks = masks_from_json(j.at("masks"));
  return g;
}

std::vector<GroupRecord> read_group_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open group dump: " + path.string());
  std::vector<GroupRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.value("step", 0L), group_from_json(j)});
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Group> read_group_dump(const std::filesystem::path& path) {
  std::vector<Group> out;
  for (auto& r : read_group_records(path)) out.push_back(std::move(r.group));
  return out;
}

}  // namespace dagrpo
