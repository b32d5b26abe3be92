// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dagrpo {

using nlohmann::json;

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::grpo: return "grpo";
    case Algorithm::dr_grpo: return "dr_grpo";
    case Algorithm::dagrpo: return "dagrpo";
    case Algorithm::dagrpo_no_offpolicy: return "dagrpo_no_offpolicy";
  }
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  if (name == "grpo") return Algorithm::grpo;
  if (name == "dr_grpo") return Algorithm::dr_grpo;
  if (name == "dagrpo") return Algorithm::dagrpo;
  if (name == "dagrpo_no_offpolicy") return Algorithm::dagrpo_no_offpolicy;
  throw Error("unknown algorithm: " + name);
}

std::string to_string(MaskOverride o) { return o == MaskOverride::none ? "none" : "all_ones"; }

MaskOverride mask_override_from_string(const std::string& name) {
  if (name == "none") return MaskOverride::none;
  if (name == "all_ones") return MaskOverride::all_ones;
  throw Error("unknown mask override: " + name);
}

bool TrainConfig::uses_masks() const {
  return algorithm == Algorithm::dagrpo || algorithm == Algorithm::dagrpo_no_offpolicy;
}

int TrainConfig::anchors_per_group() const { return algorithm == Algorithm::dagrpo ? n_off : 0; }

AdvantageMode TrainConfig::advantage_mode() const {
  AdvantageMode m;
  m.epsilon_std = epsilon_std;
  switch (algorithm) {
    case Algorithm::grpo:
    case Algorithm::dagrpo_no_offpolicy: m.kind = AdvantageMode::Kind::grpo_standard; break;
    case Algorithm::dr_grpo: m.kind = AdvantageMode::Kind::dr_grpo; break;
    case Algorithm::dagrpo: m.kind = AdvantageMode::Kind::mixed; break;
  }
  return m;
}

ObjectiveConfig TrainConfig::effective_objective() const {
  ObjectiveConfig o = objective;
  if (algorithm == Algorithm::dr_grpo) o.length_normalize = false;
  return o;
}

EvalConfig TrainConfig::effective_eval() const {
  EvalConfig e = eval;
  if (e.levels.empty()) e.levels = task.chain_lengths;
  return e;
}

void TrainConfig::validate() const {
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, std::string(key) + ": " + msg); };
  if (group_size < 2) fail("group_size", "must be >= 2");
  if (n_off < 0 || n_off >= group_size) fail("n_off", "must satisfy 0 <= n_off < group_size");
  if (!(delta >= 0.0)) fail("delta", "must be >= 0");
  if (steps < 0) fail("steps", "must be >= 0");
  if (updates_per_step < 1) fail("updates_per_step", "must be >= 1");
  if (inner_epochs < 1) fail("inner_epochs", "must be >= 1");
  if (inner_epochs > 1 && objective.ratio_mode != RatioMode::exact) {
    fail("inner_epochs", "more than one epoch requires ratio_mode=exact");
  }
  if (!(optimizer.learning_rate > 0.0)) fail("learning_rate", "must be > 0");
  if (!(sampling.temperature > 0.0)) fail("temperature", "must be > 0");
  if (!(sampling.top_p > 0.0 && sampling.top_p <= 1.0)) fail("top_p", "must be in (0, 1]");
  if (sampling.max_len < 1) fail("max_len", "must be >= 1");
  if (!(eval.sampling.temperature > 0.0)) fail("eval_temperature", "must be > 0");
  if (!(eval.sampling.top_p > 0.0 && eval.sampling.top_p <= 1.0)) fail("eval_top_p", "must be in (0, 1]");
  if (!(objective.clip_epsilon > 0.0)) fail("clip_epsilon", "must be > 0");
  if (!(objective.kl_beta >= 0.0)) fail("kl_beta", "must be >= 0");
  if (!(epsilon_std > 0.0)) fail("epsilon_std", "must be > 0");
  if (task.modulus < 2) fail("modulus", "must be >= 2");
  if (task.chain_lengths.empty()) fail("chain_lengths", "must not be empty");
  for (int l : task.chain_lengths) {
    if (l < 1) fail("chain_lengths", "entries must be >= 1");
    if (2 * l + 1 > sampling.max_len) fail("max_len", "too short for the longest reference solution");
  }
  if (task.prompts_per_batch < 1) fail("prompts_per_step", "must be >= 1");
  if (!(task.noise_rate >= 0.0 && task.noise_rate <= 1.0)) fail("noise_rate", "must be in [0, 1]");
  if (policy.history_k < 2) fail("history_k", "must be >= 2");
  if (eval.prompts_per_level < 1) fail("eval_prompts", "must be >= 1");
  if (eval.k < 1) fail("eval_k", "must be >= 1");
  for (int l : eval.levels) {
    if (l < 1) fail("eval_levels", "entries must be >= 1");
  }
  if (eval_every < 0) fail("eval_every", "must be >= 0");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (dump_every < 0) fail("dump_every", "must be >= 0");
  if (threads < 0) fail("threads", "must be >= 0");
  if (external_judge.max_in_flight < 1) fail("judge_max_in_flight", "must be >= 1");
  if (external_judge.max_retries < 0) fail("judge_retries", "must be >= 0");
  if (!(external_judge.timeout_seconds > 0.0)) fail("judge_timeout", "must be > 0");
}

namespace {

double as_double(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    std::size_t used = 0;
    const auto s = v.get<std::string>();
    const double d = std::stod(s, &used);
    if (used != s.size()) throw Error("not a number: " + s);
    return d;
  }
  throw Error("expected a number");
}

long long as_int(const json& v) {
  if (v.is_number_integer()) return v.get<long long>();
  const double d = as_double(v);
  if (d != std::floor(d)) throw Error("expected an integer");
  return static_cast<long long>(d);
}

bool as_bool(const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
  }
  if (v.is_number_integer()) return v.get<int>() != 0;
  throw Error("expected a boolean");
}

std::string as_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::vector<int> as_int_list(const json& v) {
  std::vector<int> out;
  if (v.is_array()) {
    for (const auto& x : v) out.push_back(static_cast<int>(as_int(x)));
    return out;
  }
  if (v.is_number()) return {static_cast<int>(as_int(v))};
  std::stringstream ss(as_string(v));
  std::string piece;
  while (std::getline(ss, piece, ',')) {
    if (!piece.empty()) out.push_back(std::stoi(piece));
  }
  return out;
}

template <typename Get, typename Set>
ConfigKey key(std::string name, std::string type, std::string help, Get get, Set set) {
  return ConfigKey{std::move(name), std::move(type), std::move(help),
                   [set](TrainConfig& c, const json& v) { set(c, v); },
                   [get](const TrainConfig& c) { return json(get(c)); }};
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  k.push_back(key("algorithm", "string", "grpo | dr_grpo | dagrpo | dagrpo_no_offpolicy",
                  [](const TrainConfig& c) { return to_string(c.algorithm); },
                  [](TrainConfig& c, const json& v) { c.algorithm = algorithm_from_string(as_string(v)); }));
  k.push_back(key("group_size", "integer", "rollouts per group G (on-policy + anchors)",
                  [](const TrainConfig& c) { return c.group_size; },
                  [](TrainConfig& c, const json& v) { c.group_size = static_cast<int>(as_int(v)); }));
  k.push_back(key("n_off", "integer", "off-policy anchors per group (dagrpo only)",
                  [](const TrainConfig& c) { return c.n_off; },
                  [](TrainConfig& c, const json& v) { c.n_off = static_cast<int>(as_int(v)); }));
  k.push_back(key("delta", "number", "distinctiveness margin for the masks",
                  [](const TrainConfig& c) { return c.delta; },
                  [](TrainConfig& c, const json& v) { c.delta = as_double(v); }));
  k.push_back(key("steps", "integer", "training steps",
                  [](const TrainConfig& c) { return c.steps; },
                  [](TrainConfig& c, const json& v) { c.steps = static_cast<long>(as_int(v)); }));
  k.push_back(key("prompts_per_step", "integer", "prompts in each rollout batch",
                  [](const TrainConfig& c) { return c.task.prompts_per_batch; },
                  [](TrainConfig& c, const json& v) { c.task.prompts_per_batch = static_cast<int>(as_int(v)); }));
  k.push_back(key("updates_per_step", "integer", "prompts per optimizer update (update batch)",
                  [](const TrainConfig& c) { return c.updates_per_step; },
                  [](TrainConfig& c, const json& v) { c.updates_per_step = static_cast<int>(as_int(v)); }));
  k.push_back(key("inner_epochs", "integer", "passes over each rollout batch (exact ratio mode only)",
                  [](const TrainConfig& c) { return c.inner_epochs; },
                  [](TrainConfig& c, const json& v) { c.inner_epochs = static_cast<int>(as_int(v)); }));
  k.push_back(key("learning_rate", "number", "optimizer step size",
                  [](const TrainConfig& c) { return c.optimizer.learning_rate; },
                  [](TrainConfig& c, const json& v) { c.optimizer.learning_rate = as_double(v); }));
  k.push_back(key("optimizer", "string", "sgd | adam",
                  [](const TrainConfig& c) { return to_string(c.optimizer.kind); },
                  [](TrainConfig& c, const json& v) { c.optimizer.kind = optimizer_kind_from_string(as_string(v)); }));
  k.push_back(key("adam_beta1", "number", "Adam first-moment decay",
                  [](const TrainConfig& c) { return c.optimizer.beta1; },
                  [](TrainConfig& c, const json& v) { c.optimizer.beta1 = as_double(v); }));
  k.push_back(key("adam_beta2", "number", "Adam second-moment decay",
                  [](const TrainConfig& c) { return c.optimizer.beta2; },
                  [](TrainConfig& c, const json& v) { c.optimizer.beta2 = as_double(v); }));
  k.push_back(key("adam_eps", "number", "Adam denominator epsilon",
                  [](const TrainConfig& c) { return c.optimizer.eps; },
                  [](TrainConfig& c, const json& v) { c.optimizer.eps = as_double(v); }));
  k.push_back(key("temperature", "number", "training sampling temperature",
                  [](const TrainConfig& c) { return c.sampling.temperature; },
                  [](TrainConfig& c, const json& v) { c.sampling.temperature = as_double(v); }));
  k.push_back(key("top_p", "number", "training nucleus mass",
                  [](const TrainConfig& c) { return c.sampling.top_p; },
                  [](TrainConfig& c, const json& v) { c.sampling.top_p = as_double(v); }));
  k.push_back(key("max_len", "integer", "token budget per response (training and evaluation)",
                  [](const TrainConfig& c) { return c.sampling.max_len; },
                  [](TrainConfig& c, const json& v) {
                    c.sampling.max_len = static_cast<int>(as_int(v));
                    c.eval.sampling.max_len = c.sampling.max_len;
                  }));
  k.push_back(key("clip_epsilon", "number", "PPO clip range epsilon",
                  [](const TrainConfig& c) { return c.objective.clip_epsilon; },
                  [](TrainConfig& c, const json& v) { c.objective.clip_epsilon = as_double(v); }));
  k.push_back(key("kl_beta", "number", "KL penalty weight beta",
                  [](const TrainConfig& c) { return c.objective.kl_beta; },
                  [](TrainConfig& c, const json& v) { c.objective.kl_beta = as_double(v); }));
  k.push_back(key("length_normalize", "boolean", "divide each rollout term by its length (forced off for dr_grpo)",
                  [](const TrainConfig& c) { return c.objective.length_normalize; },
                  [](TrainConfig& c, const json& v) { c.objective.length_normalize = as_bool(v); }));
  k.push_back(key("ratio_mode", "string", "unit_approx | exact",
                  [](const TrainConfig& c) { return to_string(c.objective.ratio_mode); },
                  [](TrainConfig& c, const json& v) { c.objective.ratio_mode = ratio_mode_from_string(as_string(v)); }));
  k.push_back(key("epsilon_std", "number", "std below which normalized advantages are zero",
                  [](const TrainConfig& c) { return c.epsilon_std; },
                  [](TrainConfig& c, const json& v) { c.epsilon_std = as_double(v); }));
  k.push_back(key("judge_mode", "string", "oracle | external",
                  [](const TrainConfig& c) { return to_string(c.judge.mode); },
                  [](TrainConfig& c, const json& v) { c.judge.mode = judge_mode_from_string(as_string(v)); }));
  k.push_back(key("judge_fallback", "string", "on external judge failure: oracle | abort",
                  [](const TrainConfig& c) { return to_string(c.judge.fallback); },
                  [](TrainConfig& c, const json& v) { c.judge.fallback = judge_fallback_from_string(as_string(v)); }));
  k.push_back(key("judge_model", "string", "model name sent to the external judge",
                  [](const TrainConfig& c) { return c.external_judge.model; },
                  [](TrainConfig& c, const json& v) { c.external_judge.model = as_string(v); }));
  k.push_back(key("judge_timeout", "number", "seconds per judge request, retries included",
                  [](const TrainConfig& c) { return c.external_judge.timeout_seconds; },
                  [](TrainConfig& c, const json& v) { c.external_judge.timeout_seconds = as_double(v); }));
  k.push_back(key("judge_retries", "integer", "retries after a failed judge request",
                  [](const TrainConfig& c) { return c.external_judge.max_retries; },
                  [](TrainConfig& c, const json& v) { c.external_judge.max_retries = static_cast<int>(as_int(v)); }));
  k.push_back(key("judge_max_in_flight", "integer", "concurrent judge requests",
                  [](const TrainConfig& c) { return c.external_judge.max_in_flight; },
                  [](TrainConfig& c, const json& v) { c.external_judge.max_in_flight = static_cast<int>(as_int(v)); }));
  k.push_back(key("judge_cache", "string", "score cache file (empty: <out>/judge_cache.jsonl)",
                  [](const TrainConfig& c) { return c.external_judge.cache_path.string(); },
                  [](TrainConfig& c, const json& v) { c.external_judge.cache_path = as_string(v); }));
  k.push_back(key("modulus", "integer", "arithmetic modulus M (vocabulary is M + 2)",
                  [](const TrainConfig& c) { return c.task.modulus; },
                  [](TrainConfig& c, const json& v) { c.task.modulus = static_cast<int>(as_int(v)); }));
  k.push_back(key("chain_lengths", "integer list", "chain lengths L drawn uniformly for training prompts",
                  [](const TrainConfig& c) { return c.task.chain_lengths; },
                  [](TrainConfig& c, const json& v) { c.task.chain_lengths = as_int_list(v); }));
  k.push_back(key("noise_rate", "number", "probability that a demonstration is corrupted",
                  [](const TrainConfig& c) { return c.task.noise_rate; },
                  [](TrainConfig& c, const json& v) { c.task.noise_rate = as_double(v); }));
  k.push_back(key("corruption", "string", "corrupted token: any | final",
                  [](const TrainConfig& c) { return to_string(c.task.corruption); },
                  [](TrainConfig& c, const json& v) { c.task.corruption = corruption_target_from_string(as_string(v)); }));
  k.push_back(key("history_k", "integer", "tokens of history in each policy context",
                  [](const TrainConfig& c) { return c.policy.history_k; },
                  [](TrainConfig& c, const json& v) { c.policy.history_k = static_cast<int>(as_int(v)); }));
  k.push_back(key("context_view", "string", "chain_state | full_prompt",
                  [](const TrainConfig& c) { return to_string(c.policy.view); },
                  [](TrainConfig& c, const json& v) { c.policy.view = context_view_from_string(as_string(v)); }));
  k.push_back(key("mask_override", "string", "none | all_ones",
                  [](const TrainConfig& c) { return to_string(c.mask_override); },
                  [](TrainConfig& c, const json& v) { c.mask_override = mask_override_from_string(as_string(v)); }));
  k.push_back(key("seed", "integer", "experiment seed",
                  [](const TrainConfig& c) { return c.seed; },
                  [](TrainConfig& c, const json& v) { c.seed = static_cast<std::uint64_t>(as_int(v)); }));
  k.push_back(key("threads", "integer", "worker threads for rollout collection (0: runtime default)",
                  [](const TrainConfig& c) { return c.threads; },
                  [](TrainConfig& c, const json& v) { c.threads = static_cast<int>(as_int(v)); }));
  k.push_back(key("eval_levels", "integer list", "chain lengths evaluated (empty: training lengths)",
                  [](const TrainConfig& c) { return c.eval.levels; },
                  [](TrainConfig& c, const json& v) { c.eval.levels = as_int_list(v); }));
  k.push_back(key("eval_prompts", "integer", "held-out prompts per evaluated chain length",
                  [](const TrainConfig& c) { return c.eval.prompts_per_level; },
                  [](TrainConfig& c, const json& v) { c.eval.prompts_per_level = static_cast<int>(as_int(v)); }));
  k.push_back(key("eval_k", "integer", "samples per prompt for avg@k",
                  [](const TrainConfig& c) { return c.eval.k; },
                  [](TrainConfig& c, const json& v) { c.eval.k = static_cast<int>(as_int(v)); }));
  k.push_back(key("eval_temperature", "number", "evaluation sampling temperature",
                  [](const TrainConfig& c) { return c.eval.sampling.temperature; },
                  [](TrainConfig& c, const json& v) { c.eval.sampling.temperature = as_double(v); }));
  k.push_back(key("eval_top_p", "number", "evaluation nucleus mass",
                  [](const TrainConfig& c) { return c.eval.sampling.top_p; },
                  [](TrainConfig& c, const json& v) { c.eval.sampling.top_p = as_double(v); }));
  k.push_back(key("eval_seed", "integer", "seed of the held-out evaluation prompts",
                  [](const TrainConfig& c) { return c.eval.seed; },
                  [](TrainConfig& c, const json& v) { c.eval.seed = static_cast<std::uint64_t>(as_int(v)); }));
  k.push_back(key("eval_every", "integer", "steps between evaluations (0: initial and final only)",
                  [](const TrainConfig& c) { return c.eval_every; },
                  [](TrainConfig& c, const json& v) { c.eval_every = static_cast<int>(as_int(v)); }));
  k.push_back(key("checkpoint_every", "integer", "steps between checkpoints (0: final only)",
                  [](const TrainConfig& c) { return c.checkpoint_every; },
                  [](TrainConfig& c, const json& v) { c.checkpoint_every = static_cast<int>(as_int(v)); }));
  k.push_back(key("dump_every", "integer", "steps between rollout dumps (0: first step only)",
                  [](const TrainConfig& c) { return c.dump_every; },
                  [](TrainConfig& c, const json& v) { c.dump_every = static_cast<int>(as_int(v)); }));
  k.push_back(key("conflict_metrics", "boolean", "compute interference and cancellation every step",
                  [](const TrainConfig& c) { return c.conflict_metrics; },
                  [](TrainConfig& c, const json& v) { c.conflict_metrics = as_bool(v); }));
  k.push_back(key("log_wall_time", "boolean", "write wall_time into metrics.jsonl (breaks byte-identical reruns)",
                  [](const TrainConfig& c) { return c.log_wall_time; },
                  [](TrainConfig& c, const json& v) { c.log_wall_time = as_bool(v); }));
  return k;
}

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void set_key(TrainConfig& cfg, const std::string& name, const json& value) {
  const auto* k = find_key(name);
  if (!k) throw ConfigError(name, "unknown config key: " + name);
  try {
    k->set(cfg, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(name, name + ": invalid value " + value.dump() + " (" + e.what() + ")");
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

void apply_config_json(TrainConfig& cfg, const json& doc) {
  if (!doc.is_object()) throw ConfigError("", "config document must be a JSON object");
  for (const auto& [name, value] : doc.items()) {
    if (!name.empty() && name[0] == '$') continue;  // "$schema", "$comment"
    set_key(cfg, name, value);
  }
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(assignment, "override must look like KEY=VALUE: " + assignment);
  }
  const auto name = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set_key(cfg, name, value);
}

TrainConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config file: " + path.string());
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config", "config file is not valid JSON: " + path.string());
  return config_from_json(doc);
}

json config_to_json(const TrainConfig& cfg) {
  json out = json::object();
  for (const auto& k : config_keys()) out[k.name] = k.get(cfg);
  return out;
}

TrainConfig config_from_json(const json& doc) {
  TrainConfig cfg;
  apply_config_json(cfg, doc);
  return cfg;
}

json config_schema() {
  static const TrainConfig defaults;
  json props = json::object();
  for (const auto& k : config_keys()) {
    json p = {{"description", k.help}, {"default", k.get(defaults)}};
    if (k.type == "integer list") {
      p["type"] = "array";
      p["items"] = {{"type", "integer"}};
    } else {
      p["type"] = k.type;
    }
    props[k.name] = p;
  }
  return {{"$schema", "https://json-schema.org/draft/2020-12/schema"},
          {"title", "dagrpo training configuration"},
          {"type", "object"},
          {"additionalProperties", false},
          {"properties", props}};
}

}  // namespace dagrpo
