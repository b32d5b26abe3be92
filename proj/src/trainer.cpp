// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/trainer.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dagrpo/records.hpp"

namespace dagrpo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename F>
void for_each_index(std::size_t n, Execution exec, int threads, F&& f) {
  if (exec == Execution::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const int nt = threads > 0 ? threads : omp_get_max_threads();
  const auto count = static_cast<long>(n);
#pragma omp parallel for num_threads(nt) schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) {
    try {
      f(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

auto u64(long v) { return static_cast<std::uint64_t>(v); }

Group collect_one(const PolicyParams& params, const TrainConfig& cfg, long step, std::size_t index) {
  auto prompt_rng = derive_stream(cfg.seed, StreamPurpose::prompt, {u64(step), index});
  Group g;
  g.prompt = generate_prompt(cfg.task, prompt_rng);

  auto rollout_rng = derive_stream(cfg.seed, StreamPurpose::rollout, {u64(step), index});
  for (int k = 0; k < cfg.on_policy_per_group(); ++k) {
    auto r = sample_rollout(params, g.prompt, cfg.sampling, rollout_rng);
    r.reward = verify(g.prompt, r.tokens);
    g.rollouts.push_back(std::move(r));
  }
  if (cfg.anchors_per_group() > 0) {
    auto anchor_rng = derive_stream(cfg.seed, StreamPurpose::anchor, {u64(step), index});
    std::vector<Rollout> anchors;
    for (int k = 0; k < cfg.anchors_per_group(); ++k) {
      auto a = demonstrate(g.prompt, cfg.task, anchor_rng);
      a.reward = verify(g.prompt, a.tokens);
      anchors.push_back(std::move(a));
    }
    g = mix_groups(std::move(g), anchors);
  }
  return g;
}

GradientVector group_gradient(const Group& g, const PolicyParams& params, const PolicyParams& params_old,
                              const PolicyParams& reference, const TrainConfig& cfg) {
  const auto obj = cfg.effective_objective();
  const MaskSet* masks = g.masks ? &*g.masks : nullptr;
  if (obj.ratio_mode == RatioMode::exact) {
    return clipped_surrogate(g, params, params_old, reference, obj, masks).gradient;
  }
  if (obj.kl_beta > 0.0) {
    return clipped_surrogate(g, params, params, reference, obj, masks).gradient;
  }
  return masks ? dagrpo_gradient(g, *masks, params, obj) : grpo_gradient(g, params, obj);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

/// Keeps the records of a JSONL file whose "step" is <= max_step (resume support).
void truncate_jsonl(const fs::path& path, long max_step) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::ostringstream kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    if (j.at("step").get<long>() <= max_step) kept << line << '\n';
  }
  in.close();
  write_text(path, kept.str());
}

class JsonlWriter {
 public:
  JsonlWriter(fs::path path, bool append) : path_(std::move(path)) {
    out_.open(path_, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw Error("cannot open " + path_.string());
  }
  void write(const json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw Error("write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string checkpoint_name(long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06ld", step);
  return buf;
}

}  // namespace

std::string to_string(Execution e) { return e == Execution::serial ? "serial" : "parallel"; }

TrainState initial_state(const TrainConfig& cfg) {
  TrainState s;
  s.params = PolicyParams(Vocabulary{cfg.task.modulus}, cfg.policy);
  s.reference = s.params;
  s.optimizer = Optimizer(cfg.optimizer);
  s.seed = cfg.seed;
  return s;
}

std::vector<Group> collect_groups(const PolicyParams& params, const TrainConfig& cfg, long step,
                                  Execution exec) {
  const auto n = static_cast<std::size_t>(cfg.task.prompts_per_batch);
  std::vector<Group> groups(n);
  for_each_index(n, exec, cfg.threads, [&](std::size_t i) { groups[i] = collect_one(params, cfg, step, i); });
  return groups;
}

std::vector<Group> prepare_groups(std::vector<Group> groups, const TrainConfig& cfg, Execution exec,
                                  ExternalJudge* external, int* fallbacks) {
  const bool judged = cfg.uses_judge();
  const bool external_mode = judged && cfg.judge.mode == JudgeMode::external;
  if (external_mode) {
    for (auto& g : groups) g = score_group(std::move(g), cfg.judge, external, fallbacks);
  }
  const auto mode = cfg.advantage_mode();
  for_each_index(groups.size(), exec, cfg.threads, [&](std::size_t i) {
    auto& g = groups[i];
    if (judged && !external_mode) g = score_group(std::move(g), cfg.judge);
    g = compute_advantages(std::move(g), mode);
    if (cfg.uses_masks()) {
      const auto part = partition(g);
      g.masks = cfg.mask_override == MaskOverride::all_ones ? all_ones_masks(part, cfg.delta)
                                                             : compute_masks(g, part, cfg.delta);
    }
  });
  return groups;
}

GradientVector batch_gradient(const std::vector<Group>& groups, std::size_t begin, std::size_t end,
                              const PolicyParams& params, const PolicyParams& params_old,
                              const PolicyParams& reference, const TrainConfig& cfg, Execution exec) {
  if (begin >= end || end > groups.size()) throw Error("batch_gradient: empty or out-of-range batch");
  std::vector<GradientVector> parts(end - begin);
  for_each_index(parts.size(), exec, cfg.threads, [&](std::size_t i) {
    parts[i] = group_gradient(groups[begin + i], params, params_old, reference, cfg);
  });
  GradientVector total(params.vocab_size());
  for (const auto& p : parts) total.add_scaled(p, 1.0);
  total.scale(1.0 / static_cast<double>(parts.size()));
  return total;
}

std::vector<ConflictReport> conflict_reports(const std::vector<Group>& groups, const PolicyParams& params,
                                             const TrainConfig& cfg, Execution exec) {
  const auto obj = cfg.effective_objective();
  std::vector<ConflictReport> out(groups.size());
  for_each_index(groups.size(), exec, cfg.threads, [&](std::size_t i) {
    const auto& g = groups[i];
    out[i] = g.masks ? conflict_report(retained_subgroup(g, *g.masks), params, obj)
                     : conflict_report(g, params, obj);
  });
  return out;
}

StepResult train_step(TrainState& state, const TrainConfig& cfg, Execution exec, ExternalJudge* external) {
  const long step = state.step + 1;
  int fallbacks = 0;
  auto groups = collect_groups(state.params, cfg, step, exec);
  groups = prepare_groups(std::move(groups), cfg, exec, external, &fallbacks);

  const PolicyParams sampling = state.params;
  std::vector<ConflictReport> reports;
  if (cfg.conflict_metrics) reports = conflict_reports(groups, sampling, cfg, exec);

  const bool exact = cfg.effective_objective().ratio_mode == RatioMode::exact;
  const int epochs = exact ? cfg.inner_epochs : 1;
  const auto batch = static_cast<std::size_t>(cfg.updates_per_step);
  GradientVector applied(state.params.vocab_size());
  int updates = 0;
  for (std::size_t begin = 0; begin < groups.size(); begin += batch) {
    const std::size_t end = std::min(groups.size(), begin + batch);
    for (int e = 0; e < epochs; ++e) {
      auto g = batch_gradient(groups, begin, end, state.params, sampling, state.reference, cfg, exec);
      if (!g.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite gradient at step " << step << ", prompts [" << begin << ", " << end << "), epoch "
            << e;
        throw TrainingAborted(msg.str());
      }
      state.optimizer.step(state.params, g);
      applied.add_scaled(g, 1.0);
      ++updates;
    }
  }
  applied.scale(1.0 / static_cast<double>(updates));
  state.step = step;

  StepResult result;
  result.metrics = summarize_step(step, groups, sampling, applied, reports);
  result.metrics.judge_fallbacks = fallbacks;
  result.groups = std::move(groups);
  result.reports = std::move(reports);
  return result;
}

const LevelReport& EvalReport::level(int chain_length) const {
  for (const auto& l : levels) {
    if (l.chain_length == chain_length) return l;
  }
  throw Error("evaluation has no level L=" + std::to_string(chain_length));
}

EvalReport evaluate(const PolicyParams& params, const EvalConfig& eval_cfg, int modulus, Execution exec,
                    int threads) {
  if (eval_cfg.levels.empty()) throw Error("evaluate: no chain lengths");
  EvalReport report;
  for (int level : eval_cfg.levels) {
    TaskConfig task;
    task.modulus = modulus;
    task.chain_lengths = {level};
    const auto n = static_cast<std::size_t>(eval_cfg.prompts_per_level);
    const auto k = static_cast<std::size_t>(eval_cfg.k);
    std::vector<int> first(n, 0), total(n, 0);
    for_each_index(n, exec, threads, [&](std::size_t i) {
      auto prompt_rng = derive_stream(eval_cfg.seed, StreamPurpose::eval_prompt, {u64(level), i});
      const auto prompt = generate_prompt(task, level, prompt_rng);
      for (std::size_t j = 0; j < k; ++j) {
        auto rng = derive_stream(eval_cfg.seed, StreamPurpose::eval_rollout, {u64(level), i, j});
        const int ok = verify(prompt, sample_rollout(params, prompt, eval_cfg.sampling, rng).tokens);
        if (j == 0) first[i] = ok;
        total[i] += ok;
      }
    });
    LevelReport lr;
    lr.chain_length = level;
    lr.prompts = eval_cfg.prompts_per_level;
    lr.k = eval_cfg.k;
    double p1 = 0.0, avg = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p1 += first[i];
      avg += static_cast<double>(total[i]) / static_cast<double>(k);
    }
    lr.pass_at_1 = p1 / static_cast<double>(n);
    lr.avg_at_k = avg / static_cast<double>(n);
    report.levels.push_back(lr);
  }
  return report;
}

json to_json(const EvalReport& report) {
  json levels = json::array();
  for (const auto& l : report.levels) {
    levels.push_back({{"chain_length", l.chain_length},
                      {"prompts", l.prompts},
                      {"pass_at_1", l.pass_at_1},
                      {"avg_at_k", l.avg_at_k},
                      {"k", l.k}});
  }
  return {{"step", report.step}, {"levels", levels}};
}

EvalReport eval_report_from_json(const json& j) {
  EvalReport r;
  r.step = j.at("step").get<long>();
  for (const auto& l : j.at("levels")) {
    r.levels.push_back({l.at("chain_length").get<int>(), l.at("prompts").get<int>(), l.at("pass_at_1").get<double>(),
                        l.at("avg_at_k").get<double>(), l.at("k").get<int>()});
  }
  return r;
}

void save_checkpoint(const TrainState& state, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ostringstream os;
    save_params(state.params, os);
    write_text(dir / "policy.txt", os.str());
  }
  const json sidecar = {{"format", "dagrpo-state v1"},
                        {"step", state.step},
                        {"seed", state.seed},
                        {"rng", {{"seed", state.seed}, {"next_step", state.step + 1}}},
                        {"optimizer", state.optimizer.state_to_json()}};
  write_text(dir / "state.json", sidecar.dump() + "\n");
}

TrainState load_checkpoint(const fs::path& dir, const TrainConfig& cfg) {
  std::ifstream pin(dir / "policy.txt");
  if (!pin) throw Error("cannot open " + (dir / "policy.txt").string());
  std::ifstream sin(dir / "state.json");
  if (!sin) throw Error("cannot open " + (dir / "state.json").string());

  TrainState s = initial_state(cfg);
  s.params = load_params(pin);
  if (!(s.params.vocab() == s.reference.vocab()) || !(s.params.shape() == s.reference.shape())) {
    throw Error(dir.string() + ": checkpoint policy shape does not match the configuration");
  }
  json sidecar;
  try {
    sidecar = json::parse(sin);
    s.step = sidecar.at("step").get<long>();
    s.seed = sidecar.at("seed").get<std::uint64_t>();
    s.optimizer.load_state(sidecar.at("optimizer"));
  } catch (const json::exception& e) {
    throw Error((dir / "state.json").string() + ": " + e.what());
  }
  if (s.seed != cfg.seed) {
    throw Error(dir.string() + ": checkpoint seed " + std::to_string(s.seed) + " differs from configured seed " +
                std::to_string(cfg.seed));
  }
  return s;
}

ExperimentResult run_experiment(const TrainConfig& input_cfg, const ExperimentOptions& opts) {
  TrainConfig cfg = input_cfg;
  cfg.validate();
  const fs::path out = opts.out_dir;
  fs::create_directories(out);
  write_text(out / "config.json", config_to_json(cfg).dump(2) + "\n");

  ExperimentResult result;
  result.state = opts.resume ? load_checkpoint(*opts.resume, cfg) : initial_state(cfg);
  auto& state = result.state;
  const bool resuming = opts.resume.has_value();
  const char* jsonl[] = {"metrics.jsonl", "eval.jsonl", "rollouts.jsonl", "conflicts.jsonl", "timing.jsonl"};
  if (resuming) {
    for (const char* f : jsonl) truncate_jsonl(out / f, state.step);
  }
  JsonlWriter metrics_out(out / "metrics.jsonl", resuming);
  JsonlWriter eval_out(out / "eval.jsonl", resuming);
  JsonlWriter rollouts_out(out / "rollouts.jsonl", resuming);
  JsonlWriter conflicts_out(out / "conflicts.jsonl", resuming);
  JsonlWriter timing_out(out / "timing.jsonl", resuming);

  std::unique_ptr<ExternalJudge> external;
  if (cfg.uses_judge() && cfg.judge.mode == JudgeMode::external) {
    auto jc = cfg.external_judge;
    const auto env = ExternalJudgeConfig::from_env();
    if (jc.url.empty()) jc.url = env.url;
    if (jc.api_key.empty()) jc.api_key = env.api_key;
    if (jc.cache_path.empty()) jc.cache_path = out / "judge_cache.jsonl";
    external = std::make_unique<ExternalJudge>(jc);
  }

  const auto eval_cfg = cfg.effective_eval();
  auto run_eval = [&](long step) {
    auto report = evaluate(state.params, eval_cfg, cfg.task.modulus, opts.exec, cfg.threads);
    report.step = step;
    eval_out.write(to_json(report));
    return report;
  };

  long last_eval = -1;
  try {
    if (!resuming) {
      result.final_eval = run_eval(0);
      last_eval = 0;
    }
    const auto t0 = std::chrono::steady_clock::now();
    while (state.step < cfg.steps) {
      auto step_result = train_step(state, cfg, opts.exec, external.get());
      const long step = state.step;
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (cfg.log_wall_time) step_result.metrics.wall_time = wall;
      metrics_out.write(to_json(step_result.metrics));
      timing_out.write({{"step", step}, {"wall_time", wall}});
      result.metrics.push_back(step_result.metrics);

      if (step == 1 || (cfg.dump_every > 0 && step % cfg.dump_every == 0)) {
        for (const auto& g : step_result.groups) rollouts_out.write(group_to_json(g, step));
        for (const auto& r : step_result.reports) conflicts_out.write(conflict_report_to_json(r, step));
      }
      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) {
        result.final_eval = run_eval(step);
        last_eval = step;
      }
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
        save_checkpoint(state, out / "checkpoints" / checkpoint_name(step));
      }
      if (opts.progress_every > 0 && step % opts.progress_every == 0) {
        const auto& m = step_result.metrics;
        std::clog << "[step " << step << "] reward " << m.reward_mean << " len " << m.response_length_mean
                  << " entropy " << m.entropy_mean << " grad " << m.grad_norm << '\n';
      }
    }
    if (last_eval != state.step) {
      result.final_eval = run_eval(state.step);
    }
    save_checkpoint(state, out / "checkpoints" / "final");
  } catch (const std::exception& e) {
    std::ostringstream diag;
    diag << "aborted after step " << state.step << "\n" << e.what() << "\n";
    write_text(out / "abort.txt", diag.str());
    throw;
  }

  json summary = {{"algorithm", to_string(cfg.algorithm)},
                  {"steps", state.step},
                  {"seed", cfg.seed},
                  {"final_eval", to_json(result.final_eval)}};
  if (!result.metrics.empty()) {
    const std::size_t n = result.metrics.size();
    const std::size_t from = n > 50 ? n - 50 : 0;
    json tail = json::object();
    for (const auto& f : compared_metric_fields()) {
      double s = 0.0;
      for (std::size_t i = from; i < n; ++i) s += metric_value(result.metrics[i], f);
      tail[f] = s / static_cast<double>(n - from);
    }
    summary["last_50_mean"] = tail;
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return result;
}

}  // namespace dagrpo
