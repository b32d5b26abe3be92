// SPDX-License-Identifier: Apache-2.0
//
// dagrpo: command-line entry point.
//
// Exit status: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dagrpo/config.hpp"
#include "dagrpo/gradcheck.hpp"
#include "dagrpo/judge.hpp"
#include "dagrpo/metrics.hpp"
#include "dagrpo/records.hpp"
#include "dagrpo/tasks.hpp"
#include "dagrpo/trainer.hpp"

namespace {

using namespace dagrpo;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--set", o.overrides, "override KEY=VALUE (repeatable)")->take_all();
  cmd->add_option("--seed", o.seed, "experiment seed (overrides the config)");
}

TrainConfig resolve_config(const CommonOptions& o) {
  TrainConfig cfg = o.config_path.empty() ? TrainConfig{} : load_config_file(o.config_path);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

std::string key_listing() {
  std::ostringstream os;
  os << "Config keys (--set KEY=VALUE):\n";
  for (const auto& k : config_keys()) {
    os << "  " << k.name;
    for (std::size_t pad = k.name.size(); pad < 22; ++pad) os << ' ';
    os << '[' << k.type << "] " << k.help << " (default " << k.get(TrainConfig{}).dump() << ")\n";
  }
  return os.str();
}

PolicyParams load_policy_file(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "policy.txt" : path;
  std::ifstream in(file);
  if (!in) throw Error("cannot open policy checkpoint: " + file.string());
  return load_params(in);
}

int cmd_run(const CommonOptions& common, const std::string& out, const std::string& resume, bool serial,
            int progress) {
  const auto cfg = resolve_config(common);
  ExperimentOptions opts;
  opts.out_dir = out;
  if (!resume.empty()) opts.resume = resume;
  opts.exec = serial ? Execution::serial : Execution::parallel;
  opts.progress_every = progress;
  const auto result = run_experiment(cfg, opts);
  std::cout << to_json(result.final_eval).dump() << '\n';
  return kOk;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& out, int tail) {
  std::vector<fs::path> paths(runs.begin(), runs.end());
  const auto table = compare_runs(paths, tail);
  if (out.empty()) {
    write_comparison_csv(table, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    write_comparison_csv(table, f);
  }
  return kOk;
}

int cmd_gradcheck(int instances, std::uint64_t seed, double tolerance) {
  double worst = 0.0;
  for (const auto& spec : default_suites()) {
    const auto r = run_suite(spec, instances, seed);
    std::printf("%-16s instances=%d max_rel_error=%.3e max_abs_error=%.3e\n", r.name.c_str(), r.instances,
                r.max_relative_error, r.max_abs_error);
    worst = std::max(worst, r.max_relative_error);
  }
  std::printf("max_rel_error=%.3e tolerance=%.1e %s\n", worst, tolerance, worst <= tolerance ? "ok" : "FAILED");
  return worst <= tolerance ? kOk : kRuntime;
}

int cmd_conflict(const CommonOptions& common, const std::string& dump, const std::string& policy,
                 const std::string& out, long step) {
  const auto cfg = resolve_config(common);
  const auto records = read_group_records(dump);
  std::ostringstream table;
  table << "group,step,context,token,net_coefficient,positive_count,negative_count,interference_index,"
           "cancellation_mass\n";
  std::size_t shown = 0;
  for (std::size_t gi = 0; gi < records.size(); ++gi) {
    const auto& [gstep, g] = records[gi];
    if (step >= 0 && gstep != step) continue;
    PolicyParams params = policy.empty() ? PolicyParams(g.prompt.vocabulary(), cfg.policy) : load_policy_file(policy);
    const Group subject = g.masks ? retained_subgroup(g, *g.masks) : g;
    const auto report = conflict_report(subject, params, cfg.effective_objective());
    for (const auto& sp : report.shared_pairs) {
      table << gi << ',' << gstep << ",\"" << encode_context(sp.context) << "\"," << sp.token << ','
            << nlohmann::json(sp.net_coefficient).dump() << ',' << sp.positive_count << ',' << sp.negative_count
            << ',' << nlohmann::json(report.interference_index).dump() << ','
            << nlohmann::json(report.cancellation_mass).dump() << '\n';
    }
    ++shown;
  }
  if (shown == 0) throw Error("no groups selected from " + dump);
  if (out.empty()) {
    std::cout << table.str();
  } else {
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    f << table.str();
  }
  return kOk;
}

int cmd_judge_test(const CommonOptions& common) {
  const auto cfg = resolve_config(common);
  auto jc = cfg.external_judge;
  const auto env = ExternalJudgeConfig::from_env();
  if (jc.url.empty()) jc.url = env.url;
  if (jc.api_key.empty()) jc.api_key = env.api_key;
  if (jc.url.empty()) throw JudgeUnavailable("DAGRPO_JUDGE_URL is not set");

  Prompt prompt;
  prompt.modulus = cfg.task.modulus;
  prompt.start_value = 3;
  prompt.operations = {{OpCode::add, 5}, {OpCode::mul, 2}};
  Rollout candidate;
  candidate.prompt_id = prompt.key();
  candidate.tokens = reference_solution(prompt);
  ExternalJudge judge(jc);
  const auto req = make_request(prompt, candidate, reference_solution(prompt));
  const auto score = judge.score(req);
  std::cout << "endpoint " << jc.url << "\nmodel " << jc.model << "\nscore " << score.value << '\n';
  return kOk;
}

int cmd_eval(const CommonOptions& common, const std::string& policy) {
  const auto cfg = resolve_config(common);
  auto eval = cfg.effective_eval();
  if (common.seed) eval.seed = *common.seed;
  const PolicyParams params = policy.empty() ? PolicyParams(Vocabulary{cfg.task.modulus}, cfg.policy)
                                             : load_policy_file(policy);
  const auto report = evaluate(params, eval, cfg.task.modulus, Execution::parallel, cfg.threads);
  std::cout << to_json(report).dump() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dagrpo: distinctiveness-aware group relative policy optimization on chain-arithmetic tasks"};
  app.require_subcommand(1);
  app.footer(key_listing());

  CommonOptions run_common;
  std::string run_out, run_resume;
  bool run_serial = false;
  int run_progress = 0;
  auto* run = app.add_subcommand("run", "run a training experiment");
  add_common(run, run_common);
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--resume", run_resume, "checkpoint directory to resume from");
  run->add_flag("--serial", run_serial, "use the serial reference kernels");
  run->add_option("--progress", run_progress, "progress line every N steps on stderr");
  run->footer(key_listing());

  std::vector<std::string> cmp_runs;
  std::string cmp_out;
  int cmp_tail = 50;
  std::optional<std::uint64_t> cmp_seed;
  auto* compare = app.add_subcommand("compare", "align metrics of two or more runs into a CSV");
  compare->add_option("runs", cmp_runs, "run directories or metrics.jsonl files")->required()->expected(2, -1);
  compare->add_option("--out", cmp_out, "CSV output path (default stdout)");
  compare->add_option("--tail", cmp_tail, "window of the summary means")->check(CLI::PositiveNumber);
  compare->add_option("--seed", cmp_seed, "accepted for uniformity; comparison is deterministic");

  int gc_instances = 100;
  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every analytic gradient");
  gradcheck->add_option("--instances", gc_instances, "random instances per suite")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", gc_seed, "instance seed");
  gradcheck->add_option("--tolerance", gc_tol, "maximum relative error");

  CommonOptions cf_common;
  std::string cf_dump, cf_policy, cf_out;
  long cf_step = -1;
  auto* conflict = app.add_subcommand("conflict", "replay a group dump through the conflict analyzer");
  add_common(conflict, cf_common);
  conflict->add_option("--dump", cf_dump, "rollouts.jsonl group dump")->required();
  conflict->add_option("--policy", cf_policy, "policy checkpoint (file or directory); default uniform");
  conflict->add_option("--step", cf_step, "only groups from this step");
  conflict->add_option("--out", cf_out, "CSV output path (default stdout)");

  CommonOptions jt_common;
  auto* judge_test = app.add_subcommand("judge-test", "score one canned request with the external judge");
  add_common(judge_test, jt_common);

  CommonOptions ev_common;
  std::string ev_policy;
  auto* eval = app.add_subcommand("eval", "pass@1 and avg@k of a policy checkpoint");
  add_common(eval, ev_common);
  eval->add_option("--policy", ev_policy, "policy checkpoint (file or directory); default uniform");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(run_common, run_out, run_resume, run_serial, run_progress);
    if (*compare) return cmd_compare(cmp_runs, cmp_out, cmp_tail);
    if (*gradcheck) return cmd_gradcheck(gc_instances, gc_seed, gc_tol);
    if (*conflict) return cmd_conflict(cf_common, cf_dump, cf_policy, cf_out, cf_step);
    if (*judge_test) return cmd_judge_test(jt_common);
    if (*eval) return cmd_eval(ev_common, ev_policy);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.key() << "]: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
