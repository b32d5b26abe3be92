// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "dagrpo/tasks.hpp"

namespace dagrpo {

namespace {

constexpr int kModulus = 5;

double rollout_weight(const Rollout& r, const ObjectiveConfig& cfg, std::size_t group_size) {
  const double len = cfg.length_normalize ? static_cast<double>(r.tokens.size()) : 1.0;
  return 1.0 / (static_cast<double>(group_size) * len);
}

double lambda_of(CheckedObjective kind, const GradCheckInstance& inst, std::size_t i) {
  return kind == CheckedObjective::grpo ? 1.0 : static_cast<double>(inst.masks.lambda(i));
}

/// Σ_t π_θ(o_t)/π_b(o_t) for on-policy rollouts; Σ_t log π_θ(o_t) otherwise.
double ratio_sum(const Rollout& r, const SequenceLogProb& lp, bool exact) {
  if (!exact || r.origin == Origin::off_policy) return lp.total;
  double s = 0.0;
  for (std::size_t t = 0; t < lp.per_token.size(); ++t) s += std::exp(lp.per_token[t] - (*r.behavior_logprobs)[t]);
  return s;
}

std::vector<Token> random_response(const Vocabulary& vocab, Rng& rng) {
  const int len = uniform_int(rng, 1, 6);
  std::vector<Token> out;
  for (int t = 0; t < len; ++t) out.push_back(static_cast<Token>(uniform_int(rng, 0, vocab.size() - 1)));
  if (uniform01(rng) < 0.5) out.back() = vocab.eos();
  return out;
}

void randomize_rows(PolicyParams& params, const std::set<Context>& contexts, double scale, Rng& rng) {
  std::normal_distribution<double> noise(0.0, scale);
  for (const auto& ctx : contexts) {
    for (double& x : params.row(ctx)) x += noise(rng);
  }
}

bool near_kink(const GradCheckInstance& inst, double margin) {
  const double lo = 1.0 - inst.objective.clip_epsilon;
  const double hi = 1.0 + inst.objective.clip_epsilon;
  for (const auto& r : inst.group.rollouts) {
    if (r.origin == Origin::off_policy) continue;
    const auto now = logprob_sequence(inst.params, inst.group.prompt, r.tokens).per_token;
    const auto old = logprob_sequence(inst.params_old, inst.group.prompt, r.tokens).per_token;
    for (std::size_t t = 0; t < now.size(); ++t) {
      const double ratio = std::exp(now[t] - old[t]);
      if (std::abs(ratio - lo) < margin || std::abs(ratio - hi) < margin) return true;
    }
  }
  return false;
}

std::set<Context> group_contexts(const GradCheckInstance& inst) {
  std::set<Context> out;
  for (const auto& r : inst.group.rollouts) {
    for (auto& c : visited_contexts(inst.params, inst.group.prompt, r.tokens)) out.insert(std::move(c));
  }
  return out;
}

}  // namespace

std::string to_string(CheckedObjective o) {
  switch (o) {
    case CheckedObjective::log_prob: return "log_prob";
    case CheckedObjective::grpo: return "grpo";
    case CheckedObjective::dagrpo: return "dagrpo";
    case CheckedObjective::clipped: return "clipped";
  }
  return "?";
}

double objective_value(CheckedObjective kind, const GradCheckInstance& inst, const PolicyParams& params) {
  const auto& g = inst.group;
  const auto& cfg = inst.objective;
  if (kind == CheckedObjective::log_prob) {
    return logprob_sequence(params, g.prompt, g.rollouts.front().tokens).total;
  }

  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& r = g.rollouts[i];
    const double w = rollout_weight(r, cfg, g.size());
    const double a = *r.advantage;
    const double lambda = lambda_of(kind, inst, i);
    const auto lp = logprob_sequence(params, g.prompt, r.tokens);

    if (kind != CheckedObjective::clipped) {
      total += w * lambda * a * ratio_sum(r, lp, cfg.ratio_mode == RatioMode::exact);
      continue;
    }

    const auto old = logprob_sequence(inst.params_old, g.prompt, r.tokens);
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      if (r.origin == Origin::off_policy) {
        total += w * lambda * a * lp.per_token[t];
      } else {
        const double ratio = std::exp(lp.per_token[t] - old.per_token[t]);
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        total += w * lambda * std::min(ratio * a, clipped * a);
      }
      if (cfg.kl_beta > 0.0) {
        const auto ctx = context_at(params, g.prompt, std::span<const Token>(r.tokens.data(), t));
        total -= w * cfg.kl_beta * categorical_kl(softmax_row(params, ctx), softmax_row(inst.reference, ctx));
      }
    }
  }
  return total;
}

GradientVector analytic_gradient(CheckedObjective kind, const GradCheckInstance& inst) {
  switch (kind) {
    case CheckedObjective::log_prob:
      return grad_logprob_sequence(inst.params, inst.group.prompt, inst.group.rollouts.front().tokens);
    case CheckedObjective::grpo:
      return grpo_gradient(inst.group, inst.params, inst.objective);
    case CheckedObjective::dagrpo:
      return dagrpo_gradient(inst.group, inst.masks, inst.params, inst.objective);
    case CheckedObjective::clipped:
      return clipped_surrogate(inst.group, inst.params, inst.params_old, inst.reference, inst.objective,
                               &inst.masks)
          .gradient;
  }
  throw Error("unknown objective");
}

GradCheckOutcome finite_difference_check(CheckedObjective kind, const GradCheckInstance& inst, double h) {
  const auto analytic = analytic_gradient(kind, inst);
  PolicyParams work = inst.params;
  GradCheckOutcome out;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (const auto& ctx : group_contexts(inst)) {
    for (int j = 0; j < work.vocab_size(); ++j) {
      const auto jj = static_cast<std::size_t>(j);
      const double saved = work.row(ctx)[jj];
      work.row(ctx)[jj] = saved + h;
      const double fp = objective_value(kind, inst, work);
      work.row(ctx)[jj] = saved - h;
      const double fm = objective_value(kind, inst, work);
      work.row(ctx)[jj] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.at(ctx, j);
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      out.max_abs_error = std::max(out.max_abs_error, std::abs(a - numeric));
      ++out.coordinates;
    }
  }
  const double denom = std::sqrt(a2) + std::sqrt(n2);
  out.relative_error = denom > 0.0 ? std::sqrt(diff2) / denom : 0.0;
  return out;
}

std::vector<SuiteSpec> default_suites() {
  return {
      {"policy_log_prob", CheckedObjective::log_prob, RatioMode::unit_approx, true, 0.0, false},
      {"grpo_unit", CheckedObjective::grpo, RatioMode::unit_approx, true, 0.0, false},
      {"grpo_exact", CheckedObjective::grpo, RatioMode::exact, true, 0.0, false},
      {"dr_grpo", CheckedObjective::grpo, RatioMode::unit_approx, false, 0.0, false},
      {"dagrpo_unit", CheckedObjective::dagrpo, RatioMode::unit_approx, true, 0.0, true},
      {"dagrpo_exact", CheckedObjective::dagrpo, RatioMode::exact, true, 0.0, true},
      {"clipped", CheckedObjective::clipped, RatioMode::exact, true, 0.0, true},
      {"clipped_kl", CheckedObjective::clipped, RatioMode::exact, true, 0.1, true},
  };
}

GradCheckInstance random_instance(const SuiteSpec& spec, Rng& rng, double kink_margin) {
  for (;;) {
    TaskConfig task;
    task.modulus = kModulus;
    const int level = uniform_int(rng, 1, 3);
    const auto prompt = generate_prompt(task, level, rng);
    PolicyShape shape;
    shape.history_k = uniform_int(rng, 1, 2);
    shape.view = uniform01(rng) < 0.5 ? ContextView::chain_state : ContextView::full_prompt;

    GradCheckInstance inst;
    inst.group.prompt = prompt;
    inst.params_old = PolicyParams(prompt.vocabulary(), shape);
    inst.objective.ratio_mode = spec.ratio_mode;
    inst.objective.length_normalize = spec.length_normalize;
    inst.objective.kl_beta = spec.kl_beta;

    const int g_on = uniform_int(rng, 2, 5);
    for (int i = 0; i < g_on; ++i) {
      Rollout r;
      r.prompt_id = prompt.key();
      r.tokens = random_response(prompt.vocabulary(), rng);
      r.reward = uniform_int(rng, 0, 1);
      inst.group.rollouts.push_back(std::move(r));
    }
    inst.group.rollouts[0].reward = 1;
    inst.group.rollouts[1].reward = 0;
    if (spec.with_anchor) {
      Rollout a;
      a.prompt_id = prompt.key();
      a.origin = Origin::off_policy;
      a.tokens = reference_solution(prompt);
      a.reward = 1;
      inst.group.rollouts.push_back(std::move(a));
    }

    std::set<Context> contexts;
    for (const auto& r : inst.group.rollouts) {
      for (auto& c : visited_contexts(inst.params_old, prompt, r.tokens)) contexts.insert(std::move(c));
    }
    randomize_rows(inst.params_old, contexts, 1.0, rng);
    inst.params = inst.params_old;
    if (spec.ratio_mode == RatioMode::exact) randomize_rows(inst.params, contexts, 0.3, rng);
    inst.reference = PolicyParams(prompt.vocabulary(), shape);
    randomize_rows(inst.reference, contexts, 0.5, rng);

    for (auto& r : inst.group.rollouts) {
      if (r.origin == Origin::on_policy) {
        r.behavior_logprobs = logprob_sequence(inst.params_old, prompt, r.tokens).per_token;
      }
      r.judge_score = 1.0 + 9.0 * uniform01(rng);
    }

    AdvantageMode mode;
    mode.kind = !spec.length_normalize ? AdvantageMode::Kind::dr_grpo
                : spec.with_anchor     ? AdvantageMode::Kind::mixed
                                       : AdvantageMode::Kind::grpo_standard;
    inst.group = compute_advantages(std::move(inst.group), mode);
    const auto part = partition(inst.group);
    inst.masks = compute_masks(inst.group, part, 3.0);

    if (spec.kind == CheckedObjective::clipped && near_kink(inst, kink_margin)) continue;
    return inst;
  }
}

SuiteResult run_suite(const SuiteSpec& spec, int instances, std::uint64_t seed) {
  SuiteResult res;
  res.name = spec.name;
  std::uint64_t tag = 0xcbf29ce484222325ULL;
  for (unsigned char c : spec.name) tag = (tag ^ c) * 0x100000001b3ULL;
  auto rng = derive_stream(seed, StreamPurpose::test, {tag});
  for (int i = 0; i < instances; ++i) {
    const auto inst = random_instance(spec, rng);
    const auto out = finite_difference_check(spec.kind, inst);
    res.max_relative_error = std::max(res.max_relative_error, out.relative_error);
    res.max_abs_error = std::max(res.max_abs_error, out.max_abs_error);
    ++res.instances;
  }
  return res;
}

}  // namespace dagrpo
