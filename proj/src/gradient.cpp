// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/gradient.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

namespace dagrpo {

namespace {

void check_advantages(const Group& group, const char* who) {
  for (const auto& r : group.rollouts) {
    if (!r.advantage) throw Error(std::string(who) + ": rollout without advantage");
    if (r.tokens.empty()) throw Error(std::string(who) + ": empty rollout");
  }
}

// Accumulates coeff_i * Σ_t r_{i,t} ∇log π(o_{i,t}) for the listed members, then scales
// the sum by 1/G. Both grpo_gradient and dagrpo_gradient route through here, with the
// same member order and arithmetic, so that unit masks reproduce GRPO bit for bit.
GradientVector accumulate(const Group& group, std::span<const std::size_t> members,
                          std::span<const double> coeffs, const PolicyParams& params,
                          const ObjectiveConfig& cfg) {
  GradientVector g(params.vocab_size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    const double coeff = coeffs[m];
    if (coeff == 0.0) continue;
    const auto& r = group.rollouts[members[m]];
    const bool exact = cfg.ratio_mode == RatioMode::exact && r.origin == Origin::on_policy;
    if (exact && (!r.behavior_logprobs || r.behavior_logprobs->size() != r.tokens.size())) {
      throw Error("exact ratio mode: on-policy rollout without behavior log-probs");
    }
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const std::span<const Token> prefix(r.tokens.data(), t);
      const auto ctx = context_at(params, group.prompt, prefix);
      const auto p = softmax_row(params, ctx);
      double ratio = 1.0;
      if (exact) {
        ratio = std::exp(std::log(p[static_cast<std::size_t>(r.tokens[t])]) - (*r.behavior_logprobs)[t]);
      }
      accumulate_logprob_grad(g.row(ctx), p, r.tokens[t], coeff * ratio);
    }
  }
  g.scale(1.0 / static_cast<double>(group.size()));
  return g;
}

std::vector<std::size_t> all_members(const Group& group) {
  std::vector<std::size_t> idx(group.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

std::string to_string(RatioMode mode) { return mode == RatioMode::exact ? "exact" : "unit_approx"; }

RatioMode ratio_mode_from_string(const std::string& name) {
  if (name == "exact") return RatioMode::exact;
  if (name == "unit_approx") return RatioMode::unit_approx;
  throw Error("unknown ratio mode: " + name);
}

void ObjectiveConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw Error("clip_epsilon must be > 0");
  if (!(kl_beta >= 0.0)) throw Error("kl_beta must be >= 0");
}

double sequence_coefficient(const Rollout& r, const ObjectiveConfig& cfg) {
  const double a = r.advantage.value_or(0.0);
  return cfg.length_normalize ? a / static_cast<double>(r.tokens.size()) : a;
}

GradientVector grpo_gradient(const Group& group, const PolicyParams& params,
                             const ObjectiveConfig& cfg) {
  return partial_gradient(group, all_members(group), params, cfg);
}

GradientVector partial_gradient(const Group& group, std::span<const std::size_t> members,
                                const PolicyParams& params, const ObjectiveConfig& cfg) {
  check_advantages(group, "grpo_gradient");
  std::vector<double> coeffs;
  coeffs.reserve(members.size());
  for (std::size_t i : members) coeffs.push_back(sequence_coefficient(group.rollouts.at(i), cfg));
  return accumulate(group, members, coeffs, params, cfg);
}

GradientVector dagrpo_gradient(const Group& group, const MaskSet& masks, const PolicyParams& params,
                               const ObjectiveConfig& cfg) {
  check_advantages(group, "dagrpo_gradient");
  const auto part = partition(group);
  if (part.positives.size() != masks.lambda_plus.size() ||
      part.negatives.size() != masks.lambda_minus.size()) {
    throw Error("dagrpo_gradient: masks do not match the group's partition");
  }
  for (std::size_t j : part.positives) {
    if (!masks.lambda_plus.contains(j)) throw Error("dagrpo_gradient: positive without λ⁺");
  }
  for (std::size_t k : part.negatives) {
    if (!masks.lambda_minus.contains(k)) throw Error("dagrpo_gradient: negative without λ⁻");
  }

  const auto members = all_members(group);
  std::vector<double> coeffs;
  coeffs.reserve(members.size());
  for (std::size_t i : members) {
    const auto& r = group.rollouts[i];
    const double lambda = static_cast<double>(masks.lambda(i));
    const double a = lambda * r.advantage.value_or(0.0);
    coeffs.push_back(cfg.length_normalize ? a / static_cast<double>(r.tokens.size()) : a);
  }
  return accumulate(group, members, coeffs, params, cfg);
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  double kl = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] > 0.0) kl += p[j] * (std::log(p[j]) - std::log(q[j]));
  }
  return kl;
}

SurrogateResult clipped_surrogate(const Group& group, const PolicyParams& params_new,
                                  const PolicyParams& params_old, const PolicyParams& params_ref,
                                  const ObjectiveConfig& cfg, const MaskSet* masks) {
  check_advantages(group, "clipped_surrogate");
  cfg.validate();
  SurrogateResult out;
  out.gradient = GradientVector(params_new.vocab_size());
  const double inv_g = 1.0 / static_cast<double>(group.size());
  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;

  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& r = group.rollouts[i];
    const bool on_policy = r.origin == Origin::on_policy;
    if (on_policy && (!r.behavior_logprobs || r.behavior_logprobs->size() != r.tokens.size())) {
      throw Error("clipped_surrogate: on-policy rollout without behavior log-probs");
    }
    const double a = *r.advantage;
    const double lambda = masks ? static_cast<double>(masks->lambda(i)) : 1.0;
    const double weight = inv_g * (cfg.length_normalize ? 1.0 / static_cast<double>(r.tokens.size()) : 1.0);

    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const std::span<const Token> prefix(r.tokens.data(), t);
      const auto ctx = context_at(params_new, group.prompt, prefix);
      const auto p = softmax_row(params_new, ctx);
      const auto tok = static_cast<std::size_t>(r.tokens[t]);

      double ratio = 1.0;
      if (on_policy) {
        const auto p_old = softmax_row(params_old, ctx);
        ratio = p[tok] / p_old[tok];
      }
      // min(r A, clip(r) A); the clipped branch is constant in θ.
      const double unclipped = ratio * a;
      const double clipped = std::clamp(ratio, lo, hi) * a;
      const bool take_unclipped = unclipped <= clipped;
      out.objective += weight * lambda * (take_unclipped ? unclipped : clipped);
      if (take_unclipped && lambda * a != 0.0) {
        accumulate_logprob_grad(out.gradient.row(ctx), p, r.tokens[t], weight * lambda * a * ratio);
      }

      if (cfg.kl_beta > 0.0) {
        const auto q = softmax_row(params_ref, ctx);
        const double kl = categorical_kl(p, q);
        out.objective -= weight * cfg.kl_beta * kl;
        auto row = out.gradient.row(ctx);
        for (std::size_t j = 0; j < p.size(); ++j) {
          row[j] -= weight * cfg.kl_beta * p[j] * (std::log(p[j]) - std::log(q[j]) - kl);
        }
      }
    }
  }
  return out;
}

std::vector<GradientVector> per_rollout_gradients(const Group& group, const PolicyParams& params,
                                                  const ObjectiveConfig& cfg) {
  check_advantages(group, "conflict_report");
  std::vector<GradientVector> out;
  out.reserve(group.size());
  for (const auto& r : group.rollouts) {
    GradientVector g(params.vocab_size());
    const double coeff = sequence_coefficient(r, cfg);
    if (coeff != 0.0) {
      for (std::size_t t = 0; t < r.tokens.size(); ++t) {
        const std::span<const Token> prefix(r.tokens.data(), t);
        const auto ctx = context_at(params, group.prompt, prefix);
        accumulate_logprob_grad(g.row(ctx), softmax_row(params, ctx), r.tokens[t], coeff);
      }
    }
    out.push_back(std::move(g));
  }
  return out;
}

ConflictReport conflict_report(const Group& group, const PolicyParams& params,
                               const ObjectiveConfig& cfg) {
  ConflictReport rep;
  const auto vecs = per_rollout_gradients(group, params, cfg);

  // Shared (context, token) pairs between G+ and G-.
  struct PairTally {
    double net = 0.0;
    int pos = 0;
    int neg = 0;
  };
  std::map<std::pair<Context, Token>, PairTally> tallies;
  for (const auto& r : group.rollouts) {
    const double a = *r.advantage;
    if (a == 0.0) continue;
    const double coeff = sequence_coefficient(r, cfg);
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const std::span<const Token> prefix(r.tokens.data(), t);
      auto& tally = tallies[{context_at(params, group.prompt, prefix), r.tokens[t]}];
      tally.net += coeff;
      (a > 0.0 ? tally.pos : tally.neg) += 1;
    }
  }
  for (auto& [key, tally] : tallies) {
    if (tally.pos > 0 && tally.neg > 0) {
      rep.shared_pairs.push_back({key.first, key.second, tally.net, tally.pos, tally.neg});
    }
  }

  // Coordinate-level sign opposition and cancellation.
  struct CoordTally {
    bool pos = false;
    bool neg = false;
    double abs_sum = 0.0;
    double net = 0.0;
  };
  std::map<Context, std::vector<CoordTally>> coords;
  for (const auto& v : vecs) {
    for (const auto& [ctx, row] : v.rows()) {
      auto& slots = coords[ctx];
      if (slots.empty()) slots.resize(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) {
        const double x = row[j];
        if (x == 0.0) continue;
        auto& c = slots[j];
        c.pos = c.pos || x > 0.0;
        c.neg = c.neg || x < 0.0;
        c.abs_sum += std::abs(x);
        c.net += x;
      }
    }
  }
  std::size_t touched = 0, conflicting = 0;
  double abs_total = 0.0, net_total = 0.0;
  for (const auto& [ctx, slots] : coords) {
    for (const auto& c : slots) {
      if (!c.pos && !c.neg) continue;
      ++touched;
      if (c.pos && c.neg) ++conflicting;
      abs_total += c.abs_sum;
      net_total += std::abs(c.net);
    }
  }
  rep.interference_index =
      touched ? static_cast<double>(conflicting) / static_cast<double>(touched) : 0.0;
  rep.cancellation_mass = abs_total > 0.0 ? std::clamp((abs_total - net_total) / abs_total, 0.0, 1.0) : 0.0;

  rep.pairwise_cosine.assign(vecs.size(), std::vector<double>(vecs.size(), 0.0));
  std::vector<double> norms(vecs.size());
  for (std::size_t i = 0; i < vecs.size(); ++i) norms[i] = vecs[i].norm();
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    for (std::size_t j = i; j < vecs.size(); ++j) {
      double c = 0.0;
      if (norms[i] > 0.0 && norms[j] > 0.0) {
        c = i == j ? 1.0 : std::clamp(vecs[i].dot(vecs[j]) / (norms[i] * norms[j]), -1.0, 1.0);
      }
      rep.pairwise_cosine[i][j] = rep.pairwise_cosine[j][i] = c;
    }
  }
  return rep;
}

Group retained_subgroup(const Group& group, const MaskSet& masks) {
  Group sub;
  sub.prompt = group.prompt;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (masks.lambda(i) == 1) sub.rollouts.push_back(group.rollouts[i]);
  }
  return sub;
}

nlohmann::json conflict_report_to_json(const ConflictReport& report, long step) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& sp : report.shared_pairs) {
    pairs.push_back({{"context", encode_context(sp.context)},
                     {"token", sp.token},
                     {"net_coefficient", sp.net_coefficient},
                     {"positive_count", sp.positive_count},
                     {"negative_count", sp.negative_count}});
  }
  return {{"step", step},
          {"interference_index", report.interference_index},
          {"cancellation_mass", report.cancellation_mass},
          {"shared_pairs", pairs},
          {"pairwise_cosine", report.pairwise_cosine}};
}

}  // namespace dagrpo
