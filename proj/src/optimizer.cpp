// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/optimizer.hpp"

#include <cmath>

namespace dagrpo {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw Error("unknown optimizer: " + name);
}

void Optimizer::step(PolicyParams& params, const GradientVector& ascent) {
  ++t_;
  params.bump_version();
  if (cfg_.kind == OptimizerKind::sgd) {
    if (cfg_.learning_rate != 0.0) params.apply(ascent, cfg_.learning_rate);
    return;
  }

  const auto v = static_cast<std::size_t>(params.vocab_size());
  for (const auto& [ctx, g] : ascent.rows()) {
    auto it = moments_.find(ctx);
    if (it == moments_.end()) {
      moments_.emplace(ctx, Moments{std::vector<double>(v, 0.0), std::vector<double>(v, 0.0)});
    }
  }

  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& [ctx, mom] : moments_) {
    const auto* g = ascent.find(ctx);
    for (std::size_t j = 0; j < v; ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      mom.m[j] = b1 * mom.m[j] + (1.0 - b1) * gj;
      mom.v[j] = b2 * mom.v[j] + (1.0 - b2) * gj * gj;
    }
    if (cfg_.learning_rate == 0.0) continue;
    auto& row = params.row(ctx);
    for (std::size_t j = 0; j < v; ++j) {
      const double mhat = mom.m[j] / c1;
      const double vhat = mom.v[j] / c2;
      row[j] += cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

nlohmann::json Optimizer::state_to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [ctx, mom] : moments_) {
    rows.push_back({{"context", encode_context(ctx)}, {"m", mom.m}, {"v", mom.v}});
  }
  return {{"kind", to_string(cfg_.kind)}, {"t", t_}, {"moments", rows}};
}

void Optimizer::load_state(const nlohmann::json& state) {
  if (state.at("kind").get<std::string>() != to_string(cfg_.kind)) {
    throw Error("optimizer state kind does not match configuration");
  }
  t_ = state.at("t").get<long>();
  moments_.clear();
  for (const auto& row : state.at("moments")) {
    moments_.emplace(decode_context(row.at("context").get<std::string>()),
                     Moments{row.at("m").get<std::vector<double>>(), row.at("v").get<std::vector<double>>()});
  }
}

bool Optimizer::operator==(const Optimizer& other) const {
  return t_ == other.t_ && moments_ == other.moments_;
}

}  // namespace dagrpo
