// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "dagrpo/gradient_vector.hpp"
#include "dagrpo/policy.hpp"

namespace dagrpo {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Gradient-ascent optimizer over the logit table.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg = {}) : cfg_(cfg) {}

  void step(PolicyParams& params, const GradientVector& ascent);

  [[nodiscard]] const OptimizerConfig& config() const { return cfg_; }
  [[nodiscard]] long steps_taken() const { return t_; }

  /// Moments and step count, doubles in shortest round-trip form.
  [[nodiscard]] nlohmann::json state_to_json() const;
  void load_state(const nlohmann::json& state);

  bool operator==(const Optimizer& other) const;

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
    bool operator==(const Moments&) const = default;
  };

  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<Context, Moments> moments_;
};

}  // namespace dagrpo
