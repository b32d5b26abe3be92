// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <span>
#include <vector>

#include "dagrpo/context.hpp"

namespace dagrpo {

/// Sparse gradient over the logit table, stored row-wise: one length-V row per
/// touched Context. Absent rows are exactly zero. Rows are kept ordered so that every
/// reduction over the vector runs in a fixed order.
class GradientVector {
 public:
  using Rows = std::map<Context, std::vector<double>>;

  GradientVector() = default;
  explicit GradientVector(int vocab_size) : vocab_size_(vocab_size) {}

  [[nodiscard]] int vocab_size() const { return vocab_size_; }
  [[nodiscard]] bool empty() const { return rows_.empty(); }
  [[nodiscard]] std::size_t row_count() const { return rows_.size(); }
  [[nodiscard]] const Rows& rows() const { return rows_; }

  /// Mutable row, created as zeros on first access.
  std::span<double> row(const Context& ctx);
  [[nodiscard]] const std::vector<double>* find(const Context& ctx) const;
  [[nodiscard]] double at(const Context& ctx, int index) const;

  void add_scaled(const GradientVector& other, double scale);
  void scale(double factor);

  [[nodiscard]] double dot(const GradientVector& other) const;
  [[nodiscard]] double norm() const;
  [[nodiscard]] double l1_norm() const;
  [[nodiscard]] bool all_finite() const;

  /// Drops rows whose entries are all exactly zero.
  void prune_zero_rows();

 private:
  int vocab_size_ = 0;
  Rows rows_;
};

double cosine_similarity(const GradientVector& a, const GradientVector& b);

}  // namespace dagrpo
