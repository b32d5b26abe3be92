// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/gradient_vector.hpp"

#include <cmath>

namespace dagrpo {

std::span<double> GradientVector::row(const Context& ctx) {
  auto it = rows_.find(ctx);
  if (it == rows_.end()) {
    it = rows_.emplace(ctx, std::vector<double>(static_cast<std::size_t>(vocab_size_), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradientVector::find(const Context& ctx) const {
  auto it = rows_.find(ctx);
  return it == rows_.end() ? nullptr : &it->second;
}

double GradientVector::at(const Context& ctx, int index) const {
  const auto* r = find(ctx);
  return r ? (*r)[static_cast<std::size_t>(index)] : 0.0;
}

void GradientVector::add_scaled(const GradientVector& other, double scale) {
  if (vocab_size_ == 0) vocab_size_ = other.vocab_size_;
  if (other.vocab_size_ != vocab_size_ && !other.empty()) {
    throw Error("gradient vocabulary mismatch");
  }
  for (const auto& [ctx, src] : other.rows_) {
    auto dst = row(ctx);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += scale * src[j];
  }
}

void GradientVector::scale(double factor) {
  for (auto& [ctx, r] : rows_) {
    for (double& x : r) x *= factor;
  }
}

double GradientVector::dot(const GradientVector& other) const {
  double s = 0.0;
  for (const auto& [ctx, r] : rows_) {
    const auto* o = other.find(ctx);
    if (!o) continue;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * (*o)[j];
  }
  return s;
}

double GradientVector::norm() const {
  double s = 0.0;
  for (const auto& [ctx, r] : rows_) {
    for (double x : r) s += x * x;
  }
  return std::sqrt(s);
}

double GradientVector::l1_norm() const {
  double s = 0.0;
  for (const auto& [ctx, r] : rows_) {
    for (double x : r) s += std::abs(x);
  }
  return s;
}

bool GradientVector::all_finite() const {
  for (const auto& [ctx, r] : rows_) {
    for (double x : r) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

void GradientVector::prune_zero_rows() {
  for (auto it = rows_.begin(); it != rows_.end();) {
    bool zero = true;
    for (double x : it->second) zero = zero && x == 0.0;
    it = zero ? rows_.erase(it) : std::next(it);
  }
}

double cosine_similarity(const GradientVector& a, const GradientVector& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  double c = a.dot(b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return c;
}

}  // namespace dagrpo
