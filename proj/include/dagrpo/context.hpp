// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "dagrpo/core.hpp"

namespace dagrpo {

/// Conditioning state of the tabular policy: a prompt key plus the last k tokens.
struct Context {
  std::string prompt_key;
  std::vector<Token> history;

  auto operator<=>(const Context&) const = default;
  bool operator==(const Context&) const = default;
};

struct ContextHash {
  std::size_t operator()(const Context& ctx) const noexcept;
};

/// Text form "<prompt_key>|<t1,t2,...>"; prompt keys never contain '|'.
std::string encode_context(const Context& ctx);
Context decode_context(std::string_view text);

}  // namespace dagrpo
