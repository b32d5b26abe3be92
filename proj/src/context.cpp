// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/context.hpp"

#include <charconv>
#include <functional>

namespace dagrpo {

std::size_t ContextHash::operator()(const Context& ctx) const noexcept {
  std::size_t h = std::hash<std::string>{}(ctx.prompt_key);
  for (Token t : ctx.history) {
    h ^= static_cast<std::size_t>(t) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

std::string encode_context(const Context& ctx) {
  std::string out = ctx.prompt_key;
  out += '|';
  for (std::size_t i = 0; i < ctx.history.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ctx.history[i]);
  }
  return out;
}

Context decode_context(std::string_view text) {
  const auto bar = text.rfind('|');
  if (bar == std::string_view::npos) throw Error("malformed context: " + std::string(text));
  Context ctx;
  ctx.prompt_key = std::string(text.substr(0, bar));
  std::string_view rest = text.substr(bar + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const auto piece = rest.substr(0, comma);
    Token t = 0;
    auto [ptr, ec] = std::from_chars(piece.data(), piece.data() + piece.size(), t);
    if (ec != std::errc{} || ptr != piece.data() + piece.size()) {
      throw Error("malformed context history: " + std::string(text));
    }
    ctx.history.push_back(t);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return ctx;
}

}  // namespace dagrpo
