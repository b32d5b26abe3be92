// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/core.hpp"

namespace dagrpo {

std::string to_string(OpCode code) {
  switch (code) {
    case OpCode::add: return "add";
    case OpCode::sub: return "sub";
    case OpCode::mul: return "mul";
  }
  return "?";
}

OpCode op_code_from_string(const std::string& name) {
  if (name == "add") return OpCode::add;
  if (name == "sub") return OpCode::sub;
  if (name == "mul") return OpCode::mul;
  throw Error("unknown op code: " + name);
}

int apply_op(const Op& op, int value, int modulus) {
  long long r = 0;
  switch (op.code) {
    case OpCode::add: r = static_cast<long long>(value) + op.operand; break;
    case OpCode::sub: r = static_cast<long long>(value) - op.operand; break;
    case OpCode::mul: r = static_cast<long long>(value) * op.operand; break;
  }
  r %= modulus;
  if (r < 0) r += modulus;
  return static_cast<int>(r);
}

std::vector<int> Prompt::chain_values() const {
  std::vector<int> out;
  out.reserve(operations.size());
  int v = start_value;
  for (const auto& op : operations) {
    v = apply_op(op, v, modulus);
    out.push_back(v);
  }
  return out;
}

int Prompt::final_value() const {
  int v = start_value;
  for (const auto& op : operations) v = apply_op(op, v, modulus);
  return v;
}

std::string Prompt::key() const {
  std::string k = "m" + std::to_string(modulus) + ":" + std::to_string(start_value);
  for (const auto& op : operations) {
    k += ';';
    k += to_string(op.code);
    k += std::to_string(op.operand);
  }
  return k;
}

std::string to_string(Origin origin) {
  return origin == Origin::on_policy ? "on_policy" : "off_policy";
}

Origin origin_from_string(const std::string& name) {
  if (name == "on_policy") return Origin::on_policy;
  if (name == "off_policy") return Origin::off_policy;
  throw Error("unknown origin: " + name);
}

}  // namespace dagrpo
