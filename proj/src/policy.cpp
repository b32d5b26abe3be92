// SPDX-License-Identifier: Apache-2.0

#include "dagrpo/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dagrpo {

namespace {

// Nucleus boundary tolerance: a prefix whose mass is within this of top_p counts as
// reaching it, so that exact-arithmetic boundaries are not lost to rounding.
constexpr double kTopPSlack = 1e-12;

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error("malformed number in checkpoint: " + std::string(s));
  }
  return x;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.size());
  double mx = -INFINITY;
  for (double z : logits) mx = std::max(mx, z / temperature);
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    p[j] = std::exp(logits[j] / temperature - mx);
    sum += p[j];
  }
  for (double& x : p) x /= sum;
  return p;
}

}  // namespace

std::string to_string(ContextView view) {
  return view == ContextView::chain_state ? "chain_state" : "full_prompt";
}

ContextView context_view_from_string(const std::string& name) {
  if (name == "chain_state") return ContextView::chain_state;
  if (name == "full_prompt") return ContextView::full_prompt;
  throw Error("unknown context view: " + name);
}

const std::vector<double>* PolicyParams::find(const Context& ctx) const {
  auto it = logits_.find(ctx);
  return it == logits_.end() ? nullptr : &it->second;
}

std::vector<double>& PolicyParams::row(const Context& ctx) {
  auto it = logits_.find(ctx);
  if (it == logits_.end()) {
    it = logits_.emplace(ctx, std::vector<double>(static_cast<std::size_t>(vocab_size()), 0.0)).first;
  }
  return it->second;
}

void PolicyParams::apply(const GradientVector& grad, double scale) {
  for (const auto& [ctx, g] : grad.rows()) {
    auto& r = row(ctx);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += scale * g[j];
  }
}

bool PolicyParams::operator==(const PolicyParams& other) const {
  if (!(vocab_ == other.vocab_) || !(shape_ == other.shape_)) return false;
  // Absent rows and all-zero rows are the same distribution but not the same table;
  // compare tables literally.
  return logits_ == other.logits_;
}

void SamplingConfig::validate() const {
  if (!(temperature > 0.0)) throw Error("temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("top_p must be in (0, 1]");
  if (max_len < 1) throw Error("max_len must be positive");
}

Context context_at(const PolicyShape& shape, const Vocabulary& vocab, const Prompt& prompt,
                   std::span<const Token> prefix) {
  Context ctx;
  const auto k = static_cast<std::size_t>(std::max(shape.history_k, 0));
  if (shape.view == ContextView::full_prompt) {
    ctx.prompt_key = prompt.key();
    const std::size_t from = prefix.size() > k ? prefix.size() - k : 0;
    ctx.history.assign(prefix.begin() + static_cast<std::ptrdiff_t>(from), prefix.end());
    return ctx;
  }

  // Virtual stream [start, SEP, prefix...]; values in the history collapse to kValueClass.
  const std::size_t total = prefix.size() + 2;
  auto stream_at = [&](std::size_t i) -> Token {
    if (i == 0) return static_cast<Token>(prompt.start_value);
    if (i == 1) return vocab.sep();
    return prefix[i - 2];
  };
  const auto values = static_cast<std::size_t>(
      std::count_if(prefix.begin(), prefix.end(), [&](Token t) { return vocab.is_value(t); }));
  if (stream_at(total - 1) != vocab.sep()) {
    ctx.prompt_key = "fmt";
  } else if (values < prompt.operations.size()) {
    Token input = static_cast<Token>(prompt.start_value);
    for (std::size_t i = prefix.size(); i-- > 0;) {
      if (vocab.is_value(prefix[i])) {
        input = prefix[i];
        break;
      }
    }
    const Op& op = prompt.operations[values];
    ctx.prompt_key = to_string(op.code) + std::to_string(op.operand) + "@" + std::to_string(input);
  } else {
    ctx.prompt_key = "done";
  }
  const std::size_t take = std::min(k, total);
  ctx.history.reserve(take);
  for (std::size_t i = total - take; i < total; ++i) {
    const Token t = stream_at(i);
    ctx.history.push_back(vocab.is_value(t) ? kValueClass : t);
  }
  return ctx;
}

Context context_at(const PolicyParams& params, const Prompt& prompt,
                   std::span<const Token> prefix) {
  return context_at(params.shape(), params.vocab(), prompt, prefix);
}

std::vector<double> softmax_row(const PolicyParams& params, const Context& ctx) {
  const auto* row = params.find(ctx);
  if (!row) {
    const auto v = static_cast<std::size_t>(params.vocab_size());
    return std::vector<double>(v, 1.0 / static_cast<double>(v));
  }
  return softmax(*row, 1.0);
}

std::vector<double> apply_sampling(std::span<const double> logits, const SamplingConfig& cfg) {
  auto p = softmax(logits, cfg.temperature);
  if (cfg.top_p >= 1.0) return p;

  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += p[order[keep]];
    ++keep;
    if (mass >= cfg.top_p - kTopPSlack) break;
  }
  std::vector<double> out(p.size(), 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / mass;
  return out;
}

std::vector<double> token_distribution(const PolicyParams& params, const Context& ctx,
                                       const SamplingConfig& cfg) {
  const auto* row = params.find(ctx);
  if (row) return apply_sampling(*row, cfg);
  const std::vector<double> zeros(static_cast<std::size_t>(params.vocab_size()), 0.0);
  return apply_sampling(zeros, cfg);
}

SequenceLogProb logprob_sequence(const PolicyParams& params, const Prompt& prompt,
                                 std::span<const Token> tokens) {
  if (tokens.empty()) throw Error("logprob_sequence: empty token sequence");
  SequenceLogProb out;
  out.per_token.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto ctx = context_at(params, prompt, tokens.first(t));
    const auto p = softmax_row(params, ctx);
    const double lp = std::log(p[static_cast<std::size_t>(tokens[t])]);
    out.per_token.push_back(lp);
    out.total += lp;
  }
  return out;
}

void accumulate_logprob_grad(std::span<double> row, std::span<const double> probs, Token token,
                             double scale) {
  for (std::size_t j = 0; j < row.size(); ++j) {
    const double onehot = (static_cast<Token>(j) == token) ? 1.0 : 0.0;
    row[j] += scale * (onehot - probs[j]);
  }
}

GradientVector grad_logprob_sequence(const PolicyParams& params, const Prompt& prompt,
                                     std::span<const Token> tokens) {
  if (tokens.empty()) throw Error("grad_logprob_sequence: empty token sequence");
  GradientVector g(params.vocab_size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto ctx = context_at(params, prompt, tokens.first(t));
    const auto p = softmax_row(params, ctx);
    accumulate_logprob_grad(g.row(ctx), p, tokens[t], 1.0);
  }
  return g;
}

Token sample_categorical(std::span<const double> probs, Rng& rng) {
  const double u = uniform01(rng);
  double c = 0.0;
  Token last_nonzero = 0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (probs[j] <= 0.0) continue;
    c += probs[j];
    last_nonzero = static_cast<Token>(j);
    if (u < c) return last_nonzero;
  }
  return last_nonzero;
}

Rollout sample_rollout(const PolicyParams& params, const Prompt& prompt, const SamplingConfig& cfg,
                       Rng& rng) {
  Rollout r;
  r.prompt_id = prompt.key();
  r.origin = Origin::on_policy;
  std::vector<double> lps;
  const Token eos = params.vocab().eos();
  while (static_cast<int>(r.tokens.size()) < cfg.max_len) {
    const auto ctx = context_at(params, prompt, r.tokens);
    const auto p = token_distribution(params, ctx, cfg);
    const Token tok = sample_categorical(p, rng);
    r.tokens.push_back(tok);
    lps.push_back(std::log(p[static_cast<std::size_t>(tok)]));
    if (tok == eos) break;
  }
  r.behavior_logprobs = std::move(lps);
  return r;
}

double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double policy_entropy(const PolicyParams& params, std::span<const Context> contexts) {
  if (contexts.empty()) throw Error("policy_entropy: no contexts");
  double sum = 0.0;
  for (const auto& ctx : contexts) sum += entropy(softmax_row(params, ctx));
  return sum / static_cast<double>(contexts.size());
}

std::vector<Context> visited_contexts(const PolicyParams& params, const Prompt& prompt,
                                      std::span<const Token> tokens) {
  std::vector<Context> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out.push_back(context_at(params, prompt, tokens.first(t)));
  }
  return out;
}

void save_params(const PolicyParams& params, std::ostream& out) {
  std::vector<std::pair<std::string, const std::vector<double>*>> rows;
  rows.reserve(params.size());
  for (const auto& [ctx, logits] : params.table()) rows.emplace_back(encode_context(ctx), &logits);
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  out << "dagrpo-policy v1 modulus=" << params.vocab().modulus
      << " history_k=" << params.shape().history_k << " view=" << to_string(params.shape().view)
      << " version=" << params.version() << " rows=" << rows.size() << '\n';
  for (const auto& [key, logits] : rows) {
    out << key << '\t';
    for (std::size_t j = 0; j < logits->size(); ++j) {
      if (j) out << ' ';
      out << format_double((*logits)[j]);
    }
    out << '\n';
  }
}

PolicyParams load_params(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw Error("empty policy checkpoint");
  std::istringstream hs(header);
  std::string magic, ver;
  hs >> magic >> ver;
  if (magic != "dagrpo-policy" || ver != "v1") throw Error("not a policy checkpoint: " + header);

  int modulus = -1, history_k = -1;
  std::string view = "chain_state";
  std::uint64_t version = 0;
  std::size_t rows = 0;
  std::string field;
  while (hs >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw Error("malformed checkpoint header: " + header);
    const auto name = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (name == "modulus") modulus = std::stoi(value);
    else if (name == "history_k") history_k = std::stoi(value);
    else if (name == "view") view = value;
    else if (name == "version") version = std::stoull(value);
    else if (name == "rows") rows = std::stoull(value);
  }
  if (modulus < 2 || history_k < 0) throw Error("malformed checkpoint header: " + header);

  PolicyParams params(Vocabulary{modulus}, PolicyShape{history_k, context_view_from_string(view)});
  params.set_version(version);
  std::string line;
  std::size_t seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error("malformed checkpoint row: " + line);
    auto& row = params.row(decode_context(std::string_view(line).substr(0, tab)));
    std::string_view rest = std::string_view(line).substr(tab + 1);
    std::size_t j = 0;
    while (!rest.empty()) {
      const auto sp = rest.find(' ');
      if (j >= row.size()) throw Error("too many logits in checkpoint row: " + line);
      row[j++] = parse_double(rest.substr(0, sp));
      if (sp == std::string_view::npos) break;
      rest = rest.substr(sp + 1);
    }
    if (j != row.size()) throw Error("wrong logit count in checkpoint row: " + line);
    ++seen;
  }
  if (seen != rows) throw Error("checkpoint row count mismatch");
  return params;
}

}  // namespace dagrpo
