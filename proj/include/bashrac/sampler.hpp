#pragma once

// Conditional autoregressive generation over a frozen model.

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "bashrac/model.hpp"
#include "bashrac/rng.hpp"

namespace bashrac {

enum class DecodeMode { greedy, sample };

struct GenerationConfig {
  int max_new_tokens = 16;  // K
  double temperature = 1.0;
  DecodeMode mode = DecodeMode::sample;
  TokenId stop_token = Vocab::kEos;

  void validate() const {
    if (max_new_tokens < 1) throw std::invalid_argument("GenerationConfig: max_new_tokens must be >= 1");
    if (mode == DecodeMode::sample && !(temperature > 0.0))
      throw std::invalid_argument("GenerationConfig: temperature must be > 0 in sample mode");
  }

  static GenerationConfig greedy(int k) { return {k, 0.0, DecodeMode::greedy, Vocab::kEos}; }
  static GenerationConfig sampled(int k, double temperature) { return {k, temperature, DecodeMode::sample, Vocab::kEos}; }
};

enum class StopReason { eos, max_len };

struct GenResult {
  Tokens tokens;
  StopReason stopped_by = StopReason::max_len;

  friend bool operator==(const GenResult&, const GenResult&) = default;
};

/// Index of the largest value; the lowest index wins exact ties.
template <class T>
TokenId argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<TokenId>(best);
}

/// softmax(logits / temperature) computed in double.
template <class T>
std::vector<double> tempered_softmax(std::span<const T> logits, double temperature) {
  std::vector<double> p(logits.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (auto v : logits) mx = std::max(mx, static_cast<double>(v) / temperature);
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) / temperature - mx);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

template <class T>
TokenId next_token(std::span<const T> logits, const GenerationConfig& config, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("next_token: empty logits");
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (!std::isfinite(static_cast<double>(logits[i])))
      throw std::domain_error("next_token: non-finite logit at index " + std::to_string(i));
  if (config.mode == DecodeMode::greedy) return argmax(logits);
  if (!(config.temperature > 0.0)) throw std::invalid_argument("next_token: temperature must be > 0");
  const auto p = tempered_softmax(logits, config.temperature);
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // u landed in the rounding gap above the final partial sum.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  return static_cast<TokenId>(p.size() - 1);
}

/// Appends tokens one at a time after `prefix` until the stop token or K
/// tokens. Uses the workspace as an attention cache; rows are identical to
/// a full re-forward.
template <class T>
GenResult generate(const Params<T>& p, std::span<const TokenId> prefix, const GenerationConfig& config, Rng& rng) {
  config.validate();
  if (prefix.empty()) throw std::invalid_argument("generate: empty prefix");
  if (prefix.size() + static_cast<std::size_t>(config.max_new_tokens) > static_cast<std::size_t>(p.config.context_len))
    throw ContextOverflow("generate: prefix " + std::to_string(prefix.size()) + " + K " +
                          std::to_string(config.max_new_tokens) + " exceeds context length");
  Workspace<T> ws(p.config);
  extend(p, ws, prefix);
  GenResult out;
  for (int k = 0; k < config.max_new_tokens; ++k) {
    const TokenId t = next_token(ws.logits(ws.length() - 1), config, rng);
    out.tokens.push_back(t);
    if (t == config.stop_token) {
      out.stopped_by = StopReason::eos;
      return out;
    }
    if (k + 1 < config.max_new_tokens) extend(p, ws, std::span<const TokenId>(&t, 1));
  }
  out.stopped_by = StopReason::max_len;
  return out;
}

/// out[j] = argmax p(. | prefix, given[0..j)) for every j, from one forward
/// pass over prefix + given[0..n-1).
template <class T>
Tokens teacher_forced_argmax(const Params<T>& p, std::span<const TokenId> prefix, std::span<const TokenId> given) {
  if (prefix.empty()) throw std::invalid_argument("teacher_forced_argmax: empty prefix");
  if (given.empty()) return {};
  if (prefix.size() + given.size() > static_cast<std::size_t>(p.config.context_len))
    throw ContextOverflow("teacher_forced_argmax: prefix + given exceeds context length");
  Workspace<T> ws(p.config);
  extend(p, ws, prefix);
  extend(p, ws, given.first(given.size() - 1));
  Tokens out(given.size());
  for (std::size_t j = 0; j < given.size(); ++j) out[j] = argmax(ws.logits(prefix.size() - 1 + j));
  return out;
}

}  // namespace bashrac
