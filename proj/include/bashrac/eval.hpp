#pragma once

// Evaluation: exact match, Rouge F1, oracle-judged win rate and the
// embedding-distance distribution of sampled responses.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bashrac/corpus.hpp"
#include "bashrac/model.hpp"
#include "bashrac/parallel.hpp"
#include "bashrac/rng.hpp"
#include "bashrac/sampler.hpp"
#include "bashrac/vocab.hpp"

namespace bashrac {

// ---------------------------------------------------------------------------
// Text helpers

/// Collapses runs of whitespace to one space and trims the ends.
inline std::string normalize_ws(std::string_view s) {
  std::string out;
  bool pending = false;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(' ');
    pending = false;
    out.push_back(c);
  }
  return out;
}

/// Tokens before the first EOS.
inline std::span<const TokenId> until_eos(std::span<const TokenId> t) {
  const auto it = std::find(t.begin(), t.end(), Vocab::kEos);
  return t.first(static_cast<std::size_t>(it - t.begin()));
}

/// Rendered tokens joined by single spaces, so each token is one Rouge unit.
inline std::string spaced(std::span<const TokenId> t, const Vocab& vocab = Vocab::standard()) {
  std::string out;
  for (TokenId id : t) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.render(id);
  }
  return out;
}

inline std::string spaced(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == ' ') continue;
    if (!out.empty()) out.push_back(' ');
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rouge

enum class RougeOrder { one, two, L };

namespace detail {

inline std::vector<std::string> ws_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

inline double f1(double overlap, double n_cand, double n_ref) {
  if (overlap <= 0.0 || n_cand <= 0.0 || n_ref <= 0.0) return 0.0;
  const double p = overlap / n_cand, r = overlap / n_ref;
  return 2.0 * p * r / (p + r);
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

/// F1 of clipped n-gram overlap (orders 1, 2) or of the longest common
/// subsequence (L) over whitespace tokens. 0 when either side is empty.
inline double rouge_f1(std::string_view candidate, std::string_view reference, RougeOrder order) {
  const auto c = detail::ws_tokens(candidate);
  const auto r = detail::ws_tokens(reference);
  if (c.empty() || r.empty()) return 0.0;
  if (order == RougeOrder::L) {
    const auto l = static_cast<double>(detail::lcs_length(c, r));
    return detail::f1(l, static_cast<double>(c.size()), static_cast<double>(r.size()));
  }
  const std::size_t n = order == RougeOrder::one ? 1 : 2;
  if (c.size() < n || r.size() < n) return 0.0;
  auto grams = [n](const std::vector<std::string>& t) {
    std::map<std::string, std::size_t> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
      std::string key = t[i];
      for (std::size_t k = 1; k < n; ++k) key += '\x1f' + t[i + k];
      ++m[key];
    }
    return m;
  };
  const auto gc = grams(c), gr = grams(r);
  std::size_t overlap = 0;
  for (const auto& [g, cnt] : gc)
    if (auto it = gr.find(g); it != gr.end()) overlap += std::min(cnt, it->second);
  return detail::f1(static_cast<double>(overlap), static_cast<double>(c.size() - n + 1),
                    static_cast<double>(r.size() - n + 1));
}

// ---------------------------------------------------------------------------
// Oracle

/// Expected answer text for an example: the task oracle when the task is
/// known, else the stored continuation without EOS.
inline std::string oracle_answer(const std::string& task_name, const Example& ex,
                                 const Vocab& vocab = Vocab::standard()) {
  try {
    return TaskSpec::parse(task_name).answer(vocab.decode(ex.prompt));
  } catch (const std::invalid_argument&) {
    return vocab.decode(until_eos(ex.continuation));
  }
}

/// Oracle score of one answer: correctness for addition, Rouge-L against the
/// oracle answer (per character) otherwise.
inline double judge_score(const std::string& task_name, std::string_view answer, std::string_view oracle) {
  const auto a = normalize_ws(answer);
  const auto o = normalize_ws(oracle);
  if (task_name == "addition") return a == o ? 1.0 : 0.0;
  return rouge_f1(spaced(a), spaced(o), RougeOrder::L);
}

/// 1 if a scores higher than b under the oracle, 0.5 on a tie, else 0.
inline double judge_pair(const std::string& task_name, std::string_view a, std::string_view b, std::string_view oracle) {
  const double sa = judge_score(task_name, a, oracle), sb = judge_score(task_name, b, oracle);
  return sa > sb ? 1.0 : (sa == sb ? 0.5 : 0.0);
}

// ---------------------------------------------------------------------------
// Generation over a dataset

/// One decoded answer per example (text before the first EOS). Each draws
/// from its own stream keyed by (seed, repeat, id); the output does not
/// depend on `workers`. K is clipped to the room left in the context.
template <class T>
std::vector<Tokens> generate_answers(const Params<T>& p, const Dataset& data, const GenerationConfig& gen,
                                     std::uint64_t seed, std::uint64_t repeat, int workers = 1) {
  gen.validate();
  std::vector<Tokens> out(data.size());
  parallel_for(data.size(), workers, [&](std::size_t i) {
    const Example& ex = data.examples[i];
    Tokens prefix;
    prefix.reserve(ex.prompt.size() + 1);
    prefix.push_back(Vocab::kBos);
    prefix.insert(prefix.end(), ex.prompt.begin(), ex.prompt.end());
    const auto room = static_cast<int>(p.config.context_len) - static_cast<int>(prefix.size());
    if (room < 1) return;
    GenerationConfig g = gen;
    g.max_new_tokens = std::min(g.max_new_tokens, room);
    Rng rng = Rng::stream(derive_seed(seed, "eval", repeat), "eval-id", ex.id);
    const auto r = generate(p, std::span<const TokenId>(prefix), g, rng);
    const auto kept = until_eos(r.tokens);
    out[i].assign(kept.begin(), kept.end());
  });
  return out;
}

struct ExactMatch {
  double mean = 0.0;
  std::vector<double> per_repeat;
};

inline double exact_match_of(const Dataset& data, const std::vector<Tokens>& answers,
                             const Vocab& vocab = Vocab::standard()) {
  if (data.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    hits += normalize_ws(vocab.decode(answers[i])) == normalize_ws(oracle_answer(data.task_name, data.examples[i], vocab));
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

template <class T>
ExactMatch exact_match_rate(const Params<T>& p, const Dataset& data, const GenerationConfig& gen, int n_repeats,
                            std::uint64_t seed, int workers = 1) {
  if (n_repeats < 1) throw std::invalid_argument("exact_match_rate: n_repeats must be >= 1");
  ExactMatch out;
  for (int r = 0; r < n_repeats; ++r)
    out.per_repeat.push_back(exact_match_of(data, generate_answers(p, data, gen, seed, static_cast<std::uint64_t>(r), workers)));
  for (double v : out.per_repeat) out.mean += v;
  out.mean /= static_cast<double>(n_repeats);
  return out;
}

/// Mean judge_pair(candidate, reference) over prompts.
inline double win_rate_of(const std::string& task_name, std::span<const std::string> prompts,
                          std::span<const std::string> candidates, std::span<const std::string> references,
                          std::span<const std::string> oracles) {
  if (prompts.empty()) return 0.0;
  double wins = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) wins += judge_pair(task_name, candidates[i], references[i], oracles[i]);
  return wins / static_cast<double>(prompts.size());
}

template <class T>
double win_rate_vs_reference(const Params<T>& p, const Dataset& data, const GenerationConfig& gen, std::uint64_t seed,
                             int workers = 1, const Vocab& vocab = Vocab::standard()) {
  const auto answers = generate_answers(p, data, gen, seed, 0, workers);
  std::vector<std::string> prompts, cands, refs, oracles;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data.examples[i];
    prompts.push_back(vocab.decode(ex.prompt));
    cands.push_back(vocab.decode(answers[i]));
    refs.push_back(vocab.decode(until_eos(ex.continuation)));
    oracles.push_back(oracle_answer(data.task_name, ex, vocab));
  }
  return win_rate_of(data.task_name, prompts, cands, refs, oracles);
}

// ---------------------------------------------------------------------------
// Report

struct EvalReport {
  std::string method;
  std::string task;
  double exact_match = 0.0;
  std::vector<double> exact_match_per_repeat;
  double rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
  double win_rate = 0.0;
  std::string mode;
  double temperature = 0.0;
  std::size_t n_samples = 0;
};

/// All metrics over n_repeats generations per prompt. Rouge and win rate
/// are averaged over every (repeat, prompt) pair.
template <class T>
EvalReport evaluate(const Params<T>& p, const Dataset& data, const GenerationConfig& gen, int n_repeats,
                    std::uint64_t seed, std::string method, int workers = 1, const Vocab& vocab = Vocab::standard()) {
  if (n_repeats < 1) throw std::invalid_argument("evaluate: n_repeats must be >= 1");
  EvalReport rep;
  rep.method = std::move(method);
  rep.task = data.task_name;
  rep.mode = gen.mode == DecodeMode::greedy ? "greedy" : "sample";
  rep.temperature = gen.mode == DecodeMode::greedy ? 0.0 : gen.temperature;
  rep.n_samples = data.size() * static_cast<std::size_t>(n_repeats);
  if (data.empty()) return rep;
  std::vector<std::string> refs, oracles;
  for (const auto& ex : data.examples) {
    refs.push_back(vocab.decode(until_eos(ex.continuation)));
    oracles.push_back(oracle_answer(data.task_name, ex, vocab));
  }
  for (int r = 0; r < n_repeats; ++r) {
    const auto answers = generate_answers(p, data, gen, seed, static_cast<std::uint64_t>(r), workers);
    rep.exact_match_per_repeat.push_back(exact_match_of(data, answers, vocab));
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto cand = vocab.decode(answers[i]);
      const auto c = spaced(answers[i], vocab);
      const auto ref = spaced(until_eos(data.examples[i].continuation), vocab);
      rep.rouge1 += rouge_f1(c, ref, RougeOrder::one);
      rep.rouge2 += rouge_f1(c, ref, RougeOrder::two);
      rep.rougeL += rouge_f1(c, ref, RougeOrder::L);
      rep.win_rate += judge_pair(data.task_name, cand, refs[i], oracles[i]);
    }
  }
  const double n = static_cast<double>(rep.n_samples);
  rep.rouge1 /= n;
  rep.rouge2 /= n;
  rep.rougeL /= n;
  rep.win_rate /= n;
  for (double v : rep.exact_match_per_repeat) rep.exact_match += v;
  rep.exact_match /= static_cast<double>(n_repeats);
  return rep;
}

inline Json eval_record(const EvalReport& r) {
  Json j;
  j["method"] = r.method;
  j["task"] = r.task;
  j["exact_match"] = r.exact_match;
  j["exact_match_per_repeat"] = r.exact_match_per_repeat;
  j["rouge1"] = r.rouge1;
  j["rouge2"] = r.rouge2;
  j["rougeL"] = r.rougeL;
  j["win_rate"] = r.win_rate;
  j["mode"] = r.mode;
  j["temperature"] = r.temperature;
  j["n_samples"] = r.n_samples;
  return j;
}

// ---------------------------------------------------------------------------
// Embedding distances

struct Quartiles {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Linear interpolation between order statistics at q * (n - 1).
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Quartiles summarize(const std::vector<double>& v) {
  return {quantile(v, 0.0), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), quantile(v, 1.0)};
}

struct DistanceDistribution {
  std::string prompt_id;
  std::vector<double> distances;
  Quartiles summary;
};

/// Mean of the final hidden states at the response positions of the forward
/// pass over (BOS, x, response). A trailing EOS is not part of the response;
/// positions past the context are dropped. Empty response -> zero vector.
template <class T>
std::vector<double> response_embedding(const Params<T>& p, std::span<const TokenId> prompt,
                                       std::span<const TokenId> response) {
  const auto body = until_eos(response);
  std::vector<double> out(static_cast<std::size_t>(p.config.d_model), 0.0);
  const std::size_t start = prompt.size() + 1;
  const auto ctx = static_cast<std::size_t>(p.config.context_len);
  if (body.empty() || start >= ctx) return out;
  const std::size_t n = std::min(body.size(), ctx - start);
  Workspace<T> ws(p.config);
  const TokenId bos = Vocab::kBos;
  extend(p, ws, std::span<const TokenId>(&bos, 1));
  extend(p, ws, prompt);
  extend(p, ws, body.first(n));
  for (std::size_t r = start; r < start + n; ++r) {
    const auto h = ws.hidden(r);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += static_cast<double>(h[k]);
  }
  for (double& v : out) v /= static_cast<double>(n);
  return out;
}

/// 1 - cosine similarity; 1 when either vector is zero.
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  const double cos = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::max(0.0, 1.0 - std::clamp(cos, -1.0, 1.0));
}

/// n_samples responses to `prompt`, each from stream (seed, "distance",
/// prompt id, sample), compared with the reference under the same params.
template <class T>
DistanceDistribution embedding_distance_distribution(const Params<T>& p, const Example& prompt,
                                                     std::span<const TokenId> reference, int n_samples,
                                                     const GenerationConfig& gen, std::uint64_t seed, int workers = 1) {
  if (n_samples < 1) throw std::invalid_argument("embedding_distance_distribution: n_samples must be >= 1");
  gen.validate();
  const auto ref = response_embedding(p, std::span<const TokenId>(prompt.prompt), reference);
  Tokens prefix{Vocab::kBos};
  prefix.insert(prefix.end(), prompt.prompt.begin(), prompt.prompt.end());
  GenerationConfig g = gen;
  g.max_new_tokens = std::min(g.max_new_tokens, p.config.context_len - static_cast<int>(prefix.size()));
  DistanceDistribution out;
  out.prompt_id = prompt.id;
  out.distances.assign(static_cast<std::size_t>(n_samples), 1.0);
  if (g.max_new_tokens >= 1) {
    parallel_for(out.distances.size(), workers, [&](std::size_t s) {
      Rng rng = Rng::stream(derive_seed(seed, "distance", prompt.id), "sample", static_cast<std::uint64_t>(s));
      const auto r = generate(p, std::span<const TokenId>(prefix), g, rng);
      const auto e = response_embedding(p, std::span<const TokenId>(prompt.prompt), std::span<const TokenId>(r.tokens));
      out.distances[s] = cosine_distance(e, ref);
    });
  }
  out.summary = summarize(out.distances);
  return out;
}

inline Json distance_record(const DistanceDistribution& d, const std::string& method) {
  Json j;
  j["method"] = method;
  j["prompt_id"] = d.prompt_id;
  j["distances"] = d.distances;
  j["summary"] = {{"min", d.summary.min},
                  {"q1", d.summary.q1},
                  {"median", d.summary.median},
                  {"q3", d.summary.q3},
                  {"max", d.summary.max}};
  return j;
}

inline constexpr const char* kQuartileHeader = "method,prompt_id,min,q1,median,q3,max";

inline std::string quartile_line(const std::string& method, const DistanceDistribution& d) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g,%.9g", d.summary.min, d.summary.q1, d.summary.median,
                d.summary.q3, d.summary.max);
  return method + "," + d.prompt_id + buf;
}

}  // namespace bashrac
