#pragma once

// Token-level mixing of ground truth and model samples, and the offline
// construction of mixed datasets from a frozen parameter snapshot.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/corpus.hpp"
#include "bashrac/model.hpp"
#include "bashrac/parallel.hpp"
#include "bashrac/sampler.hpp"

namespace bashrac {

enum class Choice : std::uint8_t { ground_truth = 0, generated = 1 };

struct MixConfig {
  double beta = 0.2;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("MixConfig: beta must lie in [0, 1]");
    if (!(temperature > 0.0)) throw std::invalid_argument("MixConfig: temperature must be > 0");
  }
};

struct MixedExample {
  Example example;
  Tokens mixed;               // same length as example.continuation
  std::vector<Choice> flags;  // per position

  friend bool operator==(const MixedExample&, const MixedExample&) = default;
};

/// Per-example outcome of an offline build.
template <class Item>
struct BuildResult {
  std::vector<Item> items;
  std::vector<std::string> skipped;  // ids, with reason
};

class BuildError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Walks j = 0..L-1: flip Bernoulli(beta); on success draw z^j from
/// p(. | BOS, x, mixed[0..j)) and use it, otherwise keep y^j. A generated
/// EOS does not stop mixing.
template <class T>
MixedExample mix_continuation(const Params<T>& p, const Example& ex, const MixConfig& config, Rng& rng) {
  config.validate();
  const std::size_t L = ex.continuation.size();
  if (1 + ex.prompt.size() + L - 1 > static_cast<std::size_t>(p.config.context_len))
    throw ContextOverflow(ex.id + ": prompt + continuation exceeds context length");
  const GenerationConfig sample = GenerationConfig::sampled(1, config.temperature);
  Workspace<T> ws(p.config);
  const TokenId bos = Vocab::kBos;
  extend(p, ws, std::span<const TokenId>(&bos, 1));
  extend(p, ws, std::span<const TokenId>(ex.prompt));

  MixedExample out{ex, Tokens(L), std::vector<Choice>(L)};
  for (std::size_t j = 0; j < L; ++j) {
    if (rng.bernoulli(config.beta)) {
      out.mixed[j] = next_token(ws.logits(ws.length() - 1), sample, rng);
      out.flags[j] = Choice::generated;
    } else {
      out.mixed[j] = ex.continuation[j];
      out.flags[j] = Choice::ground_truth;
    }
    if (j + 1 < L) extend(p, ws, std::span<const TokenId>(&out.mixed[j], 1));
  }
  return out;
}

namespace detail {

/// Runs build(example, slot) for every example over frozen params and
/// gathers results in input order. Overflowing examples are skipped; more
/// than 1% skipped aborts.
template <class Item, class BuildOne>
BuildResult<Item> build_offline(const Dataset& dataset, int workers, BuildOne&& build_one) {
  std::vector<std::optional<Item>> slots(dataset.size());
  std::vector<std::string> reasons(dataset.size());
  parallel_for(dataset.size(), workers, [&](std::size_t i) {
    try {
      slots[i] = build_one(dataset.examples[i]);
    } catch (const ContextOverflow& e) {
      reasons[i] = e.what();
    }
  });
  BuildResult<Item> out;
  out.items.reserve(dataset.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i])
      out.items.push_back(std::move(*slots[i]));
    else
      out.skipped.push_back(dataset.examples[i].id + ": " + reasons[i]);
  }
  if (out.skipped.size() * 100 > dataset.size())
    throw BuildError("offline build skipped " + std::to_string(out.skipped.size()) + " of " +
                     std::to_string(dataset.size()) + " examples (limit 1%)");
  return out;
}

}  // namespace detail

/// One mixed example per input example; each draws from its own stream
/// keyed by (seed, example id), so the output is independent of `workers`.
template <class T>
BuildResult<MixedExample> build_ds(const Params<T>& p, const Dataset& dataset, const MixConfig& config,
                                   int workers = 1) {
  config.validate();
  return detail::build_offline<MixedExample>(dataset, workers, [&](const Example& ex) {
    Rng rng = Rng::stream(config.seed, "mix", ex.id);
    return mix_continuation(p, ex, config, rng);
  });
}

// ---------------------------------------------------------------------------
// Record format: dataset fields plus mixed_ids and choice_flags (0 = ground
// truth, 1 = generated).

inline Json mixed_record(const MixedExample& m, const Vocab& vocab) {
  Json j = example_record(m.example, vocab);
  j["mixed_ids"] = m.mixed;
  Json flags = Json::array();
  for (auto f : m.flags) flags.push_back(static_cast<int>(f));
  j["choice_flags"] = flags;
  return j;
}

inline void write_mixed(const std::filesystem::path& path, std::span<const MixedExample> items,
                        const Vocab& vocab = Vocab::standard()) {
  std::vector<Json> records;
  records.reserve(items.size());
  for (const auto& m : items) records.push_back(mixed_record(m, vocab));
  write_records(path, records);
}

inline std::vector<MixedExample> read_mixed(const std::filesystem::path& path, const Vocab& vocab = Vocab::standard()) {
  std::vector<MixedExample> out;
  for_each_record(path, [&](const Json& j, std::size_t line) {
    MixedExample m;
    m.example = parse_example_record(j, vocab, line);
    m.mixed = detail::token_array(j, "mixed_ids", vocab, line);
    if (!j.contains("choice_flags") || !j["choice_flags"].is_array())
      throw DatasetFormatError("missing array 'choice_flags'", line);
    for (const auto& f : j["choice_flags"]) {
      if (!f.is_number_integer() || (f.get<int>() != 0 && f.get<int>() != 1))
        throw DatasetFormatError("choice_flags entries must be 0 or 1", line);
      m.flags.push_back(static_cast<Choice>(f.get<int>()));
    }
    const auto L = m.example.continuation.size();
    if (m.mixed.size() != L || m.flags.size() != L)
      throw DatasetFormatError("mixed_ids/choice_flags length differs from continuation", line);
    for (std::size_t k = 0; k < L; ++k)
      if (m.flags[k] == Choice::ground_truth && m.mixed[k] != m.example.continuation[k])
        throw DatasetFormatError("ground-truth flagged position differs from continuation", line);
    out.push_back(std::move(m));
  });
  return out;
}

}  // namespace bashrac
