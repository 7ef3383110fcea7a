#pragma once

// Reference-conditioned correction labels.
//
// For each prompt the model samples a response z from (BOS, x). The
// correction label at position j is the greedy token under the
// reference-augmented context f(x, y) followed by z[0..j), and the mask marks
// the positions where that label disagrees with z.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/corpus.hpp"
#include "bashrac/mixing.hpp"
#include "bashrac/model.hpp"
#include "bashrac/sampler.hpp"

namespace bashrac {

/// Layout of f(x, y): BOS, x, REF_BEGIN, y without its EOS, REF_END.
struct RacTemplate {
  TokenId begin = Vocab::kBos;
  TokenId ref_begin = Vocab::kRefBegin;
  TokenId ref_end = Vocab::kRefEnd;
};

struct RacExample {
  Example example;
  Tokens response;                  // z
  Tokens labels;                    // z-bar, same length as z
  std::vector<std::uint8_t> mask;   // 1 iff labels[j] != response[j]

  friend bool operator==(const RacExample&, const RacExample&) = default;
};

struct RacLabels {
  Tokens labels;
  std::vector<std::uint8_t> mask;
};

namespace detail {

inline std::span<const TokenId> strip_eos(std::span<const TokenId> y) {
  if (!y.empty() && y.back() == Vocab::kEos) return y.first(y.size() - 1);
  return y;
}

}  // namespace detail

/// Builds f(x, y). `reserve` extra positions must still fit in the context.
inline Tokens build_rac_prompt(std::span<const TokenId> x, std::span<const TokenId> y, const RacTemplate& tmpl = {},
                               std::size_t context_len = kDefaultContextLen, std::size_t reserve = 0) {
  const auto ref = detail::strip_eos(y);
  Tokens out;
  out.reserve(x.size() + ref.size() + 3);
  out.push_back(tmpl.begin);
  out.insert(out.end(), x.begin(), x.end());
  out.push_back(tmpl.ref_begin);
  out.insert(out.end(), ref.begin(), ref.end());
  out.push_back(tmpl.ref_end);
  if (out.size() + reserve > context_len)
    throw ContextOverflow("reference prompt of length " + std::to_string(out.size()) + " plus " +
                          std::to_string(reserve) + " exceeds context length");
  return out;
}

/// The example with the reference folded into its prompt: with BOS
/// prepended the model input is exactly f(x, y), and the target is y.
inline Example reference_view(const Example& ex, const RacTemplate& tmpl = {}) {
  const auto ref = detail::strip_eos(ex.continuation);
  Example out;
  out.id = ex.id + "#ref";
  out.prompt = ex.prompt;
  out.prompt.push_back(tmpl.ref_begin);
  out.prompt.insert(out.prompt.end(), ref.begin(), ref.end());
  out.prompt.push_back(tmpl.ref_end);
  out.continuation = ex.continuation;
  return out;
}

template <class T>
RacLabels gen_rac_labels(const Params<T>& p, std::span<const TokenId> x, std::span<const TokenId> y,
                         std::span<const TokenId> z, const RacTemplate& tmpl = {}) {
  if (z.empty()) throw std::invalid_argument("gen_rac_labels: empty response");
  const Tokens prompt = build_rac_prompt(x, y, tmpl, static_cast<std::size_t>(p.config.context_len), z.size() - 1);
  RacLabels out;
  out.labels = teacher_forced_argmax(p, std::span<const TokenId>(prompt), z);
  out.mask.resize(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) out.mask[j] = out.labels[j] != z[j] ? 1 : 0;
  return out;
}

/// Samples z from (BOS, x) with the example's own stream keyed by
/// (seed, id), then labels it. Examples whose labels agree everywhere are
/// kept with an all-zero mask.
template <class T>
BuildResult<RacExample> build_dr(const Params<T>& p, const Dataset& dataset, const GenerationConfig& gen,
                                 const RacTemplate& tmpl, std::uint64_t seed, int workers = 1) {
  gen.validate();
  return detail::build_offline<RacExample>(dataset, workers, [&](const Example& ex) {
    Rng rng = Rng::stream(seed, "rac", ex.id);
    Tokens prefix;
    prefix.reserve(ex.prompt.size() + 1);
    prefix.push_back(Vocab::kBos);
    prefix.insert(prefix.end(), ex.prompt.begin(), ex.prompt.end());
    GenResult z = generate(p, std::span<const TokenId>(prefix), gen, rng);
    RacLabels lab = gen_rac_labels(p, ex.prompt, ex.continuation, z.tokens, tmpl);
    return RacExample{ex, std::move(z.tokens), std::move(lab.labels), std::move(lab.mask)};
  });
}

// ---------------------------------------------------------------------------
// Record format: dataset fields plus response_ids, rac_label_ids, mask.

inline Json rac_record(const RacExample& r, const Vocab& vocab) {
  Json j = example_record(r.example, vocab);
  j["response_ids"] = r.response;
  j["rac_label_ids"] = r.labels;
  Json mask = Json::array();
  for (auto m : r.mask) mask.push_back(static_cast<int>(m));
  j["mask"] = mask;
  return j;
}

inline void write_rac(const std::filesystem::path& path, std::span<const RacExample> items,
                      const Vocab& vocab = Vocab::standard()) {
  std::vector<Json> records;
  records.reserve(items.size());
  for (const auto& r : items) records.push_back(rac_record(r, vocab));
  write_records(path, records);
}

inline std::vector<RacExample> read_rac(const std::filesystem::path& path, const Vocab& vocab = Vocab::standard()) {
  std::vector<RacExample> out;
  for_each_record(path, [&](const Json& j, std::size_t line) {
    RacExample r;
    r.example = parse_example_record(j, vocab, line);
    r.response = detail::token_array(j, "response_ids", vocab, line);
    r.labels = detail::token_array(j, "rac_label_ids", vocab, line);
    if (!j.contains("mask") || !j["mask"].is_array()) throw DatasetFormatError("missing array 'mask'", line);
    for (const auto& m : j["mask"]) {
      if (!m.is_number_integer() || (m.get<int>() != 0 && m.get<int>() != 1))
        throw DatasetFormatError("mask entries must be 0 or 1", line);
      r.mask.push_back(static_cast<std::uint8_t>(m.get<int>()));
    }
    if (r.response.empty() || r.labels.size() != r.response.size() || r.mask.size() != r.response.size())
      throw DatasetFormatError("response_ids, rac_label_ids and mask must be nonempty and equal-length", line);
    for (std::size_t k = 0; k < r.mask.size(); ++k)
      if ((r.mask[k] == 1) != (r.labels[k] != r.response[k]))
        throw DatasetFormatError("mask disagrees with label/response comparison", line);
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace bashrac
