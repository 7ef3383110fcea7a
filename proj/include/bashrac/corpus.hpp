#pragma once

// Synthetic tasks with exact answers, the Example/Dataset types, and the
// line-delimited record format shared by every dataset file.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bashrac/rng.hpp"
#include "bashrac/vocab.hpp"

namespace bashrac {

using Json = nlohmann::ordered_json;

inline constexpr int kDefaultContextLen = 160;

struct Example {
  std::string id;
  Tokens prompt;        // x, no BOS
  Tokens continuation;  // y, ends with EOS

  friend bool operator==(const Example&, const Example&) = default;
};

struct Dataset {
  std::string task_name;
  std::uint64_t seed = 0;
  std::vector<Example> examples;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

class DatasetFormatError : public std::runtime_error {
 public:
  DatasetFormatError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Throws std::invalid_argument describing the first violated invariant.
inline void validate_example(const Example& ex, int context_len = kDefaultContextLen) {
  if (ex.prompt.empty()) throw std::invalid_argument(ex.id + ": empty prompt");
  if (ex.continuation.empty()) throw std::invalid_argument(ex.id + ": empty continuation");
  if (ex.continuation.back() != Vocab::kEos) throw std::invalid_argument(ex.id + ": continuation must end with EOS");
  auto bad = [](TokenId t) { return t == Vocab::kPad || t == Vocab::kEos || t == Vocab::kBos; };
  if (std::any_of(ex.prompt.begin(), ex.prompt.end(), bad))
    throw std::invalid_argument(ex.id + ": prompt contains PAD/EOS/BOS");
  if (std::any_of(ex.continuation.begin(), ex.continuation.end() - 1, bad))
    throw std::invalid_argument(ex.id + ": continuation contains PAD/EOS/BOS before its end");
  if (1 + ex.prompt.size() + ex.continuation.size() > static_cast<std::size_t>(context_len))
    throw std::invalid_argument(ex.id + ": exceeds context length");
}

// ---------------------------------------------------------------------------
// Tasks

/// Identifies a task and computes its exact answer from prompt text.
struct TaskSpec {
  enum class Kind { copy, reverse, addition, extract };
  Kind kind = Kind::copy;
  int stride = 2;

  std::string name() const {
    switch (kind) {
      case Kind::copy: return "copy";
      case Kind::reverse: return "reverse";
      case Kind::addition: return "addition";
      case Kind::extract: return "extract-s" + std::to_string(stride);
    }
    return {};
  }

  static TaskSpec parse(std::string_view name) {
    if (name == "copy") return {Kind::copy, 2};
    if (name == "reverse") return {Kind::reverse, 2};
    if (name == "addition") return {Kind::addition, 2};
    if (name.starts_with("extract-s")) {
      int stride = 0;
      auto digits = name.substr(9);
      auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), stride);
      if (ec == std::errc{} && p == digits.data() + digits.size() && stride >= 2) return {Kind::extract, stride};
    }
    throw std::invalid_argument("unknown task '" + std::string(name) + "'");
  }

  /// Exact answer text (without EOS) for a decoded prompt.
  std::string answer(std::string_view prompt_text) const {
    constexpr std::string_view sep = "<SEP>";
    switch (kind) {
      case Kind::copy:
      case Kind::reverse:
      case Kind::extract: {
        if (!prompt_text.ends_with(sep)) throw std::invalid_argument("prompt lacks <SEP>");
        std::string body(prompt_text.substr(0, prompt_text.size() - sep.size()));
        if (kind == Kind::reverse) std::reverse(body.begin(), body.end());
        if (kind == Kind::extract) {
          std::string picked;
          for (std::size_t i = 0; i < body.size(); i += static_cast<std::size_t>(stride)) picked.push_back(body[i]);
          if (picked.empty() && !body.empty()) picked.push_back(body[0]);
          return picked;
        }
        return body;
      }
      case Kind::addition: {
        const auto plus = prompt_text.find('+');
        if (plus == std::string_view::npos || !prompt_text.ends_with("="))
          throw std::invalid_argument("malformed addition prompt");
        auto parse = [](std::string_view s) {
          std::uint64_t v = 0;
          auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
          if (ec != std::errc{} || p != s.data() + s.size()) throw std::invalid_argument("malformed operand");
          return v;
        };
        const auto a = parse(prompt_text.substr(0, plus));
        const auto b = parse(prompt_text.substr(plus + 1, prompt_text.size() - plus - 2));
        return std::to_string(a + b);
      }
    }
    return {};
  }
};

namespace detail {

inline std::string example_id(const std::string& task, std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return task + "-" + buf;
}

inline Tokens with_eos(Tokens t) {
  t.push_back(Vocab::kEos);
  return t;
}

inline std::string random_letters(Rng& rng, std::size_t n) {
  std::string s(n, 'a');
  for (auto& c : s) c = static_cast<char>('a' + rng.below(26));
  return s;
}

}  // namespace detail

/// x = random letters + SEP, y = the same letters (optionally reversed) + EOS.
inline Dataset gen_copy_task(std::size_t n, int min_len, int max_len, bool reverse, std::uint64_t seed,
                             int context_len = kDefaultContextLen) {
  if (n < 1) throw std::invalid_argument("gen_copy_task: n must be >= 1");
  if (min_len < 1 || min_len > max_len) throw std::invalid_argument("gen_copy_task: need 1 <= min_len <= max_len");
  if (1 + 2 * (max_len + 1) > context_len)
    throw std::invalid_argument("gen_copy_task: max_len " + std::to_string(max_len) + " exceeds context budget");
  const Vocab vocab = Vocab::standard();
  Dataset ds{reverse ? "reverse" : "copy", seed, {}};
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, "corpus/" + ds.task_name, i);
    const auto len = static_cast<std::size_t>(rng.between(min_len, max_len));
    std::string body = detail::random_letters(rng, len);
    Example ex;
    ex.id = detail::example_id(ds.task_name, i);
    ex.prompt = vocab.encode(body);
    ex.prompt.push_back(Vocab::kSep);
    if (reverse) std::reverse(body.begin(), body.end());
    ex.continuation = detail::with_eos(vocab.encode(body));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

/// x = "a+b=", y = decimal sum + EOS, operands uniform in [0, 10^max_digits).
inline Dataset gen_addition_task(std::size_t n, int max_digits, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_addition_task: n must be >= 1");
  if (max_digits < 1 || max_digits > 6) throw std::invalid_argument("gen_addition_task: need 1 <= max_digits <= 6");
  std::int64_t limit = 1;
  for (int d = 0; d < max_digits; ++d) limit *= 10;
  const Vocab vocab = Vocab::standard();
  Dataset ds{"addition", seed, {}};
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, "corpus/addition", i);
    const auto a = rng.between(0, limit - 1);
    const auto b = rng.between(0, limit - 1);
    Example ex;
    ex.id = detail::example_id(ds.task_name, i);
    ex.prompt = vocab.encode(std::to_string(a) + "+" + std::to_string(b) + "=");
    ex.continuation = detail::with_eos(vocab.encode(std::to_string(a + b)));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

inline constexpr int kExtractMinBody = 1;
inline constexpr int kExtractMaxBody = 12;

/// x = random letters + SEP, y = every stride-th letter starting at the first.
inline Dataset gen_extract_task(std::size_t n, int stride, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_extract_task: n must be >= 1");
  if (stride < 2) throw std::invalid_argument("gen_extract_task: stride must be >= 2");
  const Vocab vocab = Vocab::standard();
  const TaskSpec task{TaskSpec::Kind::extract, stride};
  Dataset ds{task.name(), seed, {}};
  ds.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, "corpus/" + ds.task_name, i);
    const auto len = static_cast<std::size_t>(rng.between(kExtractMinBody, kExtractMaxBody));
    const std::string body = detail::random_letters(rng, len);
    Example ex;
    ex.id = detail::example_id(ds.task_name, i);
    ex.prompt = vocab.encode(body);
    ex.prompt.push_back(Vocab::kSep);
    ex.continuation = detail::with_eos(vocab.encode(task.answer(body + "<SEP>")));
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Record format

inline Json example_record(const Example& ex, const Vocab& vocab) {
  Json j;
  j["id"] = ex.id;
  j["prompt_text"] = vocab.decode(ex.prompt);
  j["continuation_text"] = vocab.decode(ex.continuation);
  j["prompt_ids"] = ex.prompt;
  j["continuation_ids"] = ex.continuation;
  return j;
}

namespace detail {

inline Tokens token_array(const Json& j, const char* key, const Vocab& vocab, std::size_t line) {
  if (!j.contains(key) || !j[key].is_array()) throw DatasetFormatError(std::string("missing array '") + key + "'", line);
  Tokens out;
  out.reserve(j[key].size());
  for (const auto& v : j[key]) {
    if (!v.is_number_integer()) throw DatasetFormatError(std::string("non-integer in '") + key + "'", line);
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id >= vocab.size()) throw DatasetFormatError(std::string("token id out of range in '") + key + "'", line);
    out.push_back(static_cast<TokenId>(id));
  }
  return out;
}

inline std::string string_field(const Json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) throw DatasetFormatError(std::string("missing string '") + key + "'", line);
  return j[key].get<std::string>();
}

}  // namespace detail

/// Parses and cross-checks one record; extra fields are ignored.
inline Example parse_example_record(const Json& j, const Vocab& vocab, std::size_t line) {
  if (!j.is_object()) throw DatasetFormatError("record is not an object", line);
  Example ex;
  ex.id = detail::string_field(j, "id", line);
  ex.prompt = detail::token_array(j, "prompt_ids", vocab, line);
  ex.continuation = detail::token_array(j, "continuation_ids", vocab, line);
  const auto prompt_text = detail::string_field(j, "prompt_text", line);
  const auto cont_text = detail::string_field(j, "continuation_text", line);
  if (vocab.decode(ex.prompt) != prompt_text) throw DatasetFormatError("prompt_text disagrees with prompt_ids", line);
  if (vocab.decode(ex.continuation) != cont_text)
    throw DatasetFormatError("continuation_text disagrees with continuation_ids", line);
  try {
    validate_example(ex, INT32_MAX);
  } catch (const std::invalid_argument& e) {
    throw DatasetFormatError(e.what(), line);
  }
  return ex;
}

/// Calls fn(record, line_number) for every line of a JSON-lines file.
inline void for_each_record(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    Json j;
    try {
      j = Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetFormatError(std::string("malformed record: ") + e.what(), line);
    }
    fn(j, line);
  }
}

inline void write_records(const std::filesystem::path& path, const std::vector<Json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds, const Vocab& vocab = Vocab::standard()) {
  std::vector<Json> records;
  records.reserve(ds.size());
  for (const auto& ex : ds.examples) records.push_back(example_record(ex, vocab));
  write_records(path, records);
}

/// The task name is recovered from the id prefix; the generation seed is not
/// stored in records and reads back as 0.
inline Dataset read_dataset(const std::filesystem::path& path, const Vocab& vocab = Vocab::standard()) {
  Dataset ds;
  std::set<std::string> seen;
  for_each_record(path, [&](const Json& j, std::size_t line) {
    Example ex = parse_example_record(j, vocab, line);
    if (!seen.insert(ex.id).second) throw DatasetFormatError("duplicate id '" + ex.id + "'", line);
    if (ds.task_name.empty()) {
      const auto dash = ex.id.rfind('-');
      ds.task_name = dash == std::string::npos ? std::string() : ex.id.substr(0, dash);
    }
    ds.examples.push_back(std::move(ex));
  });
  return ds;
}

/// Splits off the last `held_out` examples.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, std::size_t held_out) {
  if (held_out > ds.size()) throw std::invalid_argument("split_dataset: held_out larger than dataset");
  Dataset train{ds.task_name, ds.seed, {}}, test{ds.task_name, ds.seed, {}};
  const auto cut = ds.size() - held_out;
  train.examples.assign(ds.examples.begin(), ds.examples.begin() + static_cast<std::ptrdiff_t>(cut));
  test.examples.assign(ds.examples.begin() + static_cast<std::ptrdiff_t>(cut), ds.examples.end());
  return {std::move(train), std::move(test)};
}

}  // namespace bashrac
