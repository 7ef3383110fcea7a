#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bashrac {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

class VocabError : public std::runtime_error {
 public:
  VocabError(const std::string& what, std::size_t position)
      : std::runtime_error(what + " at position " + std::to_string(position)),
        position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

/// Character-level vocabulary. Special tokens come first, in fixed order,
/// and render as bracketed markers such as "<EOS>".
class Vocab {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kRefBegin = 4;
  static constexpr TokenId kRefEnd = 5;
  static constexpr int kNumSpecial = 6;

  static constexpr std::array<std::string_view, kNumSpecial> kSpecialNames{
      "<BOS>", "<EOS>", "<PAD>", "<SEP>", "<REF_BEGIN>", "<REF_END>"};

  /// Digits, '+', '=' and lowercase letters.
  static Vocab standard() {
    std::string symbols = "0123456789+=";
    for (char c = 'a'; c <= 'z'; ++c) symbols.push_back(c);
    return Vocab(symbols);
  }

  explicit Vocab(std::string_view symbols) {
    lookup_.fill(-1);
    for (char c : symbols) {
      const auto uc = static_cast<unsigned char>(c);
      if (c == '<' || c == '>' || uc < 0x21 || uc > 0x7e)
        throw std::invalid_argument(std::string("Vocab: unusable symbol '") + c + "'");
      if (lookup_[uc] >= 0) throw std::invalid_argument(std::string("Vocab: duplicate symbol '") + c + "'");
      lookup_[uc] = static_cast<TokenId>(kNumSpecial + symbols_.size());
      symbols_.push_back(c);
    }
  }

  int size() const noexcept { return kNumSpecial + static_cast<int>(symbols_.size()); }
  std::string_view symbols() const noexcept { return symbols_; }

  bool is_special(TokenId id) const noexcept { return id >= 0 && id < kNumSpecial; }

  TokenId id_of(char c) const {
    const TokenId id = lookup_[static_cast<unsigned char>(c)];
    if (id < 0) throw VocabError(std::string("unknown character '") + c + "'", 0);
    return id;
  }

  std::string render(TokenId id) const {
    if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range", 0);
    if (id < kNumSpecial) return std::string(kSpecialNames[static_cast<std::size_t>(id)]);
    return std::string(1, symbols_[static_cast<std::size_t>(id - kNumSpecial)]);
  }

  Tokens encode(std::string_view text) const {
    Tokens out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
      if (text[i] == '<') {
        bool matched = false;
        for (int s = 0; s < kNumSpecial; ++s) {
          const auto name = kSpecialNames[static_cast<std::size_t>(s)];
          if (text.substr(i, name.size()) == name) {
            out.push_back(s);
            i += name.size();
            matched = true;
            break;
          }
        }
        if (!matched) throw VocabError("unknown special marker", i);
        continue;
      }
      const TokenId id = lookup_[static_cast<unsigned char>(text[i])];
      if (id < 0) throw VocabError(std::string("unknown character '") + text[i] + "'", i);
      out.push_back(id);
      ++i;
    }
    return out;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const TokenId id = ids[p];
      if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " out of range", p);
      if (id < kNumSpecial)
        out += kSpecialNames[static_cast<std::size_t>(id)];
      else
        out.push_back(symbols_[static_cast<std::size_t>(id - kNumSpecial)]);
    }
    return out;
  }

  /// One symbol per line, specials first.
  void write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (auto name : kSpecialNames) out << name << '\n';
    for (char c : symbols_) out << c << '\n';
  }

  static Vocab read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line, symbols;
    int lineno = 0;
    while (std::getline(in, line)) {
      if (lineno < kNumSpecial) {
        if (line != kSpecialNames[static_cast<std::size_t>(lineno)])
          throw std::runtime_error("vocab line " + std::to_string(lineno + 1) + ": expected " +
                                   std::string(kSpecialNames[static_cast<std::size_t>(lineno)]));
      } else {
        if (line.size() != 1)
          throw std::runtime_error("vocab line " + std::to_string(lineno + 1) + ": expected one character");
        symbols.push_back(line[0]);
      }
      ++lineno;
    }
    if (lineno < kNumSpecial) throw std::runtime_error("vocab file truncated");
    return Vocab(symbols);
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.symbols_ == b.symbols_; }

 private:
  std::string symbols_;
  std::array<TokenId, 256> lookup_{};
};

}  // namespace bashrac
