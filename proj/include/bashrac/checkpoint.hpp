#pragma once

// Binary checkpoint: fixed-order little-endian header followed by the
// parameters as 32-bit floats in declared order.
//
//   magic "BASHRAC\0" | u32 version | u32 n_layers n_heads d_model d_ff
//   context_len vocab_size precision flags | u64 param_count | u64 rng_seed
//   u64 rng_counter | f32[param_count]

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "bashrac/model.hpp"

namespace bashrac {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::array<char, 8> kCheckpointMagic{'B', 'A', 'S', 'H', 'R', 'A', 'C', '\0'};

/// Root seed plus the number of optimizer steps taken; every random stream
/// the trainer uses is derived from these two values.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  friend bool operator==(const RngState&, const RngState&) = default;
};

enum CheckpointFlags : std::uint32_t { kSftWarmed = 1u };

template <class T>
struct Checkpoint {
  Params<T> params;
  RngState rng;
  std::uint32_t flags = 0;

  bool sft_warmed() const noexcept { return (flags & kSftWarmed) != 0; }
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class U>
void put_le(std::vector<unsigned char>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

inline constexpr std::size_t kHeaderBytes = 8 + 4 + 8 * 4 + 8 * 3;

}  // namespace detail

template <class T>
std::vector<unsigned char> serialize_checkpoint(const Params<T>& params, const RngState& rng, std::uint32_t flags = 0) {
  const auto& c = params.config;
  std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  out.reserve(detail::kHeaderBytes + 4 * params.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size})
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  detail::put_le<std::uint32_t>(out, c.precision == Precision::f64 ? 1u : 0u);
  detail::put_le<std::uint32_t>(out, flags);
  detail::put_le<std::uint64_t>(out, params.size());
  detail::put_le<std::uint64_t>(out, rng.seed);
  detail::put_le<std::uint64_t>(out, rng.counter);
  for (T v : params.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const Params<T>& params, const RngState& rng,
                     std::uint32_t flags = 0) {
  const auto bytes = serialize_checkpoint(params, rng, flags);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

template <class T = float>
Checkpoint<T> parse_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < detail::kHeaderBytes) throw CheckpointError("checkpoint truncated: header incomplete");
  if (!std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin()))
    throw CheckpointError("bad checkpoint magic");
  const unsigned char* p = bytes.data() + 8;
  const auto version = detail::get_le<std::uint32_t>(p);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  p += 4;
  ModelConfig c;
  int* fields[] = {&c.n_layers, &c.n_heads, &c.d_model, &c.d_ff, &c.context_len, &c.vocab_size};
  for (int* f : fields) {
    const auto v = detail::get_le<std::uint32_t>(p);
    if (v > 1u << 20) throw CheckpointError("implausible model dimension " + std::to_string(v) + " in header");
    *f = static_cast<int>(v);
    p += 4;
  }
  const auto precision = detail::get_le<std::uint32_t>(p);
  p += 4;
  if (precision > 1) throw CheckpointError("bad precision field " + std::to_string(precision));
  c.precision = precision == 1 ? Precision::f64 : Precision::f32;
  const auto problems = c.problems();
  if (!problems.empty()) throw CheckpointError("invalid model config in header: " + problems.front());
  Checkpoint<T> ck;
  ck.flags = detail::get_le<std::uint32_t>(p);
  p += 4;
  const auto count = detail::get_le<std::uint64_t>(p);
  p += 8;
  ck.rng.seed = detail::get_le<std::uint64_t>(p);
  p += 8;
  ck.rng.counter = detail::get_le<std::uint64_t>(p);
  p += 8;
  const auto expected = ParamLayout::of(c).total;
  if (count != expected)
    throw CheckpointError("parameter count " + std::to_string(count) + " does not match config shape (" +
                          std::to_string(expected) + ")");
  if (bytes.size() != detail::kHeaderBytes + 4 * count)
    throw CheckpointError("checkpoint size " + std::to_string(bytes.size()) + " does not match header (expected " +
                          std::to_string(detail::kHeaderBytes + 4 * count) + ")");
  ck.params = Params<T>(c);
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    const float f = std::bit_cast<float>(detail::get_le<std::uint32_t>(p));
    if (!std::isfinite(f)) throw CheckpointError("non-finite parameter at index " + std::to_string(i));
    ck.params.values[i] = static_cast<T>(f);
  }
  return ck;
}

template <class T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint<T>(bytes);
}

}  // namespace bashrac
