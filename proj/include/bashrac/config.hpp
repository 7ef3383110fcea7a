#pragma once

// Training configuration and its flat "key = value" text form.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bashrac/model.hpp"
#include "bashrac/optim.hpp"

namespace bashrac {

enum class TrainMode { sft_only, bash, rac, scs_online };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::sft_only: return "sft_only";
    case TrainMode::bash: return "bash";
    case TrainMode::rac: return "rac";
    case TrainMode::scs_online: return "scs_online";
  }
  return {};
}

inline std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }
inline std::string to_string(Precision p) { return p == Precision::f64 ? "double" : "single"; }

struct TrainConfig {
  double lr = 3e-3;             // alpha
  int warmup_steps = 300;       // K1
  int inner_steps = 300;        // K2
  int outer_iterations = 2;     // H
  int batch_size = 32;
  double beta = 0.2;
  Schedule schedule = Schedule::cosine;
  double lr_warmup_frac = 0.1;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::sft_only;
  bool include_sft_loss = true;
  bool reset_optimizer = true;  // fresh AdamW moments when a phase starts
  double weight_decay = 0.0;
  double grad_clip = 1.0;       // global norm; 0 disables
  double gen_temperature = 1.0; // model draws while building mixed/correction data
  int max_new_tokens = 0;       // response cap for correction data; 0 = longest continuation + 2
  double ref_prior_rate = 0.25; // share of SFT rows shown with the reference in the prompt
  int workers = 1;              // fan-out of offline build phases
  ModelConfig model;

  std::vector<std::string> problems() const {
    std::vector<std::string> out = model.problems();
    if (!(lr > 0.0)) out.push_back("lr must be positive");
    if (warmup_steps < 0) out.push_back("warmup_steps must be >= 0");
    if (mode != TrainMode::sft_only) {
      if (inner_steps < 1) out.push_back("inner_steps must be >= 1");
      if (outer_iterations < 1) out.push_back("outer_iterations must be >= 1");
    }
    if (batch_size < 1) out.push_back("batch_size must be >= 1");
    if (!(beta >= 0.0 && beta <= 1.0)) out.push_back("beta must lie in [0, 1]");
    if (!(lr_warmup_frac >= 0.0 && lr_warmup_frac < 1.0)) out.push_back("lr_warmup_frac must lie in [0, 1)");
    if (weight_decay < 0.0) out.push_back("weight_decay must be >= 0");
    if (grad_clip < 0.0) out.push_back("grad_clip must be >= 0");
    if (!(gen_temperature > 0.0)) out.push_back("gen_temperature must be positive");
    if (max_new_tokens < 0) out.push_back("max_new_tokens must be >= 0");
    if (!(ref_prior_rate >= 0.0 && ref_prior_rate <= 1.0)) out.push_back("ref_prior_rate must lie in [0, 1]");
    if (workers < 1) out.push_back("workers must be >= 1");
    return out;
  }
};

class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : std::invalid_argument(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& p) {
    std::string s;
    for (const auto& x : p) s += (s.empty() ? "" : "; ") + x;
    return s;
  }
  std::vector<std::string> problems_;
};

inline void validate(const TrainConfig& c) {
  auto p = c.problems();
  if (!p.empty()) throw ConfigError(std::move(p));
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class N>
bool parse_number(std::string_view s, N& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

/// Applies one key/value to the config; returns an error message or "".
inline std::string set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  using detail::parse_bool;
  using detail::parse_number;
  auto bad = [&] { return std::string(key) + ": invalid value '" + std::string(value) + "'"; };
  auto num = [&](auto& field) { return parse_number(value, field) ? std::string() : bad(); };
  auto boolean = [&](bool& field) { return parse_bool(value, field) ? std::string() : bad(); };

  if (key == "lr") return num(c.lr);
  if (key == "warmup_steps") return num(c.warmup_steps);
  if (key == "inner_steps") return num(c.inner_steps);
  if (key == "outer_iterations") return num(c.outer_iterations);
  if (key == "batch_size") return num(c.batch_size);
  if (key == "beta") return num(c.beta);
  if (key == "lr_warmup_frac") return num(c.lr_warmup_frac);
  if (key == "seed") return num(c.seed);
  if (key == "include_sft_loss") return boolean(c.include_sft_loss);
  if (key == "reset_optimizer") return boolean(c.reset_optimizer);
  if (key == "weight_decay") return num(c.weight_decay);
  if (key == "grad_clip") return num(c.grad_clip);
  if (key == "gen_temperature") return num(c.gen_temperature);
  if (key == "max_new_tokens") return num(c.max_new_tokens);
  if (key == "ref_prior_rate") return num(c.ref_prior_rate);
  if (key == "workers") return num(c.workers);
  if (key == "n_layers") return num(c.model.n_layers);
  if (key == "n_heads") return num(c.model.n_heads);
  if (key == "d_model") return num(c.model.d_model);
  if (key == "d_ff") return num(c.model.d_ff);
  if (key == "context_len") return num(c.model.context_len);
  if (key == "vocab_size") return num(c.model.vocab_size);
  if (key == "schedule") {
    if (value == "cosine") return c.schedule = Schedule::cosine, std::string();
    if (value == "constant") return c.schedule = Schedule::constant, std::string();
    return bad();
  }
  if (key == "mode") {
    for (auto m : {TrainMode::sft_only, TrainMode::bash, TrainMode::rac, TrainMode::scs_online})
      if (value == to_string(m)) return c.mode = m, std::string();
    return bad();
  }
  if (key == "precision") {
    if (value == "single") return c.model.precision = Precision::f32, std::string();
    if (value == "double") return c.model.precision = Precision::f64, std::string();
    return bad();
  }
  return std::string(key) + ": unknown key";
}

/// Parses "key = value" lines ('#' starts a comment). Every unknown key and
/// bad value is reported together in one ConfigError.
inline TrainConfig parse_config_text(std::string_view text, TrainConfig base = {}) {
  std::vector<std::string> errors;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      errors.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    const auto err = set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    if (!err.empty()) errors.push_back(err);
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return base;
}

inline TrainConfig read_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

inline std::string config_text(const TrainConfig& c) {
  std::ostringstream os;
  auto kv = [&](const char* k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("mode", to_string(c.mode));
  kv("lr", detail::fmt_double(c.lr));
  kv("warmup_steps", std::to_string(c.warmup_steps));
  kv("inner_steps", std::to_string(c.inner_steps));
  kv("outer_iterations", std::to_string(c.outer_iterations));
  kv("batch_size", std::to_string(c.batch_size));
  kv("beta", detail::fmt_double(c.beta));
  kv("schedule", to_string(c.schedule));
  kv("lr_warmup_frac", detail::fmt_double(c.lr_warmup_frac));
  kv("seed", std::to_string(c.seed));
  kv("include_sft_loss", c.include_sft_loss ? "true" : "false");
  kv("reset_optimizer", c.reset_optimizer ? "true" : "false");
  kv("weight_decay", detail::fmt_double(c.weight_decay));
  kv("grad_clip", detail::fmt_double(c.grad_clip));
  kv("gen_temperature", detail::fmt_double(c.gen_temperature));
  kv("max_new_tokens", std::to_string(c.max_new_tokens));
  kv("ref_prior_rate", detail::fmt_double(c.ref_prior_rate));
  kv("workers", std::to_string(c.workers));
  kv("n_layers", std::to_string(c.model.n_layers));
  kv("n_heads", std::to_string(c.model.n_heads));
  kv("d_model", std::to_string(c.model.d_model));
  kv("d_ff", std::to_string(c.model.d_ff));
  kv("context_len", std::to_string(c.model.context_len));
  kv("vocab_size", std::to_string(c.model.vocab_size));
  kv("precision", to_string(c.model.precision));
  return os.str();
}

}  // namespace bashrac
