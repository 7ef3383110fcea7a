#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "bashrac/model.hpp"

namespace testing_util {

// Small enough for exhaustive loops in unit tests.
inline bashrac::ModelConfig small_config(int context = 48) {
  bashrac::ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 16;
  c.d_ff = 32;
  c.context_len = context;
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bashrac_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing_util
