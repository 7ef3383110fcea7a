#pragma once

// Run manifest: config snapshot plus git-style blob hashes of every input
// and output file.

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace bashrac::cli {

/// sha1("blob <size>\0" + content), hex, as `git hash-object` prints it.
inline std::string git_blob_sha1(const std::string& content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1 digest failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string file_hash(const std::filesystem::path& p) { return git_blob_sha1(read_file(p)); }

struct FileEntry {
  std::string path;
  std::string sha1;
  bool timing = false;  // content carries wall-clock measurements
};

struct RunManifest {
  std::string command;
  std::string config;
  std::vector<FileEntry> inputs;
  std::vector<FileEntry> outputs;

  void add_input(const std::filesystem::path& p) { inputs.push_back({p.string(), file_hash(p), false}); }
  void add_output(const std::filesystem::path& p, bool timing = false) {
    outputs.push_back({p.string(), file_hash(p), timing});
  }

  /// Derived from the command, config and input hashes only.
  std::string run_id() const {
    std::string key = command + '\n' + config;
    for (const auto& f : inputs) key += '\n' + f.sha1;
    return git_blob_sha1(key).substr(0, 12);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["run_id"] = run_id();
    j["command"] = command;
    j["config"] = config;
    auto files = [](const std::vector<FileEntry>& v) {
      auto a = nlohmann::ordered_json::array();
      for (const auto& f : v) {
        nlohmann::ordered_json e{{"path", f.path}, {"sha1", f.sha1}};
        if (f.timing) e["timing"] = true;
        a.push_back(e);
      }
      return a;
    };
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    return j;
  }

  void write(const std::filesystem::path& p) const {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + p.string() + " for writing");
    out << to_json().dump(2) << '\n';
  }
};

/// Paths whose current hash differs from the one recorded in a manifest.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& p) {
  const auto j = nlohmann::json::parse(read_file(p));
  std::vector<std::string> bad;
  for (const char* key : {"inputs", "outputs"})
    for (const auto& f : j.at(key)) {
      const std::string path = f.at("path");
      if (!std::filesystem::exists(path) || file_hash(path) != f.at("sha1").get<std::string>()) bad.push_back(path);
    }
  return bad;
}

}  // namespace bashrac::cli
