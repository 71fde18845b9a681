#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "memaudit/attack.hpp"
#include "memaudit/corpus.hpp"
#include "memaudit/gateway.hpp"
#include "memaudit/random.hpp"

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("memaudit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, const std::string& content) {
  std::ofstream(p, std::ios::binary) << content;
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Tokens drawn from a small vocabulary so LCS values are non-trivial.
inline std::vector<std::string> random_tokens(memaudit::Rng& rng, std::size_t len,
                                              std::size_t vocab) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < len; ++i)
    out.push_back("t" + std::to_string(memaudit::uniform_index(rng, vocab)));
  return out;
}

inline std::string join(const std::vector<std::string>& tokens) {
  std::string s;
  for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
  return s;
}

// "<stem>0 <stem>1 ..." with n words.
inline std::string words(const std::string& stem, std::size_t n, std::size_t offset = 0) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < n; ++i) w.push_back(stem + std::to_string(offset + i));
  return join(w);
}

// A sample at seq_len 200 whose prefix and suffix use disjoint words.
inline memaudit::PretrainSample make_sample(const std::string& id,
                                            const std::string& domain = "c4",
                                            int seq_len = 200) {
  const auto n_prefix = memaudit::prefix_budget(seq_len);
  return memaudit::PretrainSample(id, domain, seq_len, words("pre" + id + "w", n_prefix),
                                  words("suf" + id + "w", seq_len - n_prefix));
}

}  // namespace testsupport
