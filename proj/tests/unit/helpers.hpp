// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and brute-force references for the unit tests.

#pragma once

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "guiderag/corpus.hpp"
#include "guiderag/embedder.hpp"
#include "common/reference.hpp"

namespace guiderag::test {

/// A fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("guiderag_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

/// Random corpus over words "t0".."t{vocab-1}".
inline Corpus random_corpus(std::mt19937_64& rng, std::size_t passages, std::size_t vocab,
                            std::size_t min_len, std::size_t max_len) {
  Corpus c;
  std::uniform_int_distribution<std::size_t> word(0, vocab - 1);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  for (std::size_t i = 0; i < passages; ++i) {
    std::string text;
    const std::size_t n = len(rng);
    for (std::size_t j = 0; j < n; ++j) text += "t" + std::to_string(word(rng)) + " ";
    c.add_passage(static_cast<PassageId>(i), text);
  }
  return c;
}

inline double reference_maxsim(const EmbeddingTable& t, std::span<const TokenId> q,
                               std::span<const TokenId> d) {
  return reference::maxsim(t, q, d);
}

}  // namespace guiderag::test
