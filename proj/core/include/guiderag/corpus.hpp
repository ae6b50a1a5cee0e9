// SPDX-License-Identifier: Apache-2.0
//
// Passages, examples, vocabulary and JSONL persistence.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "guiderag/common.hpp"

namespace guiderag {

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;
  static constexpr TokenId kFirstWord = 3;

  Vocabulary();

  /// Returns the id of `word`, assigning the next free id when it is new.
  TokenId add(std::string_view word);
  /// Id of `word`, or kUnk when absent.
  TokenId lookup(std::string_view word) const;
  std::optional<TokenId> find(std::string_view word) const;
  const std::string& word(TokenId id) const;
  std::size_t size() const { return words_.size(); }
  bool is_special(TokenId id) const { return id >= 0 && id < kFirstWord; }

  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Lowercases and splits on anything that is not an ASCII letter or digit.
std::vector<std::string> split_words(std::string_view text);

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);

/// Adds every word of `text` to `vocab` and returns the resulting ids.
std::vector<TokenId> tokenize_and_extend(std::string_view text, Vocabulary& vocab);

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab);

struct Passage {
  PassageId id = 0;
  std::string text;
  std::vector<TokenId> tokens;

  bool operator==(const Passage&) const = default;
};

struct Example {
  ExampleId id = 0;
  std::string context;
  std::string target;
  std::optional<PassageId> gold_passage_id;
  std::vector<TokenId> context_tokens;
  std::vector<TokenId> target_tokens;

  bool operator==(const Example&) const = default;
};

class Corpus {
 public:
  Corpus() = default;

  /// Appends a passage, extending the vocabulary with its words.
  const Passage& add_passage(PassageId id, std::string text);

  const std::vector<Passage>& passages() const { return passages_; }
  const Passage& passage(PassageId id) const;
  bool contains(PassageId id) const { return index_.contains(id); }
  std::size_t size() const { return passages_.size(); }

  const Vocabulary& vocabulary() const { return vocab_; }
  Vocabulary& mutable_vocabulary() { return vocab_; }

  bool operator==(const Corpus& other) const {
    return passages_ == other.passages_ && vocab_ == other.vocab_;
  }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<PassageId, std::size_t> index_;
  Vocabulary vocab_;
};

/// Tokenizes an example against `corpus`, extending the corpus vocabulary.
Example make_example(ExampleId id, std::string context, std::string target,
                     std::optional<PassageId> gold, Corpus& corpus);

Corpus load_corpus(const std::filesystem::path& path);

/// Loads examples, extending the vocabulary of `corpus` with their words in first-seen order.
std::vector<Example> load_examples(const std::filesystem::path& path, Corpus& corpus);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
void save_examples(std::span<const Example> examples, const std::filesystem::path& path);

/// A data directory as written by the `synth` command.
struct Dataset {
  Corpus corpus;
  std::vector<Example> train;
  std::vector<Example> dev;
};

/// Reads passages.jsonl, examples.jsonl and (when present) dev.jsonl from `dir`, in that
/// order, so the vocabulary is identical across invocations.
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace guiderag
