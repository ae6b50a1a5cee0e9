// SPDX-License-Identifier: Apache-2.0

#include "guiderag/corpus.hpp"

#include <cctype>
#include <fstream>

#include <json.hpp>

namespace guiderag {

using nlohmann::json;

Vocabulary::Vocabulary() {
  add("<bos>");
  add("<eos>");
  add("<unk>");
}

TokenId Vocabulary::add(std::string_view word) {
  auto it = index_.find(std::string(word));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(words_.size());
  words_.emplace_back(word);
  index_.emplace(words_.back(), id);
  return id;
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::lookup(std::string_view word) const {
  return find(word).value_or(kUnk);
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " outside vocabulary of size " +
                          std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      current.push_back(static_cast<char>(std::tolower(u)));
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.lookup(w));
  return ids;
}

std::vector<TokenId> tokenize_and_extend(std::string_view text, Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.add(w));
  return ids;
}

std::string detokenize(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += vocab.word(t);
  }
  return out;
}

const Passage& Corpus::add_passage(PassageId id, std::string text) {
  if (id < 0) throw InvalidArgument("passage id must be non-negative, got " + std::to_string(id));
  if (index_.contains(id)) throw InvalidArgument("duplicate passage id " + std::to_string(id));
  auto tokens = tokenize_and_extend(text, vocab_);
  if (tokens.empty()) throw InvalidArgument("passage " + std::to_string(id) + " has no tokens");
  index_.emplace(id, passages_.size());
  passages_.push_back(Passage{id, std::move(text), std::move(tokens)});
  return passages_.back();
}

const Passage& Corpus::passage(PassageId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InvalidArgument("unknown passage id " + std::to_string(id));
  return passages_[it->second];
}

Example make_example(ExampleId id, std::string context, std::string target,
                     std::optional<PassageId> gold, Corpus& corpus) {
  if (gold && !corpus.contains(*gold)) {
    throw InvalidArgument("example " + std::to_string(id) + " references missing passage " +
                          std::to_string(*gold));
  }
  Example ex;
  ex.id = id;
  ex.gold_passage_id = gold;
  ex.context_tokens = tokenize_and_extend(context, corpus.mutable_vocabulary());
  ex.target_tokens = tokenize_and_extend(target, corpus.mutable_vocabulary());
  if (ex.target_tokens.empty()) {
    throw InvalidArgument("example " + std::to_string(id) + " has an empty target");
  }
  ex.context = std::move(context);
  ex.target = std::move(target);
  return ex;
}

namespace {

std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  return in;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  return out;
}

template <typename Fn>
void for_each_record(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_for_read(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) +
                            ": malformed record: " + e.what());
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  for_each_record(path, [&](const json& rec) {
    corpus.add_passage(rec.at("id").get<PassageId>(), rec.at("text").get<std::string>());
  });
  return corpus;
}

std::vector<Example> load_examples(const std::filesystem::path& path, Corpus& corpus) {
  std::vector<Example> out;
  for_each_record(path, [&](const json& rec) {
    std::optional<PassageId> gold;
    if (auto it = rec.find("gold_passage_id"); it != rec.end() && !it->is_null()) {
      gold = it->get<PassageId>();
    }
    out.push_back(make_example(rec.at("id").get<ExampleId>(), rec.at("context").get<std::string>(),
                               rec.at("target").get<std::string>(), gold, corpus));
  });
  return out;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& p : corpus.passages()) {
    out << nlohmann::ordered_json{{"id", p.id}, {"text", p.text}}.dump() << '\n';
  }
}

void save_examples(std::span<const Example> examples, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& ex : examples) {
    nlohmann::ordered_json rec{{"id", ex.id}, {"context", ex.context}, {"target", ex.target}};
    rec["gold_passage_id"] = ex.gold_passage_id ? json(*ex.gold_passage_id) : json(nullptr);
    out << rec.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.corpus = load_corpus(dir / "passages.jsonl");
  ds.train = load_examples(dir / "examples.jsonl", ds.corpus);
  if (std::filesystem::exists(dir / "dev.jsonl")) {
    ds.dev = load_examples(dir / "dev.jsonl", ds.corpus);
  }
  return ds;
}

}  // namespace guiderag
