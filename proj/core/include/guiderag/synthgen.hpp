// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic corpora with known gold passages.
//
// Every topic owns a pool of topic words and a few cue words. The topic's m passages each hold
// the topic words plus their own distractors; the remaining passages are background made of
// distractors and stray topic words. A context mentions its topic through cue words (and
// sometimes a literal topic word); its target copies distractors from exactly one of the
// topic's passages plus shared filler. With m > 1 the context alone cannot tell which passage
// the target used.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "guiderag/corpus.hpp"

namespace guiderag {

enum class SynthMode { kOneToMany, kOneToOne };
std::string_view to_string(SynthMode mode);
SynthMode parse_synth_mode(std::string_view text);

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t vocab_size = 400;
  std::size_t n_topics = 40;
  std::size_t passages_per_topic = 4;  // m; forced to 1 in one-to-one mode
  std::size_t n_passages = 600;
  std::size_t n_examples = 300;
  std::size_t passage_len = 12;
  std::size_t target_len = 6;
  double copy_rate = 0.7;
  std::size_t context_len = 8;
  SynthMode mode = SynthMode::kOneToMany;
  double dev_fraction = 0.2;
  std::size_t topic_words_per_topic = 3;
  std::size_t cue_words_per_topic = 2;
  double literal_topic_prob = 0.5;  // chance a context also names one topic word
  std::size_t background_topic_words = 1;
  std::size_t filler_pool = 20;

  std::size_t multiplicity() const { return mode == SynthMode::kOneToOne ? 1 : passages_per_topic; }
  std::size_t copied_tokens() const;
  /// Smallest vocab_size that fits the requested structure.
  std::size_t required_vocab() const;
  void validate() const;

  bool operator==(const SynthConfig&) const = default;
};

struct GroundTruth {
  ExampleId example_id = 0;
  PassageId gold = 0;
  std::vector<PassageId> context_relevant;  // all passages of the example's topic, ascending
  std::size_t topic = 0;
  bool dev = false;

  bool operator==(const GroundTruth&) const = default;
};

struct SynthDataset {
  SynthConfig config;
  Dataset data;
  std::vector<GroundTruth> truth;  // train examples first, then dev, matching example order
};

SynthDataset generate(const SynthConfig& config);

/// Writes passages.jsonl, examples.jsonl, dev.jsonl and manifest.json into `dir`.
void write_synth(const SynthDataset& dataset, const std::filesystem::path& dir);

std::string to_json(const SynthConfig& config);
/// Fields absent from `text` keep their value from `base`. Unknown keys are rejected.
SynthConfig synth_config_from_json(std::string_view text, const SynthConfig& base = {});

std::vector<GroundTruth> read_ground_truth(const std::filesystem::path& manifest);

}  // namespace guiderag
