// SPDX-License-Identifier: Apache-2.0
//
// Relevance, groundedness and sharpness measures. Overlap metrics work on word strings so
// that common-word lists and their tie rules do not depend on vocabulary id order.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "guiderag/common.hpp"
#include "guiderag/retrieval.hpp"

namespace guiderag {

using Words = std::vector<std::string>;

/// A ranking metric plus the number of examples skipped for lack of a gold id.
struct RankingMetric {
  double value = 0.0;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

RankingMetric success_at_k(std::span<const std::vector<PassageId>> rankings,
                           std::span<const std::optional<PassageId>> gold_ids, std::size_t k);
RankingMetric mrr(std::span<const std::vector<PassageId>> rankings,
                  std::span<const std::optional<PassageId>> gold_ids);

/// Unigram F1 over clipped multiset counts. Both empty gives 1, exactly one empty gives 0.
double token_f1(std::span<const std::string> prediction, std::span<const std::string> reference);

struct CommonWordList {
  Words words;  // descending frequency, ties lexicographic
  double mass_threshold = 0.5;
  double covered_mass = 0.0;
  std::string source;
  std::unordered_set<std::string> set;

  bool contains(const std::string& w) const { return set.contains(w); }
};

/// Shortest frequency-ordered prefix whose cumulative relative frequency reaches the threshold.
CommonWordList build_common_words(std::span<const Words> training_targets, double mass_threshold,
                                  std::string source = {});

/// token_f1 after dropping common words and context words from both sides.
double novel_f1(std::span<const std::string> prediction, std::span<const std::string> reference,
                std::span<const std::string> context, const CommonWordList& common);

enum class OverlapVariant { kF1, kNovelF1 };

/// Max overlap of outputs[0..k) against `reference`. k beyond the output count is clamped.
/// `context` and `common` are only consulted for the Novel-F1 variant.
double max_f1_at_k(std::span<const Words> per_passage_outputs, std::span<const std::string> reference,
                   std::size_t k, OverlapVariant variant, std::span<const std::string> context = {},
                   const CommonWordList* common = nullptr);

/// Max overlap where each rank has its own reference (groundedness against that rank's passage).
double max_f1_at_k(std::span<const Words> per_passage_outputs, std::span<const Words> references,
                   std::size_t k, OverlapVariant variant, std::span<const std::string> context = {},
                   const CommonWordList* common = nullptr);

double knowledge_f1(std::span<const std::string> generated, std::span<const std::string> gold_passage);

struct SharpnessCurve {
  std::vector<double> cumulative;  // mean cumulative probability at ranks 1..n
  std::vector<double> uniform;     // rank / n
};

/// Distributions may differ in length; shorter ones contribute 1.0 past their end.
SharpnessCurve sharpness_curve(std::span<const std::vector<double>> distributions);
SharpnessCurve sharpness_curve(std::span<const CandidateDistribution> distributions);

/// Posterior over candidates from generator log-likelihoods under a uniform prior.
std::vector<double> uniform_prior_posterior(std::span<const double> gen_log_likelihoods);

}  // namespace guiderag
