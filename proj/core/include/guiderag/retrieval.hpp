// SPDX-License-Identifier: Apache-2.0
//
// Late-interaction (MaxSim) scoring, exact top-k search and candidate distributions.
// The same machinery backs both the retriever P(z|x) and the guide Q(z|x,y).

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "guiderag/corpus.hpp"
#include "guiderag/embedder.hpp"

namespace guiderag {

enum class RetrieverRole { kRetriever, kGuide };

std::string_view to_string(RetrieverRole role);

struct RetrieverModel {
  EmbeddingTable table;
  double temperature = 1.0;
  RetrieverRole role = RetrieverRole::kRetriever;

  static RetrieverModel init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed,
                             RetrieverRole role, double temperature = 1.0);

  void write(std::ostream& out) const;
  static RetrieverModel read(std::istream& in);

  bool operator==(const RetrieverModel&) const = default;
};

/// Softmax over an explicit candidate set. Entries are sorted by descending probability,
/// ties broken by ascending passage id.
struct CandidateDistribution {
  ExampleId example_id = -1;
  std::vector<PassageId> passage_ids;
  std::vector<double> probs;
  std::vector<double> log_probs;
  std::vector<double> scores;
  RetrieverRole model_role = RetrieverRole::kRetriever;

  std::size_t size() const { return passage_ids.size(); }
  std::optional<std::size_t> index_of(PassageId id) const;
};

/// Query for the guide retriever: context tokens followed by target tokens.
std::vector<TokenId> guide_query(std::span<const TokenId> context, std::span<const TokenId> target);
std::vector<TokenId> guide_query(const Example& example);

/// Score plus, per query token, the index of the passage token attaining the max
/// (lowest index on ties). The argmax is what the subgradient flows through.
struct MaxSimMatch {
  double score = 0.0;
  std::vector<std::uint32_t> argmax;
};

MaxSimMatch maxsim_match(const EmbeddingTable& table, std::span<const TokenId> query,
                         std::span<const TokenId> passage);

/// S(q, d) = sum_i max_j <E_qi, E_dj>.
double maxsim_score(const EmbeddingTable& table, std::span<const TokenId> query,
                    std::span<const TokenId> passage);
double maxsim_score(const RetrieverModel& model, std::span<const TokenId> query,
                    std::span<const TokenId> passage);

/// Adds weight * dS/dE into `grad`, holding each argmax fixed.
void accumulate_maxsim_gradient(const EmbeddingTable& table, std::span<const TokenId> query,
                                std::span<const TokenId> passage, const MaxSimMatch& match,
                                double weight, TableGrad& grad);

struct ScoredPassage {
  PassageId id = 0;
  double score = 0.0;

  bool operator==(const ScoredPassage&) const = default;
};

/// Exact full-scan top-k: descending score, ties by ascending passage id.
std::vector<ScoredPassage> top_k(const RetrieverModel& model, std::span<const TokenId> query,
                                 const Corpus& corpus, std::size_t k, std::size_t threads = 1);

CandidateDistribution make_distribution(std::span<const PassageId> ids,
                                        std::span<const double> scores, double temperature,
                                        RetrieverRole role, ExampleId example_id = -1);

/// softmax(score / temperature) over exactly `candidates`.
CandidateDistribution distribution(const RetrieverModel& model, std::span<const TokenId> query,
                                   const Corpus& corpus, std::span<const PassageId> candidates,
                                   ExampleId example_id = -1);

/// Per-passage encoded token vectors under a frozen model.
struct EncodedIndex {
  std::size_t dim = 0;
  std::vector<PassageId> passage_ids;
  std::vector<std::vector<double>> vectors;  // one flat row-major block per passage

  bool operator==(const EncodedIndex&) const = default;
};

EncodedIndex build_index(const RetrieverModel& model, const Corpus& corpus);
void write_index(const EncodedIndex& index, const std::filesystem::path& path);
EncodedIndex read_index(const std::filesystem::path& path);

}  // namespace guiderag
