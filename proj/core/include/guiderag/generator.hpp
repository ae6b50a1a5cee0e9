// SPDX-License-Identifier: Apache-2.0
//
// Conditional generator P(y | x, z): a log-linear bigram model whose next-token logits mix a
// per-token bias with similarities to the context, the conditioning passage and the previous
// token,
//
//   logit(w) = bias[w] + l_ctx <e_w, enc(x)> + l_psg <e_w, enc(z)> + l_prev <e_w, e_prev>,
//
// where enc() is the unit-normalized mean of token embeddings. l_psg is the model's trust in
// the passage.

#pragma once

#include <deque>
#include <iosfwd>
#include <span>
#include <vector>

#include "guiderag/corpus.hpp"
#include "guiderag/embedder.hpp"

namespace guiderag {

struct GeneratorGrad {
  TableGrad table;
  std::vector<double> bias;
  double lambda_ctx = 0.0;
  double lambda_psg = 0.0;
  double lambda_prev = 0.0;

  GeneratorGrad() = default;
  GeneratorGrad(std::size_t vocab_size, std::size_t dim)
      : table(vocab_size, dim), bias(vocab_size, 0.0) {}

  void zero();
  void add(const GeneratorGrad& other, double scale = 1.0);
};

struct GeneratorModel {
  EmbeddingTable table;
  std::vector<double> bias;
  double lambda_ctx = 1.0;
  double lambda_psg = 1.0;
  double lambda_prev = 0.0;

  static GeneratorModel init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed,
                             double lambda_ctx = 1.0, double lambda_psg = 1.0,
                             double lambda_prev = 0.0);

  std::size_t vocab_size() const { return bias.size(); }

  /// Gradient ascent on bias and mixing weights, projected ascent on the embedding table.
  void apply_gradients(const GeneratorGrad& grad, double learning_rate);

  void write(std::ostream& out) const;
  static GeneratorModel read(std::istream& in);

  bool operator==(const GeneratorModel&) const = default;
};

struct StepDistribution {
  std::vector<double> logits;
  std::vector<double> probs;
};

/// Unit-normalized mean embedding; the zero vector for an empty sequence.
std::vector<double> mean_encoding(const EmbeddingTable& table, std::span<const TokenId> tokens);

StepDistribution step_logits(const GeneratorModel& model, std::span<const TokenId> context,
                             std::span<const TokenId> passage, TokenId prev_token);

/// Sum over target tokens and the terminal EOS of log P(y_t | x, z, y_{t-1}), with y_0 = BOS.
double log_likelihood(const GeneratorModel& model, std::span<const TokenId> context,
                      std::span<const TokenId> target, std::span<const TokenId> passage);
double log_likelihood(const GeneratorModel& model, const Example& example, const Passage& passage);

/// Scores one (context, target) pair against many passages, sharing the passage-independent
/// work. Gradients are accumulated across calls and must be flushed with finalize().
class TargetScorer {
 public:
  TargetScorer(const GeneratorModel& model, std::span<const TokenId> context,
               std::span<const TokenId> target);

  double log_likelihood(std::span<const TokenId> passage) const;

  /// Adds weight * d log P(y|x,z) / d(parameters) for the passage-specific terms and buffers
  /// the shared ones. Returns the log-likelihood.
  double accumulate_gradient(std::span<const TokenId> passage, double weight, GeneratorGrad& grad);

  /// Flushes buffered passage-independent gradient terms into `grad`.
  void finalize(GeneratorGrad& grad);

 private:
  struct Forward {
    std::vector<TokenId> passage;
    double log_likelihood = 0.0;
    std::vector<double> psg_logits;  // E * enc(z)
    std::vector<double> step_probs;  // steps x V
  };
  const Forward& forward(std::span<const TokenId> passage) const;

  const GeneratorModel& model_;
  std::vector<TokenId> context_;
  std::vector<TokenId> outputs_;  // target tokens then EOS
  std::vector<TokenId> prevs_;    // BOS then target tokens
  std::vector<double> ctx_enc_;
  double ctx_norm_ = 0.0;
  std::vector<double> ctx_logits_;   // E * enc(x)
  std::vector<double> prev_logits_;  // steps x V, E * e_prev
  std::vector<double> delta_sum_;    // sum over passages of weight * sum_t delta_t
  std::vector<double> delta_steps_;  // steps x V, sum over passages of weight * delta_t
  bool pending_ = false;
  // Forward passes by passage content, so scoring then differentiating a candidate costs one pass.
  mutable std::deque<Forward> cache_;
};

/// Gradient of log_likelihood with respect to every generator parameter.
double accumulate_log_likelihood_gradient(const GeneratorModel& model,
                                          std::span<const TokenId> context,
                                          std::span<const TokenId> target,
                                          std::span<const TokenId> passage, double weight,
                                          GeneratorGrad& grad);

enum class DecodeMode { kGreedy, kBeam };

struct Decoded {
  std::vector<TokenId> tokens;  // without BOS/EOS
  double log_prob = 0.0;        // includes the EOS step when one was emitted
};

/// Decoding-time restrictions. They remove candidates without renormalizing, so reported
/// log-probabilities remain the model's own.
struct DecodeConstraints {
  std::size_t min_len = 0;  // EOS is blocked before this many tokens
  bool no_repeat = false;   // a token may appear at most once per output
};

/// Beam search over summed step log-probabilities, stopping at EOS or max_len tokens.
/// Greedy mode is beam search with one beam. Ties prefer the lower token id, then the lower
/// beam index. BOS is never emitted.
Decoded decode(const GeneratorModel& model, std::span<const TokenId> context,
               std::span<const TokenId> passage, DecodeMode mode, std::size_t beams = 4,
               std::size_t max_len = 16, const DecodeConstraints& constraints = {});

}  // namespace guiderag
