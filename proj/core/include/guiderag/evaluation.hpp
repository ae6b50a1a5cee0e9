// SPDX-License-Identifier: Apache-2.0
//
// End-to-end evaluation of a trained model set on held-out examples.

#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "guiderag/metrics.hpp"
#include "guiderag/objectives.hpp"

namespace guiderag {

struct EvalConfig {
  std::vector<std::size_t> ks{1, 5, 10};
  std::size_t ranking_depth = 100;
  std::size_t max_at = 5;  // depth of the Max-F1@k metrics
  std::size_t beams = 4;
  std::size_t max_len = 16;
  /// Shortest decode; unset means the median training-target length.
  std::optional<std::size_t> min_len;
  bool no_repeat = true;
  double common_mass = 0.5;
  std::size_t sharpness_depth = 25;
  std::size_t threads = 1;
};

struct RelevanceMetrics {
  double mrr = 0.0;
  std::map<std::size_t, double> success_at;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
};

struct EvalReport {
  std::size_t examples = 0;
  RelevanceMetrics retriever;
  RelevanceMetrics guide;

  // Groundedness: decodes scored against their own conditioning passage.
  double f1_at_1 = 0.0;
  double novel_f1_at_1 = 0.0;
  double max_f1_at_k = 0.0;
  double max_novel_f1_at_k = 0.0;

  // End to end: the rank-1 decode scored against the target and the gold passage.
  double target_f1 = 0.0;
  double target_novel_f1 = 0.0;
  double knowledge_f1 = 0.0;

  std::size_t max_at = 5;
  std::size_t common_words = 0;
  SharpnessCurve retriever_sharpness;
  SharpnessCurve guide_sharpness;
  SharpnessCurve generator_posterior_sharpness;
};

/// `train` supplies the common-word list; `eval` is scored.
EvalReport evaluate(const ModelSet& models, const Corpus& corpus, std::span<const Example> train,
                    std::span<const Example> eval, const EvalConfig& config = {});

std::string to_json(const EvalReport& report);
/// Columns: rank, retriever, guide, generator_posterior, uniform.
std::string sharpness_csv(const EvalReport& report);

}  // namespace guiderag
