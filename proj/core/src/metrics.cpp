// SPDX-License-Identifier: Apache-2.0

#include "guiderag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include <spdlog/spdlog.h>

namespace guiderag {

namespace {

void check_sizes(std::size_t rankings, std::size_t golds) {
  if (rankings != golds) {
    throw InvalidArgument("rankings and gold ids differ in length (" + std::to_string(rankings) +
                          " vs " + std::to_string(golds) + ")");
  }
}

// 1-based rank of gold in the list, or 0 when absent.
std::size_t rank_of(const std::vector<PassageId>& ranking, PassageId gold) {
  const auto it = std::find(ranking.begin(), ranking.end(), gold);
  return it == ranking.end() ? 0 : static_cast<std::size_t>(it - ranking.begin()) + 1;
}

void warn_skipped(std::size_t skipped, const char* metric) {
  if (skipped > 0) spdlog::warn("{}: skipped {} examples without a gold passage", metric, skipped);
}

Words filter(std::span<const std::string> words, const std::unordered_set<std::string>& drop) {
  Words out;
  for (const auto& w : words) {
    if (!drop.contains(w)) out.push_back(w);
  }
  return out;
}

double overlap(std::span<const std::string> pred, std::span<const std::string> ref,
               OverlapVariant variant, std::span<const std::string> context,
               const CommonWordList* common) {
  if (variant == OverlapVariant::kF1) return token_f1(pred, ref);
  if (common == nullptr) throw InvalidArgument("Novel-F1 requires a common-word list");
  return novel_f1(pred, ref, context, *common);
}

std::size_t clamp_k(std::size_t k, std::size_t available) {
  if (k == 0) throw InvalidArgument("k must be at least 1");
  if (k > available) {
    spdlog::warn("max_f1_at_k: k={} exceeds {} available outputs; clamping", k, available);
    return available;
  }
  return k;
}

}  // namespace

RankingMetric success_at_k(std::span<const std::vector<PassageId>> rankings,
                           std::span<const std::optional<PassageId>> gold_ids, std::size_t k) {
  check_sizes(rankings.size(), gold_ids.size());
  if (k == 0) throw InvalidArgument("k must be at least 1");
  RankingMetric m;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (!gold_ids[i]) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    const std::size_t r = rank_of(rankings[i], *gold_ids[i]);
    if (r != 0 && r <= k) ++hits;
  }
  warn_skipped(m.skipped, "success_at_k");
  m.value = m.evaluated == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(m.evaluated);
  return m;
}

RankingMetric mrr(std::span<const std::vector<PassageId>> rankings,
                  std::span<const std::optional<PassageId>> gold_ids) {
  check_sizes(rankings.size(), gold_ids.size());
  RankingMetric m;
  double total = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (!gold_ids[i]) {
      ++m.skipped;
      continue;
    }
    ++m.evaluated;
    const std::size_t r = rank_of(rankings[i], *gold_ids[i]);
    if (r != 0) total += 1.0 / static_cast<double>(r);
  }
  warn_skipped(m.skipped, "mrr");
  m.value = m.evaluated == 0 ? 0.0 : total / static_cast<double>(m.evaluated);
  return m;
}

double token_f1(std::span<const std::string> prediction, std::span<const std::string> reference) {
  if (prediction.empty() && reference.empty()) return 1.0;
  if (prediction.empty() || reference.empty()) return 0.0;
  std::unordered_map<std::string_view, std::size_t> ref_counts;
  for (const auto& w : reference) ++ref_counts[w];
  std::size_t common = 0;
  for (const auto& w : prediction) {
    auto it = ref_counts.find(w);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(prediction.size());
  const double r = static_cast<double>(common) / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

CommonWordList build_common_words(std::span<const Words> training_targets, double mass_threshold,
                                  std::string source) {
  if (!(mass_threshold > 0.0 && mass_threshold < 1.0)) {
    throw InvalidArgument("common-word mass threshold must lie in (0, 1)");
  }
  std::map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& target : training_targets) {
    for (const auto& w : target) {
      ++counts[w];
      ++total;
    }
  }
  if (total == 0) throw InvalidArgument("common-word list needs a non-empty target corpus");

  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  CommonWordList list;
  list.mass_threshold = mass_threshold;
  list.source = std::move(source);
  std::size_t covered = 0;
  for (const auto& [word, count] : ordered) {
    list.words.push_back(word);
    list.set.insert(word);
    covered += count;
    if (static_cast<double>(covered) >= mass_threshold * static_cast<double>(total)) break;
  }
  list.covered_mass = static_cast<double>(covered) / static_cast<double>(total);
  return list;
}

double novel_f1(std::span<const std::string> prediction, std::span<const std::string> reference,
                std::span<const std::string> context, const CommonWordList& common) {
  std::unordered_set<std::string> drop = common.set;
  drop.insert(context.begin(), context.end());
  return token_f1(filter(prediction, drop), filter(reference, drop));
}

double max_f1_at_k(std::span<const Words> per_passage_outputs, std::span<const std::string> reference,
                   std::size_t k, OverlapVariant variant, std::span<const std::string> context,
                   const CommonWordList* common) {
  k = clamp_k(k, per_passage_outputs.size());
  double best = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    best = std::max(best, overlap(per_passage_outputs[i], reference, variant, context, common));
  }
  return best;
}

double max_f1_at_k(std::span<const Words> per_passage_outputs, std::span<const Words> references,
                   std::size_t k, OverlapVariant variant, std::span<const std::string> context,
                   const CommonWordList* common) {
  if (references.size() != per_passage_outputs.size()) {
    throw InvalidArgument("max_f1_at_k: one reference per output required");
  }
  k = clamp_k(k, per_passage_outputs.size());
  double best = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    best = std::max(best, overlap(per_passage_outputs[i], references[i], variant, context, common));
  }
  return best;
}

double knowledge_f1(std::span<const std::string> generated, std::span<const std::string> gold_passage) {
  return token_f1(generated, gold_passage);
}

SharpnessCurve sharpness_curve(std::span<const std::vector<double>> distributions) {
  if (distributions.empty()) throw InvalidArgument("sharpness_curve: no distributions");
  std::size_t n = 0;
  for (const auto& d : distributions) n = std::max(n, d.size());
  if (n == 0) throw InvalidArgument("sharpness_curve: empty distributions");

  SharpnessCurve curve;
  curve.cumulative.assign(n, 0.0);
  std::vector<double> sorted;
  for (const auto& d : distributions) {
    sorted.assign(d.begin(), d.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc = i < sorted.size() ? acc + sorted[i] : 1.0;
      curve.cumulative[i] += acc;
    }
  }
  const auto m = static_cast<double>(distributions.size());
  curve.uniform.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    curve.cumulative[i] /= m;
    curve.uniform[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  }
  return curve;
}

SharpnessCurve sharpness_curve(std::span<const CandidateDistribution> distributions) {
  std::vector<std::vector<double>> probs;
  probs.reserve(distributions.size());
  for (const auto& d : distributions) probs.push_back(d.probs);
  return sharpness_curve(probs);
}

std::vector<double> uniform_prior_posterior(std::span<const double> gen_log_likelihoods) {
  if (gen_log_likelihoods.empty()) return {};
  const double mx = *std::max_element(gen_log_likelihoods.begin(), gen_log_likelihoods.end());
  std::vector<double> out(gen_log_likelihoods.size());
  double z = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(gen_log_likelihoods[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

}  // namespace guiderag
