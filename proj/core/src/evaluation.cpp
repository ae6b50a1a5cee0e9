// SPDX-License-Identifier: Apache-2.0

#include "guiderag/evaluation.hpp"

#include <algorithm>
#include <sstream>
#include <exception>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

namespace guiderag {

namespace {

Words to_words(std::span<const TokenId> tokens, const Vocabulary& vocab) {
  Words out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(vocab.word(t));
  return out;
}

struct PerExample {
  std::vector<PassageId> retriever_ranking;
  std::vector<PassageId> guide_ranking;
  double f1_at_1 = 0.0, novel_f1_at_1 = 0.0, max_f1 = 0.0, max_novel_f1 = 0.0;
  double target_f1 = 0.0, target_novel_f1 = 0.0;
  std::optional<double> knowledge_f1;
  std::vector<double> retriever_probs, guide_probs, posterior_probs;
};

std::vector<PassageId> ids_of(const std::vector<ScoredPassage>& scored, std::size_t n) {
  std::vector<PassageId> ids;
  for (std::size_t i = 0; i < std::min(n, scored.size()); ++i) ids.push_back(scored[i].id);
  return ids;
}

PerExample evaluate_one(const ModelSet& models, const Corpus& corpus, const Example& ex,
                        const EvalConfig& cfg, const DecodeConstraints& constraints,
                        const CommonWordList& common) {
  const Vocabulary& vocab = corpus.vocabulary();
  const std::size_t depth = std::min(std::max(cfg.ranking_depth, cfg.sharpness_depth), corpus.size());
  PerExample out;

  const auto ret = top_k(models.retriever, ex.context_tokens, corpus, depth);
  const auto gq = guide_query(ex);
  const auto gui = top_k(models.guide, gq, corpus, depth);
  out.retriever_ranking = ids_of(ret, cfg.ranking_depth);
  out.guide_ranking = ids_of(gui, cfg.ranking_depth);

  const Words context = to_words(ex.context_tokens, vocab);
  const Words target = to_words(ex.target_tokens, vocab);
  const std::size_t n_gen = std::min(cfg.max_at, ret.size());
  std::vector<Words> outputs, passages;
  for (std::size_t i = 0; i < n_gen; ++i) {
    const Passage& p = corpus.passage(ret[i].id);
    const Decoded d = decode(models.generator, ex.context_tokens, p.tokens, DecodeMode::kBeam,
                             cfg.beams, cfg.max_len, constraints);
    outputs.push_back(to_words(d.tokens, vocab));
    passages.push_back(to_words(p.tokens, vocab));
  }
  if (!outputs.empty()) {
    out.f1_at_1 = token_f1(outputs[0], passages[0]);
    out.novel_f1_at_1 = novel_f1(outputs[0], passages[0], context, common);
    out.max_f1 = max_f1_at_k(outputs, passages, n_gen, OverlapVariant::kF1);
    out.max_novel_f1 = max_f1_at_k(outputs, passages, n_gen, OverlapVariant::kNovelF1, context, &common);
    out.target_f1 = token_f1(outputs[0], target);
    out.target_novel_f1 = novel_f1(outputs[0], target, context, common);
    if (ex.gold_passage_id) {
      out.knowledge_f1 =
          knowledge_f1(outputs[0], to_words(corpus.passage(*ex.gold_passage_id).tokens, vocab));
    }
  }

  const auto ret_ids = ids_of(ret, cfg.sharpness_depth);
  const auto gui_ids = ids_of(gui, cfg.sharpness_depth);
  out.retriever_probs = distribution(models.retriever, ex.context_tokens, corpus, ret_ids).probs;
  out.guide_probs = distribution(models.guide, gq, corpus, gui_ids).probs;
  TargetScorer scorer(models.generator, ex.context_tokens, ex.target_tokens);
  std::vector<double> gen;
  for (PassageId id : ret_ids) gen.push_back(scorer.log_likelihood(corpus.passage(id).tokens));
  out.posterior_probs = uniform_prior_posterior(gen);
  return out;
}

RelevanceMetrics relevance(const std::vector<std::vector<PassageId>>& rankings,
                           const std::vector<std::optional<PassageId>>& gold,
                           const std::vector<std::size_t>& ks) {
  RelevanceMetrics m;
  const auto r = mrr(rankings, gold);
  m.mrr = r.value;
  m.evaluated = r.evaluated;
  m.skipped = r.skipped;
  for (std::size_t k : ks) m.success_at[k] = success_at_k(rankings, gold, k).value;
  return m;
}

nlohmann::ordered_json curve_json(const SharpnessCurve& c) { return c.cumulative; }

nlohmann::ordered_json relevance_json(const RelevanceMetrics& m) {
  nlohmann::ordered_json j{{"mrr", m.mrr}};
  for (const auto& [k, v] : m.success_at) j["success_at_" + std::to_string(k)] = v;
  j["evaluated"] = m.evaluated;
  j["skipped"] = m.skipped;
  return j;
}

}  // namespace

EvalReport evaluate(const ModelSet& models, const Corpus& corpus, std::span<const Example> train,
                    std::span<const Example> eval, const EvalConfig& cfg) {
  if (eval.empty()) throw InvalidArgument("no examples to evaluate");
  if (cfg.ks.empty()) throw InvalidArgument("at least one k is required");
  for (std::size_t k : cfg.ks) {
    if (k == 0) throw InvalidArgument("k must be at least 1");
  }
  if (cfg.max_at == 0 || cfg.sharpness_depth == 0 || cfg.ranking_depth == 0) {
    throw InvalidArgument("evaluation depths must be positive");
  }

  std::vector<Words> targets;
  for (const auto& ex : train) targets.push_back(to_words(ex.target_tokens, corpus.vocabulary()));
  if (targets.empty()) {
    for (const auto& ex : eval) targets.push_back(to_words(ex.target_tokens, corpus.vocabulary()));
  }
  const CommonWordList common = build_common_words(targets, cfg.common_mass, "train targets");

  DecodeConstraints constraints;
  constraints.no_repeat = cfg.no_repeat;
  if (cfg.min_len) {
    constraints.min_len = *cfg.min_len;
  } else {
    std::vector<std::size_t> lengths;
    for (const auto& t : targets) lengths.push_back(t.size());
    std::nth_element(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2),
                     lengths.end());
    constraints.min_len = std::min(lengths[lengths.size() / 2], cfg.max_len);
  }

  std::vector<PerExample> per(eval.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.threads, eval.size()));
  std::vector<std::exception_ptr> errors(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < eval.size(); i += workers) {
        per[i] = evaluate_one(models, corpus, eval[i], cfg, constraints, common);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvalReport rep;
  rep.examples = eval.size();
  rep.max_at = cfg.max_at;
  rep.common_words = common.words.size();
  std::vector<std::vector<PassageId>> ret_rank, gui_rank;
  std::vector<std::optional<PassageId>> gold;
  std::vector<std::vector<double>> ret_probs, gui_probs, post_probs;
  std::size_t with_gold = 0;
  for (std::size_t i = 0; i < per.size(); ++i) {
    auto& p = per[i];
    ret_rank.push_back(std::move(p.retriever_ranking));
    gui_rank.push_back(std::move(p.guide_ranking));
    gold.push_back(eval[i].gold_passage_id);
    rep.f1_at_1 += p.f1_at_1;
    rep.novel_f1_at_1 += p.novel_f1_at_1;
    rep.max_f1_at_k += p.max_f1;
    rep.max_novel_f1_at_k += p.max_novel_f1;
    rep.target_f1 += p.target_f1;
    rep.target_novel_f1 += p.target_novel_f1;
    if (p.knowledge_f1) {
      rep.knowledge_f1 += *p.knowledge_f1;
      ++with_gold;
    }
    ret_probs.push_back(std::move(p.retriever_probs));
    gui_probs.push_back(std::move(p.guide_probs));
    post_probs.push_back(std::move(p.posterior_probs));
  }
  const auto n = static_cast<double>(per.size());
  for (double* v : {&rep.f1_at_1, &rep.novel_f1_at_1, &rep.max_f1_at_k, &rep.max_novel_f1_at_k,
                    &rep.target_f1, &rep.target_novel_f1}) {
    *v /= n;
  }
  rep.knowledge_f1 = with_gold == 0 ? 0.0 : rep.knowledge_f1 / static_cast<double>(with_gold);
  rep.retriever = relevance(ret_rank, gold, cfg.ks);
  rep.guide = relevance(gui_rank, gold, cfg.ks);
  rep.retriever_sharpness = sharpness_curve(ret_probs);
  rep.guide_sharpness = sharpness_curve(gui_probs);
  rep.generator_posterior_sharpness = sharpness_curve(post_probs);
  return rep;
}

std::string to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["examples"] = r.examples;
  j["retriever"] = relevance_json(r.retriever);
  j["guide"] = relevance_json(r.guide);
  const std::string at = std::to_string(r.max_at);
  j["groundedness"] = {{"f1_at_1", r.f1_at_1},
                       {"novel_f1_at_1", r.novel_f1_at_1},
                       {"max_f1_at_" + at, r.max_f1_at_k},
                       {"max_novel_f1_at_" + at, r.max_novel_f1_at_k}};
  j["end_to_end"] = {{"f1", r.target_f1},
                     {"novel_f1", r.target_novel_f1},
                     {"knowledge_f1", r.knowledge_f1}};
  j["common_words"] = r.common_words;
  j["sharpness"] = {{"retriever", curve_json(r.retriever_sharpness)},
                    {"guide", curve_json(r.guide_sharpness)},
                    {"generator_posterior", curve_json(r.generator_posterior_sharpness)},
                    {"uniform", r.retriever_sharpness.uniform}};
  return j.dump(2) + "\n";
}

std::string sharpness_csv(const EvalReport& r) {
  std::string out = "rank,retriever,guide,generator_posterior,uniform\n";
  const std::size_t n = std::max({r.retriever_sharpness.cumulative.size(),
                                  r.guide_sharpness.cumulative.size(),
                                  r.generator_posterior_sharpness.cumulative.size()});
  auto at = [](const std::vector<double>& v, std::size_t i) {
    return v.empty() ? 1.0 : (i < v.size() ? v[i] : 1.0);
  };
  for (std::size_t i = 0; i < n; ++i) {
    out += fmt::format("{},{:.10g},{:.10g},{:.10g},{:.10g}\n", i + 1,
                       at(r.retriever_sharpness.cumulative, i), at(r.guide_sharpness.cumulative, i),
                       at(r.generator_posterior_sharpness.cumulative, i),
                       static_cast<double>(i + 1) / static_cast<double>(n));
  }
  return out;
}

}  // namespace guiderag
