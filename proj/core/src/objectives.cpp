// SPDX-License-Identifier: Apache-2.0

#include "guiderag/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace guiderag {

std::string_view to_string(ObjectiveKind kind) {
  return kind == ObjectiveKind::kElbo ? "elbo" : "marginalized";
}

ObjectiveKind parse_objective_kind(std::string_view text) {
  if (text == "elbo") return ObjectiveKind::kElbo;
  if (text == "marginalized" || text == "marg") return ObjectiveKind::kMarginalized;
  throw InvalidArgument("unknown objective '" + std::string(text) + "'");
}

namespace {

/// For every entry of `dist`, its index in `ids`. Throws unless the id sets are identical.
std::vector<std::size_t> align(const CandidateDistribution& dist, std::span<const PassageId> ids,
                               const char* what) {
  if (dist.size() != ids.size()) {
    throw InvalidArgument(std::string(what) + ": misaligned candidate lists (" +
                          std::to_string(dist.size()) + " vs " + std::to_string(ids.size()) + ")");
  }
  std::unordered_map<PassageId, std::size_t> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos.emplace(ids[i], i);
  std::vector<std::size_t> out(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    auto it = pos.find(dist.passage_ids[i]);
    if (it == pos.end()) {
      throw InvalidArgument(std::string(what) + ": misaligned candidate lists (passage " +
                            std::to_string(dist.passage_ids[i]) + " missing)");
    }
    out[i] = it->second;
  }
  return out;
}

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

ObjectiveValue marginalized_log_likelihood(const CandidateDistribution& p_eta,
                                           const CandidateLogLikelihoods& gen) {
  if (gen.values.size() != gen.passage_ids.size()) {
    throw InvalidArgument("marginalized: ids/values size mismatch");
  }
  const auto idx = align(p_eta, gen.passage_ids, "marginalized");
  ObjectiveValue out;
  out.kind = ObjectiveKind::kMarginalized;
  std::vector<double> terms(p_eta.size());
  for (std::size_t i = 0; i < p_eta.size(); ++i) {
    terms[i] = p_eta.log_probs[i] + gen.values[idx[i]];
    out.per_passage_terms.emplace_back(p_eta.passage_ids[i], terms[i]);
  }
  out.value = log_sum_exp(terms);
  return out;
}

double reverse_kl(const CandidateDistribution& q, const CandidateDistribution& p) {
  const auto idx = align(q, p.passage_ids, "reverse_kl");
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q.probs[i] == 0.0) continue;
    const std::size_t j = idx[i];
    if (p.probs[j] == 0.0 && !std::isfinite(p.log_probs[j])) {
      throw NumericalError("reverse_kl: p is zero where q is positive (passage " +
                           std::to_string(q.passage_ids[i]) + ")");
    }
    kl += q.probs[i] * (q.log_probs[i] - p.log_probs[j]);
  }
  return kl;
}

ObjectiveValue elbo(const CandidateDistribution& q, const CandidateDistribution& p_eta,
                    const CandidateLogLikelihoods& gen) {
  if (gen.values.size() != gen.passage_ids.size()) {
    throw InvalidArgument("elbo: ids/values size mismatch");
  }
  const auto q_to_gen = align(q, gen.passage_ids, "elbo");
  const auto q_to_p = align(q, p_eta.passage_ids, "elbo");
  ObjectiveValue out;
  out.kind = ObjectiveKind::kElbo;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double term = 0.0;
    if (q.probs[i] != 0.0) {
      term = q.probs[i] *
             (gen.values[q_to_gen[i]] - q.log_probs[i] + p_eta.log_probs[q_to_p[i]]);
    }
    out.per_passage_terms.emplace_back(q.passage_ids[i], term);
    out.value += term;
  }
  return out;
}

ModelGradients::ModelGradients(const ModelSet& models)
    : retriever(models.retriever.table.vocab_size(), models.retriever.table.dim()),
      guide(models.guide.table.vocab_size(), models.guide.table.dim()),
      generator(models.generator.table.vocab_size(), models.generator.table.dim()) {}

void ModelGradients::zero() {
  retriever.zero();
  guide.zero();
  generator.zero();
}

void ModelGradients::add(const ModelGradients& other, double scale) {
  retriever.add(other.retriever, scale);
  guide.add(other.guide, scale);
  generator.add(other.generator, scale);
}

ObjectiveInstance make_instance(const Example& example, const Corpus& corpus,
                                std::span<const PassageId> candidates) {
  ObjectiveInstance inst;
  inst.example_id = example.id;
  inst.context = example.context_tokens;
  inst.target = example.target_tokens;
  inst.candidate_ids.assign(candidates.begin(), candidates.end());
  for (PassageId id : candidates) inst.candidate_tokens.emplace_back(corpus.passage(id).tokens);
  return inst;
}

namespace {

struct ScoredCandidates {
  std::vector<double> scores;
  std::vector<MaxSimMatch> matches;
};

ScoredCandidates score_candidates(const RetrieverModel& model, std::span<const TokenId> query,
                                  const ObjectiveInstance& inst) {
  ScoredCandidates sc;
  for (const auto& tokens : inst.candidate_tokens) {
    sc.matches.push_back(maxsim_match(model.table, query, tokens));
    sc.scores.push_back(sc.matches.back().score);
  }
  return sc;
}

/// Position of each candidate (instance order) inside a sorted distribution.
std::vector<std::size_t> positions(const CandidateDistribution& d, const ObjectiveInstance& inst) {
  std::unordered_map<PassageId, std::size_t> pos;
  for (std::size_t i = 0; i < d.size(); ++i) pos.emplace(d.passage_ids[i], i);
  std::vector<std::size_t> out;
  for (PassageId id : inst.candidate_ids) out.push_back(pos.at(id));
  return out;
}

void check_all_finite(const ObjectiveEvaluation& ev) {
  if (!std::isfinite(ev.objective.value)) throw NumericalError("objective is not finite");
  for (double g : ev.gen.values) {
    if (!std::isfinite(g)) throw NumericalError("generator log-likelihood is not finite");
  }
}

}  // namespace

ObjectiveEvaluation evaluate_objective(ObjectiveKind kind, const ModelSet& models,
                                       const ObjectiveInstance& inst, const TrainableSet& trainable,
                                       ModelGradients* grads) {
  const std::size_t n = inst.candidate_ids.size();
  if (n == 0) throw InvalidArgument("objective: empty candidate set");
  if (inst.candidate_tokens.size() != n) throw InvalidArgument("objective: malformed instance");

  ObjectiveEvaluation ev;
  const auto r_sc = score_candidates(models.retriever, inst.context, inst);
  ev.retriever_dist = make_distribution(inst.candidate_ids, r_sc.scores,
                                        models.retriever.temperature, models.retriever.role,
                                        inst.example_id);
  const auto r_pos = positions(ev.retriever_dist, inst);

  std::vector<TokenId> gq;
  ScoredCandidates g_sc;
  std::vector<std::size_t> g_pos;
  if (kind == ObjectiveKind::kElbo) {
    gq = guide_query(inst.context, inst.target);
    g_sc = score_candidates(models.guide, gq, inst);
    ev.guide_dist = make_distribution(inst.candidate_ids, g_sc.scores, models.guide.temperature,
                                      models.guide.role, inst.example_id);
    g_pos = positions(*ev.guide_dist, inst);
  }

  TargetScorer scorer(models.generator, inst.context, inst.target);
  ev.gen.passage_ids = inst.candidate_ids;
  ev.gen.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) ev.gen.values[i] = scorer.log_likelihood(inst.candidate_tokens[i]);

  // Per-candidate weights on the generator log-likelihood and on the retriever/guide logits.
  std::vector<double> gen_weight(n), retr_coef(n), guide_coef(n, 0.0);
  if (kind == ObjectiveKind::kMarginalized) {
    ev.objective = marginalized_log_likelihood(ev.retriever_dist, ev.gen);
    for (std::size_t i = 0; i < n; ++i) {
      const double log_p = ev.retriever_dist.log_probs[r_pos[i]];
      const double post = std::exp(log_p + ev.gen.values[i] - ev.objective.value);
      gen_weight[i] = post;
      retr_coef[i] = (post - std::exp(log_p)) / models.retriever.temperature;
    }
  } else {
    const auto& q = *ev.guide_dist;
    const auto& p = ev.retriever_dist;
    ev.objective = elbo(q, p, ev.gen);
    ev.kl = reverse_kl(q, p);
    std::vector<double> c(n);
    double c_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double qi = q.probs[g_pos[i]];
      ev.expected_log_likelihood += qi * ev.gen.values[i];
      c[i] = ev.gen.values[i] - q.log_probs[g_pos[i]] + p.log_probs[r_pos[i]];
      c_mean += qi * c[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double qi = q.probs[g_pos[i]];
      gen_weight[i] = qi;
      retr_coef[i] = (qi - p.probs[r_pos[i]]) / models.retriever.temperature;
      guide_coef[i] = qi * (c[i] - c_mean) / models.guide.temperature;
    }
  }
  check_all_finite(ev);

  if (grads != nullptr) {
    if (trainable.generator) {
      for (std::size_t i = 0; i < n; ++i) {
        if (gen_weight[i] != 0.0) {
          scorer.accumulate_gradient(inst.candidate_tokens[i], gen_weight[i], grads->generator);
        }
      }
      scorer.finalize(grads->generator);
    }
    if (trainable.retriever) {
      for (std::size_t i = 0; i < n; ++i) {
        accumulate_maxsim_gradient(models.retriever.table, inst.context, inst.candidate_tokens[i],
                                   r_sc.matches[i], retr_coef[i], grads->retriever);
      }
    }
    if (trainable.guide && kind == ObjectiveKind::kElbo) {
      for (std::size_t i = 0; i < n; ++i) {
        accumulate_maxsim_gradient(models.guide.table, gq, inst.candidate_tokens[i],
                                   g_sc.matches[i], guide_coef[i], grads->guide);
      }
    }
  }
  return ev;
}

ObjectiveEvaluation grad_objective(ObjectiveKind kind, const ModelSet& models,
                                   const ObjectiveInstance& instance, ModelGradients& grads) {
  return evaluate_objective(kind, models, instance, TrainableSet{}, &grads);
}

}  // namespace guiderag
