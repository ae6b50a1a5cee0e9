// SPDX-License-Identifier: Apache-2.0
//
// Training objectives over a candidate set of passages:
//
//   marginalized:  log sum_z P_eta(z|x) P_theta(y|x,z)
//   elbo:          E_{z~Q(.|x,y)} log P_theta(y|x,z) - KL(Q || P_eta)
//
// and their exact gradients with respect to the retriever, guide and generator parameters.

#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "guiderag/generator.hpp"
#include "guiderag/retrieval.hpp"

namespace guiderag {

enum class ObjectiveKind { kMarginalized, kElbo };

std::string_view to_string(ObjectiveKind kind);
ObjectiveKind parse_objective_kind(std::string_view text);

/// Generator log-likelihoods keyed by passage id.
struct CandidateLogLikelihoods {
  std::vector<PassageId> passage_ids;
  std::vector<double> values;
};

struct ObjectiveValue {
  double value = 0.0;
  /// Marginalized: log P_eta(z) + log P_theta(y|x,z) per passage (log of each summand).
  /// ELBO: Q(z) (log P_theta(y|x,z) - log Q(z) + log P_eta(z)), summing to `value`.
  std::vector<std::pair<PassageId, double>> per_passage_terms;
  ObjectiveKind kind = ObjectiveKind::kMarginalized;
};

/// Log-space evaluation of log sum_i p_i exp(g_i). Throws on misaligned candidate sets.
ObjectiveValue marginalized_log_likelihood(const CandidateDistribution& p_eta,
                                           const CandidateLogLikelihoods& gen);

/// sum_i q_i (log q_i - log p_i), with 0 log 0 = 0. Both must cover the same ids.
double reverse_kl(const CandidateDistribution& q, const CandidateDistribution& p);

ObjectiveValue elbo(const CandidateDistribution& q, const CandidateDistribution& p_eta,
                    const CandidateLogLikelihoods& gen);

struct ModelSet {
  RetrieverModel retriever;
  RetrieverModel guide;
  GeneratorModel generator;

  bool operator==(const ModelSet&) const = default;
};

struct TrainableSet {
  bool retriever = true;
  bool guide = true;
  bool generator = true;
};

struct ModelGradients {
  TableGrad retriever;
  TableGrad guide;
  GeneratorGrad generator;

  ModelGradients() = default;
  explicit ModelGradients(const ModelSet& models);

  void zero();
  void add(const ModelGradients& other, double scale = 1.0);
};

/// One example restricted to a candidate set, at the token level.
struct ObjectiveInstance {
  ExampleId example_id = -1;
  std::span<const TokenId> context;
  std::span<const TokenId> target;
  std::vector<PassageId> candidate_ids;
  std::vector<std::span<const TokenId>> candidate_tokens;
};

ObjectiveInstance make_instance(const Example& example, const Corpus& corpus,
                                std::span<const PassageId> candidates);

struct ObjectiveEvaluation {
  ObjectiveValue objective;
  CandidateDistribution retriever_dist;
  std::optional<CandidateDistribution> guide_dist;  // ELBO only
  CandidateLogLikelihoods gen;
  double expected_log_likelihood = 0.0;  // ELBO only
  double kl = 0.0;                       // ELBO only
};

/// Evaluates the objective on `instance`. When `grads` is non-null, adds the exact gradient of
/// the objective with respect to every trainable model; frozen models receive nothing.
ObjectiveEvaluation evaluate_objective(ObjectiveKind kind, const ModelSet& models,
                                       const ObjectiveInstance& instance,
                                       const TrainableSet& trainable = {},
                                       ModelGradients* grads = nullptr);

using GradientFn = std::function<ObjectiveEvaluation(ObjectiveKind, const ModelSet&,
                                                     const ObjectiveInstance&, ModelGradients&)>;

/// The analytic gradient used in training, wrapped for check_gradients.
ObjectiveEvaluation grad_objective(ObjectiveKind kind, const ModelSet& models,
                                   const ObjectiveInstance& instance, ModelGradients& grads);

struct GradCheckReport {
  ObjectiveKind kind = ObjectiveKind::kMarginalized;
  std::size_t trials = 0;
  std::size_t parameters_checked = 0;
  double max_rel_error = 0.0;
  std::string worst_parameter;
  double step = 1e-5;
};

/// Compares `analytic` against central finite differences on seeded random instances.
/// Relative error is |a - n| / max(|a|, |n|, 1e-4). Points where a MaxSim argmax is nearly
/// tied are resampled.
GradCheckReport check_gradients(ObjectiveKind kind, std::uint64_t seed, std::size_t trials,
                                const GradientFn& analytic = grad_objective);

}  // namespace guiderag
