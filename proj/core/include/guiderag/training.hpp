// SPDX-License-Identifier: Apache-2.0
//
// Iterative closed-set training. Each round re-indexes the corpus with the current retriever
// and guide, fixes the per-example top-r closed-sets, then runs many inner epochs over them,
// recomputing the candidate distributions with the live parameters at every step.

#pragma once

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "guiderag/corpus.hpp"
#include "guiderag/objectives.hpp"

namespace guiderag {

struct ConvergenceConfig {
  std::size_t patience = 5;
  double min_delta = 1e-4;

  bool operator==(const ConvergenceConfig&) const = default;
};

struct TrainConfig {
  std::size_t rounds = 2;
  std::size_t r = 25;
  std::size_t inner_epochs = 30;
  double learning_rate = 0.1;
  std::vector<double> alpha_schedule{0.0, 0.5};
  ObjectiveKind objective = ObjectiveKind::kElbo;
  std::size_t elbo_sample_k = 8;  // 0 = exact enumeration over the closed-set union
  std::size_t marginalized_k = 10;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  ConvergenceConfig convergence;
  std::size_t minibatch_size = 32;
  bool joint_guide = true;
  std::size_t dim = 16;
  bool convergence_phase = false;
  std::size_t max_convergence_epochs = 100;
  std::size_t threads = 1;

  void validate() const;
  /// alpha_schedule[round], repeating the last entry when the schedule is shorter.
  double alpha_for_round(std::size_t round) const;

  bool operator==(const TrainConfig&) const = default;
};

struct ClosedSet {
  ExampleId example_id = 0;
  std::vector<PassageId> retriever_ids;
  std::vector<PassageId> guide_ids;
  std::vector<PassageId> union_ids;  // retriever_ids, then guide-only ids

  bool operator==(const ClosedSet&) const = default;
};

/// Exact top-r per example under each model. r is clamped to the corpus size.
std::vector<ClosedSet> build_closed_sets(const RetrieverModel& retriever,
                                         const RetrieverModel& guide, const Corpus& corpus,
                                         std::span<const Example> examples, std::size_t r,
                                         std::size_t threads = 1);

struct PassageDraw {
  PassageId id = 0;
  bool from_retriever = false;
};

/// Bernoulli(alpha) picks P_eta, otherwise Q; then a passage from the chosen distribution.
PassageDraw sample_passage(double alpha, const CandidateDistribution& p_eta,
                           const CandidateDistribution& q, std::mt19937_64& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  double objective = 0.0;
  double expected_log_likelihood = 0.0;  // ELBO only
  double kl = 0.0;                       // ELBO only

  bool operator==(const EpochRecord&) const = default;
};

/// Where the generator's conditioning passages came from during one round.
struct SampleAudit {
  std::size_t draws_from_retriever = 0;
  std::size_t draws_from_guide = 0;
  std::size_t outside_retriever_set = 0;  // drawn passages absent from the retriever closed-set
  std::size_t outside_guide_set = 0;

  bool operator==(const SampleAudit&) const = default;
};

struct RoundRecord {
  std::size_t round = 0;
  double alpha = 0.0;
  std::size_t closed_sets = 0;
  double mean_union_size = 0.0;
  std::vector<EpochRecord> epochs;
  SampleAudit audit;

  bool operator==(const RoundRecord&) const = default;
};

struct ConvergenceEpoch {
  std::size_t epoch = 0;
  double retriever_objective = 0.0;  // -KL(Q || P_eta)
  double generator_objective = 0.0;  // E_Q log P_theta
  bool retriever_active = true;
  bool generator_active = true;

  bool operator==(const ConvergenceEpoch&) const = default;
};

struct ConvergenceRecord {
  std::vector<ConvergenceEpoch> epochs;
  std::optional<std::size_t> retriever_stopped_epoch;
  std::optional<std::size_t> generator_stopped_epoch;

  bool operator==(const ConvergenceRecord&) const = default;
};

struct TrainReport {
  std::vector<RoundRecord> rounds;
  std::optional<ConvergenceRecord> convergence;
  std::vector<std::string> checkpoints;

  bool operator==(const TrainReport&) const = default;
};

/// Raised when an objective turns non-finite. Models are restored to the start of the
/// failing epoch before it is thrown.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(std::size_t round, std::size_t epoch, const std::string& detail);
  std::size_t round;
  std::size_t epoch;
};

ModelSet init_models(const TrainConfig& config, std::size_t vocab_size);

RoundRecord train_round(ModelSet& models, const Corpus& corpus, std::span<const Example> examples,
                        std::span<const ClosedSet> closed_sets, const TrainConfig& config,
                        std::size_t round_index);

/// ELBO only. Freezes the guide and trains the retriever on the KL term and the generator on
/// the expectation term, each with its own early stopping.
ConvergenceRecord train_to_convergence(ModelSet& models, const Corpus& corpus,
                                       std::span<const Example> examples,
                                       std::span<const ClosedSet> closed_sets,
                                       const TrainConfig& config);

struct TrainResult {
  ModelSet models;
  TrainReport report;
};

struct RunOptions {
  /// Experiment directory for round checkpoints; nothing is written when empty.
  std::filesystem::path out_dir;
  /// Continue after this completed round, loading its checkpoints from out_dir.
  std::optional<std::size_t> resume_after_round;
};

TrainResult run_training(const TrainConfig& config, const Corpus& corpus,
                         std::span<const Example> examples, const RunOptions& options = {});

}  // namespace guiderag
