// SPDX-License-Identifier: Apache-2.0

#include "guiderag/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "guiderag/checkpoint.hpp"

namespace guiderag {

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum Stream : std::uint64_t {
  kRetrieverInit = 1,
  kGuideInit = 2,
  kGeneratorInit = 3,
  kRoundRng = 4,
  kConvergenceRng = 5,
};

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Callers write to disjoint slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> workers;
    for (std::size_t t = 0; t < threads; ++t) {
      workers.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < n; i += threads) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<PassageId> ids_of(std::span<const ScoredPassage> scored) {
  std::vector<PassageId> ids;
  for (const auto& s : scored) ids.push_back(s.id);
  return ids;
}

/// Per-example candidate set for one training step, plus how it was drawn.
struct StepPlan {
  std::size_t example_index = 0;
  std::vector<PassageId> candidates;
};

class CandidatePlanner {
 public:
  CandidatePlanner(const TrainConfig& config, const Corpus& corpus, double alpha)
      : config_(config), corpus_(corpus), alpha_(alpha) {}

  std::vector<PassageId> plan(const ModelSet& models, const Example& ex, const ClosedSet& cs,
                              std::mt19937_64& rng, SampleAudit& audit) const {
    if (config_.objective == ObjectiveKind::kMarginalized) {
      // Current top-k of the retriever inside its fixed closed-set.
      const auto d = distribution(models.retriever, ex.context_tokens, corpus_, cs.retriever_ids);
      const std::size_t k = std::min(config_.marginalized_k, d.size());
      return {d.passage_ids.begin(), d.passage_ids.begin() + static_cast<std::ptrdiff_t>(k)};
    }
    if (config_.elbo_sample_k == 0) return cs.union_ids;

    const auto p = distribution(models.retriever, ex.context_tokens, corpus_, cs.retriever_ids);
    const auto q = distribution(models.guide, guide_query(ex), corpus_, cs.guide_ids);
    std::vector<PassageId> drawn;
    for (std::size_t s = 0; s < config_.elbo_sample_k; ++s) {
      const auto draw = sample_passage(alpha_, p, q, rng);
      ++(draw.from_retriever ? audit.draws_from_retriever : audit.draws_from_guide);
      if (!p.index_of(draw.id)) ++audit.outside_retriever_set;
      if (!q.index_of(draw.id)) ++audit.outside_guide_set;
      if (std::find(drawn.begin(), drawn.end(), draw.id) == drawn.end()) drawn.push_back(draw.id);
    }
    return drawn;
  }

 private:
  const TrainConfig& config_;
  const Corpus& corpus_;
  double alpha_;
};

struct MinibatchResult {
  double objective = 0.0;
  double expected_log_likelihood = 0.0;
  double kl = 0.0;
};

/// Evaluates and differentiates every planned example, reduces the gradients in example-id
/// order and takes one ascent step on the trainable models.
MinibatchResult run_minibatch(ModelSet& models, const Corpus& corpus,
                              std::span<const Example> examples, std::vector<StepPlan> plans,
                              const TrainConfig& config, const TrainableSet& trainable,
                              double learning_rate) {
  std::sort(plans.begin(), plans.end(), [&](const StepPlan& a, const StepPlan& b) {
    return examples[a.example_index].id < examples[b.example_index].id;
  });
  const std::size_t n = plans.size();
  std::vector<ModelGradients> grads(n);
  std::vector<ObjectiveEvaluation> evals(n);
  std::vector<std::string> failures(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    try {
      grads[i] = ModelGradients(models);
      const auto inst = make_instance(examples[plans[i].example_index], corpus, plans[i].candidates);
      evals[i] = evaluate_objective(config.objective, models, inst, trainable, &grads[i]);
    } catch (const Error& e) {
      failures[i] = e.what();
    }
  });
  for (const auto& f : failures) {
    if (!f.empty()) throw NumericalError(f);
  }

  MinibatchResult out;
  ModelGradients total(models);
  for (std::size_t i = 0; i < n; ++i) {
    total.add(grads[i]);
    out.objective += evals[i].objective.value;
    out.expected_log_likelihood += evals[i].expected_log_likelihood;
    out.kl += evals[i].kl;
  }
  if (!std::isfinite(out.objective)) throw NumericalError("objective is not finite");

  if (learning_rate > 0.0 && n > 0) {
    const double scale = 1.0 / static_cast<double>(n);
    if (trainable.retriever) {
      models.retriever.table.grad().add(total.retriever, scale);
      models.retriever.table.apply_gradients(learning_rate);
    }
    if (trainable.guide) {
      models.guide.table.grad().add(total.guide, scale);
      models.guide.table.apply_gradients(learning_rate);
    }
    if (trainable.generator) {
      GeneratorGrad g(models.generator.vocab_size(), models.generator.table.dim());
      g.add(total.generator, scale);
      models.generator.apply_gradients(g, learning_rate);
    }
  }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void check_alignment(std::span<const Example> examples, std::span<const ClosedSet> closed_sets) {
  if (examples.size() != closed_sets.size()) {
    throw InvalidArgument("closed-sets do not match the example list");
  }
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].id != closed_sets[i].example_id) {
      throw InvalidArgument("closed-set order does not match example " +
                            std::to_string(examples[i].id));
    }
  }
}

}  // namespace

DivergenceError::DivergenceError(std::size_t round_, std::size_t epoch_, const std::string& detail)
    : NumericalError("training diverged in round " + std::to_string(round_) + ", epoch " +
                     std::to_string(epoch_) + ": " + detail),
      round(round_),
      epoch(epoch_) {}

void TrainConfig::validate() const {
  if (rounds < 1) throw InvalidArgument("rounds must be >= 1");
  if (r < 1) throw InvalidArgument("r must be >= 1");
  if (alpha_schedule.empty()) throw InvalidArgument("alpha schedule must not be empty");
  for (double a : alpha_schedule) {
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("alpha values must lie in [0, 1]");
  }
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw InvalidArgument("learning rate must be finite and non-negative");
  }
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (minibatch_size < 1) throw InvalidArgument("minibatch size must be >= 1");
  if (marginalized_k < 1) throw InvalidArgument("marginalized k must be >= 1");
  if (dim < 2) throw InvalidArgument("dim must be >= 2");
  if (threads < 1) throw InvalidArgument("threads must be >= 1");
}

double TrainConfig::alpha_for_round(std::size_t round) const {
  if (alpha_schedule.empty()) throw InvalidArgument("alpha schedule must not be empty");
  return alpha_schedule[std::min(round, alpha_schedule.size() - 1)];
}

std::vector<ClosedSet> build_closed_sets(const RetrieverModel& retriever,
                                         const RetrieverModel& guide, const Corpus& corpus,
                                         std::span<const Example> examples, std::size_t r,
                                         std::size_t threads) {
  if (r < 1) throw InvalidArgument("closed-set size r must be >= 1");
  if (r > corpus.size()) {
    spdlog::warn("closed-set size r={} exceeds corpus size {}; clamping", r, corpus.size());
    r = corpus.size();
  }
  std::vector<ClosedSet> sets(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    ClosedSet cs;
    cs.example_id = ex.id;
    cs.retriever_ids = ids_of(top_k(retriever, ex.context_tokens, corpus, r));
    cs.guide_ids = ids_of(top_k(guide, guide_query(ex), corpus, r));
    cs.union_ids = cs.retriever_ids;
    std::unordered_set<PassageId> seen(cs.union_ids.begin(), cs.union_ids.end());
    for (PassageId id : cs.guide_ids) {
      if (seen.insert(id).second) cs.union_ids.push_back(id);
    }
    sets[i] = std::move(cs);
  });
  return sets;
}

PassageDraw sample_passage(double alpha, const CandidateDistribution& p_eta,
                           const CandidateDistribution& q, std::mt19937_64& rng) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  const bool from_retriever = std::bernoulli_distribution(alpha)(rng);
  const auto& d = from_retriever ? p_eta : q;
  if (d.size() == 0) throw InvalidArgument("sample_passage: empty distribution");
  std::discrete_distribution<std::size_t> pick(d.probs.begin(), d.probs.end());
  return PassageDraw{d.passage_ids[pick(rng)], from_retriever};
}

ModelSet init_models(const TrainConfig& config, std::size_t vocab_size) {
  ModelSet m;
  m.retriever = RetrieverModel::init(vocab_size, config.dim, derive_seed(config.seed, kRetrieverInit),
                                     RetrieverRole::kRetriever, config.temperature);
  m.guide = RetrieverModel::init(vocab_size, config.dim, derive_seed(config.seed, kGuideInit),
                                 RetrieverRole::kGuide, config.temperature);
  m.generator = GeneratorModel::init(vocab_size, config.dim, derive_seed(config.seed, kGeneratorInit));
  return m;
}

RoundRecord train_round(ModelSet& models, const Corpus& corpus, std::span<const Example> examples,
                        std::span<const ClosedSet> closed_sets, const TrainConfig& config,
                        std::size_t round_index) {
  config.validate();
  check_alignment(examples, closed_sets);
  RoundRecord record;
  record.round = round_index;
  record.alpha = config.alpha_for_round(round_index);
  record.closed_sets = closed_sets.size();
  for (const auto& cs : closed_sets) record.mean_union_size += static_cast<double>(cs.union_ids.size());
  if (!closed_sets.empty()) record.mean_union_size /= static_cast<double>(closed_sets.size());
  if (examples.empty()) return record;

  TrainableSet trainable;
  trainable.guide = config.objective == ObjectiveKind::kElbo && config.joint_guide;
  std::mt19937_64 rng(derive_seed(config.seed, kRoundRng, round_index));
  const CandidatePlanner planner(config, corpus, record.alpha);

  for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
    const ModelSet snapshot = models;
    EpochRecord er;
    er.epoch = epoch;
    try {
      const auto order = shuffled_indices(examples.size(), rng);
      for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
        const std::size_t end = std::min(order.size(), start + config.minibatch_size);
        std::vector<StepPlan> plans;
        for (std::size_t j = start; j < end; ++j) {
          const std::size_t idx = order[j];
          plans.push_back({idx, planner.plan(models, examples[idx], closed_sets[idx], rng, record.audit)});
        }
        const auto mb = run_minibatch(models, corpus, examples, std::move(plans), config, trainable,
                                      config.learning_rate);
        er.objective += mb.objective;
        er.expected_log_likelihood += mb.expected_log_likelihood;
        er.kl += mb.kl;
      }
    } catch (const NumericalError& e) {
      models = snapshot;
      throw DivergenceError(round_index, epoch, e.what());
    }
    const double n = static_cast<double>(examples.size());
    er.objective /= n;
    er.expected_log_likelihood /= n;
    er.kl /= n;
    spdlog::debug("round {} epoch {} objective {:.6f}", round_index, epoch, er.objective);
    record.epochs.push_back(er);
  }
  return record;
}

ConvergenceRecord train_to_convergence(ModelSet& models, const Corpus& corpus,
                                       std::span<const Example> examples,
                                       std::span<const ClosedSet> closed_sets,
                                       const TrainConfig& config) {
  config.validate();
  if (config.objective != ObjectiveKind::kElbo) {
    throw InvalidArgument("train_to_convergence requires the ELBO objective");
  }
  check_alignment(examples, closed_sets);
  ConvergenceRecord record;
  if (examples.empty()) return record;

  const double alpha = config.alpha_for_round(config.rounds - 1);
  const CandidatePlanner planner(config, corpus, alpha);
  std::mt19937_64 rng(derive_seed(config.seed, kConvergenceRng));
  SampleAudit audit;
  const double n = static_cast<double>(examples.size());

  // Baseline before any update.
  double best_retriever = 0.0, best_generator = 0.0;
  {
    const TrainableSet none{false, false, false};
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto cands = planner.plan(models, examples[i], closed_sets[i], rng, audit);
      const auto ev = evaluate_objective(ObjectiveKind::kElbo, models,
                                         make_instance(examples[i], corpus, cands), none);
      best_retriever -= ev.kl;
      best_generator += ev.expected_log_likelihood;
    }
    best_retriever /= n;
    best_generator /= n;
  }

  bool retriever_active = true, generator_active = true;
  std::size_t retriever_stale = 0, generator_stale = 0;
  for (std::size_t epoch = 1; epoch <= config.max_convergence_epochs &&
                              (retriever_active || generator_active);
       ++epoch) {
    const TrainableSet trainable{retriever_active, false, generator_active};
    const ModelSet snapshot = models;
    ConvergenceEpoch ce;
    ce.epoch = epoch;
    ce.retriever_active = retriever_active;
    ce.generator_active = generator_active;
    try {
      const auto order = shuffled_indices(examples.size(), rng);
      for (std::size_t start = 0; start < order.size(); start += config.minibatch_size) {
        const std::size_t end = std::min(order.size(), start + config.minibatch_size);
        std::vector<StepPlan> plans;
        for (std::size_t j = start; j < end; ++j) {
          const std::size_t idx = order[j];
          plans.push_back({idx, planner.plan(models, examples[idx], closed_sets[idx], rng, audit)});
        }
        const auto mb = run_minibatch(models, corpus, examples, std::move(plans), config, trainable,
                                      config.learning_rate);
        ce.retriever_objective -= mb.kl;
        ce.generator_objective += mb.expected_log_likelihood;
      }
    } catch (const NumericalError& e) {
      models = snapshot;
      throw DivergenceError(config.rounds, epoch, e.what());
    }
    ce.retriever_objective /= n;
    ce.generator_objective /= n;
    record.epochs.push_back(ce);

    auto update = [&](bool& active, std::size_t& stale, double& best, double value,
                      std::optional<std::size_t>& stopped) {
      if (!active) return;
      if (value - best >= config.convergence.min_delta) {
        best = value;
        stale = 0;
      } else if (++stale >= config.convergence.patience) {
        active = false;
        stopped = epoch;
      }
    };
    update(retriever_active, retriever_stale, best_retriever, ce.retriever_objective,
           record.retriever_stopped_epoch);
    update(generator_active, generator_stale, best_generator, ce.generator_objective,
           record.generator_stopped_epoch);
  }
  return record;
}

TrainResult run_training(const TrainConfig& config, const Corpus& corpus,
                         std::span<const Example> examples, const RunOptions& options) {
  config.validate();
  const bool persist = !options.out_dir.empty();
  TrainResult result;
  std::size_t first_round = 0;
  if (options.resume_after_round) {
    if (!persist) throw InvalidArgument("resuming requires an experiment directory");
    const auto dir = options.out_dir / ("round_" + std::to_string(*options.resume_after_round));
    result.models = load_models(dir);
    result.report = train_report_from_json(read_text_file(dir / "report.json"));
    first_round = *options.resume_after_round + 1;
  } else {
    result.models = init_models(config, corpus.vocabulary().size());
  }
  if (result.models.generator.vocab_size() != corpus.vocabulary().size()) {
    throw InvalidArgument("model vocabulary does not match the corpus");
  }
  if (persist) std::filesystem::create_directories(options.out_dir);

  std::vector<ClosedSet> closed_sets;
  for (std::size_t round = first_round; round < config.rounds; ++round) {
    closed_sets = build_closed_sets(result.models.retriever, result.models.guide, corpus, examples,
                                    config.r, config.threads);
    result.report.rounds.push_back(
        train_round(result.models, corpus, examples, closed_sets, config, round));
    if (persist) {
      const auto dir = options.out_dir / ("round_" + std::to_string(round));
      std::filesystem::create_directories(dir);
      save_models(result.models, dir);
      save_closed_sets(closed_sets, dir / "closed_sets.jsonl");
      for (const char* name : {"model_retriever.ckpt", "model_guide.ckpt", "model_generator.ckpt"}) {
        result.report.checkpoints.push_back((std::filesystem::path("round_" + std::to_string(round)) / name).string());
      }
      write_text_file(dir / "report.json", to_json(result.report));
    }
  }

  if (config.convergence_phase && config.objective == ObjectiveKind::kElbo) {
    closed_sets = build_closed_sets(result.models.retriever, result.models.guide, corpus, examples,
                                    config.r, config.threads);
    result.report.convergence =
        train_to_convergence(result.models, corpus, examples, closed_sets, config);
    if (persist) {
      const auto dir = options.out_dir / "converged";
      std::filesystem::create_directories(dir);
      save_models(result.models, dir);
      save_closed_sets(closed_sets, dir / "closed_sets.jsonl");
      for (const char* name : {"model_retriever.ckpt", "model_guide.ckpt", "model_generator.ckpt"}) {
        result.report.checkpoints.push_back((std::filesystem::path("converged") / name).string());
      }
    }
  }
  if (persist) write_text_file(options.out_dir / "report.json", to_json(result.report));
  return result;
}

}  // namespace guiderag
