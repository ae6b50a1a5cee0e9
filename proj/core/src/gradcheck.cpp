// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "guiderag/objectives.hpp"

namespace guiderag {

namespace {

constexpr std::size_t kVocab = 10;
constexpr std::size_t kDim = 4;
constexpr double kStep = 1e-5;
constexpr double kRelFloor = 1e-4;
constexpr double kTieMargin = 1e-3;

struct RandomInstance {
  ModelSet models;
  std::vector<TokenId> context;
  std::vector<TokenId> target;
  std::vector<std::vector<TokenId>> passages;
  std::vector<PassageId> ids;

  ObjectiveInstance view() const {
    ObjectiveInstance inst;
    inst.example_id = 0;
    inst.context = context;
    inst.target = target;
    inst.candidate_ids = ids;
    for (const auto& p : passages) inst.candidate_tokens.emplace_back(p);
    return inst;
  }
};

std::vector<TokenId> random_tokens(std::mt19937_64& rng, std::size_t min_len, std::size_t max_len) {
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<TokenId> word(Vocabulary::kFirstWord, static_cast<TokenId>(kVocab - 1));
  std::vector<TokenId> out(len(rng));
  for (auto& t : out) t = word(rng);
  return out;
}

/// True when every query token has a unique best passage row (identical rows excepted).
bool argmax_is_stable(const EmbeddingTable& table, std::span<const TokenId> query,
                      std::span<const TokenId> passage) {
  for (TokenId q : query) {
    double best = -1e300, second = -1e300;
    TokenId best_id = -1;
    for (TokenId d : passage) {
      const double s = dot(table.row(q), table.row(d));
      if (d == best_id) continue;
      if (s > best) {
        second = best;
        best = s;
        best_id = d;
      } else if (s > second) {
        second = s;
      }
    }
    if (best - second < kTieMargin) return false;
  }
  return true;
}

RandomInstance make_random_instance(std::mt19937_64& rng) {
  for (;;) {
    RandomInstance ri;
    ri.models.retriever = RetrieverModel::init(kVocab, kDim, rng(), RetrieverRole::kRetriever,
                                               std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    ri.models.guide = RetrieverModel::init(kVocab, kDim, rng(), RetrieverRole::kGuide,
                                           std::uniform_real_distribution<double>(0.5, 2.0)(rng));
    std::uniform_real_distribution<double> lam(-1.5, 1.5);
    ri.models.generator = GeneratorModel::init(kVocab, kDim, rng(), lam(rng), lam(rng), lam(rng));
    std::normal_distribution<double> bias(0.0, 0.5);
    for (double& b : ri.models.generator.bias) b = bias(rng);

    ri.context = random_tokens(rng, 1, 3);
    ri.target = random_tokens(rng, 1, 3);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
    for (std::size_t i = 0; i < n; ++i) {
      ri.passages.push_back(random_tokens(rng, 2, 4));
      ri.ids.push_back(static_cast<PassageId>(10 * i + 3));
    }
    const auto gq = guide_query(ri.context, ri.target);
    bool stable = true;
    for (const auto& p : ri.passages) {
      stable = stable && argmax_is_stable(ri.models.retriever.table, ri.context, p) &&
               argmax_is_stable(ri.models.guide.table, gq, p);
    }
    if (stable) return ri;
  }
}

struct Tracker {
  GradCheckReport& report;

  void compare(double analytic, double numeric, const std::string& name) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++report.parameters_checked;
    if (!(rel <= report.max_rel_error)) {  // also captures NaN
      report.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      report.worst_parameter = name;
    }
  }
};

template <typename Eval>
double central_difference(double& param, Eval&& eval) {
  const double saved = param;
  param = saved + kStep;
  const double up = eval();
  param = saved - kStep;
  const double down = eval();
  param = saved;
  return (up - down) / (2.0 * kStep);
}

}  // namespace

GradCheckReport check_gradients(ObjectiveKind kind, std::uint64_t seed, std::size_t trials,
                                const GradientFn& analytic) {
  if (trials < 1) throw InvalidArgument("check_gradients: trials must be >= 1");
  GradCheckReport report;
  report.kind = kind;
  report.trials = trials;
  report.step = kStep;
  Tracker tracker{report};
  std::mt19937_64 rng(seed);

  for (std::size_t trial = 0; trial < trials; ++trial) {
    RandomInstance ri = make_random_instance(rng);
    const ObjectiveInstance inst = ri.view();
    ModelGradients grads(ri.models);
    try {
      analytic(kind, ri.models, inst, grads);
    } catch (const Error& e) {
      tracker.compare(0.0, std::numeric_limits<double>::quiet_NaN(),
                      "trial " + std::to_string(trial) + ": " + e.what());
      continue;
    }
    auto value = [&] { return evaluate_objective(kind, ri.models, inst).objective.value; };
    const std::string prefix = "trial " + std::to_string(trial) + " ";

    auto check_table = [&](EmbeddingTable& table, const TableGrad& g, const std::string& name) {
      for (std::size_t r = 0; r < table.vocab_size(); ++r) {
        auto row = table.mutable_row(static_cast<TokenId>(r));
        auto grow = g.row(static_cast<TokenId>(r));
        for (std::size_t k = 0; k < table.dim(); ++k) {
          tracker.compare(grow[k], central_difference(row[k], value),
                          prefix + name + "[" + std::to_string(r) + "][" + std::to_string(k) + "]");
        }
      }
    };
    check_table(ri.models.retriever.table, grads.retriever, "retriever.table");
    check_table(ri.models.guide.table, grads.guide, "guide.table");
    check_table(ri.models.generator.table, grads.generator.table, "generator.table");
    auto& gen = ri.models.generator;
    for (std::size_t v = 0; v < gen.bias.size(); ++v) {
      tracker.compare(grads.generator.bias[v], central_difference(gen.bias[v], value),
                      prefix + "generator.bias[" + std::to_string(v) + "]");
    }
    tracker.compare(grads.generator.lambda_ctx, central_difference(gen.lambda_ctx, value),
                    prefix + "generator.lambda_ctx");
    tracker.compare(grads.generator.lambda_psg, central_difference(gen.lambda_psg, value),
                    prefix + "generator.lambda_psg");
    tracker.compare(grads.generator.lambda_prev, central_difference(gen.lambda_prev, value),
                    prefix + "generator.lambda_prev");
  }
  return report;
}

}  // namespace guiderag
