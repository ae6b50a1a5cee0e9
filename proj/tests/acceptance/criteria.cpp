// SPDX-License-Identifier: Apache-2.0

#include "acceptance/criteria.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "common/reference.hpp"
#include "guiderag/checkpoint.hpp"
#include "guiderag/evaluation.hpp"
#include "guiderag/metrics.hpp"
#include "guiderag/objectives.hpp"
#include "guiderag/synthgen.hpp"
#include "guiderag/training.hpp"
#include "guiderag_cli/cli.hpp"

namespace guiderag::acceptance {

namespace {

namespace fs = std::filesystem;

constexpr int kSeeds = 5;

fs::path config_dir() { return GUIDERAG_ACCEPTANCE_CONFIG_DIR; }

TrainConfig acceptance_train_config() {
  return train_config_from_json(read_text_file(config_dir() / "train.json"));
}

SynthConfig synth_config(const char* file) {
  return synth_config_from_json(read_text_file(config_dir() / file));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------------------------

Outcome gradient_fidelity() {
  double worst = 0.0;
  std::string where;
  std::size_t params = 0;
  for (auto kind : {ObjectiveKind::kMarginalized, ObjectiveKind::kElbo}) {
    const auto r = check_gradients(kind, 2024, 20);
    params += r.parameters_checked;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      where = fmt::format("{}:{}", to_string(kind), r.worst_parameter);
    }
  }
  return {worst < 1e-4, fmt::format("max rel err {:.2e} at {} over {} parameters, 20 instances per objective",
                                    worst, where, params)};
}

// ---------------------------------------------------------------------------------------------

CandidateDistribution from_probs(const std::vector<double>& probs, RetrieverRole role) {
  std::vector<PassageId> ids(probs.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::vector<double> scores;
  for (double p : probs) scores.push_back(std::log(p));
  return make_distribution(ids, scores, 1.0, role);
}

Outcome elbo_bound() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> size(1, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> loglike(-60.0, 0.0);
  double min_slack = 1e300, max_tight_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = size(rng);
    auto random_simplex = [&] {
      std::vector<double> v(n);
      double z = 0.0;
      // Cubing spreads mass unevenly so some entries are tiny.
      for (auto& x : v) z += x = std::pow(unit(rng), 3.0) + 1e-12;
      for (auto& x : v) x /= z;
      return v;
    };
    const auto q = random_simplex(), p = random_simplex();
    CandidateLogLikelihoods g;
    for (std::size_t i = 0; i < n; ++i) {
      g.passage_ids.push_back(static_cast<PassageId>(i));
      g.values.push_back(loglike(rng));
    }
    const auto pd = from_probs(p, RetrieverRole::kRetriever);
    const double marg = marginalized_log_likelihood(pd, g).value;
    min_slack = std::min(min_slack, marg - elbo(from_probs(q, RetrieverRole::kGuide), pd, g).value);

    // Product posterior, normalized in log space.
    std::vector<double> lp(n);
    for (std::size_t i = 0; i < n; ++i) lp[i] = std::log(p[i]) + g.values[i];
    const double mx = *std::max_element(lp.begin(), lp.end());
    double z = 0.0;
    for (double v : lp) z += std::exp(v - mx);
    std::vector<PassageId> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    const auto post = make_distribution(ids, lp, 1.0, RetrieverRole::kGuide);
    max_tight_err = std::max(max_tight_err, std::abs(elbo(post, pd, g).value - marg));
  }
  const bool pass = min_slack >= -1e-9 && max_tight_err <= 1e-9;
  return {pass, fmt::format("min(marginal - elbo) {:.3e}; max |elbo - marginal| at posterior {:.3e}; 1000 triples",
                            min_slack, max_tight_err)};
}

// ---------------------------------------------------------------------------------------------

Words random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> ch(0, alphabet - 1);
  Words out(len(rng));
  for (auto& s : out) s = "v" + std::to_string(ch(rng));
  return out;
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(29);
  std::size_t topk_mismatch = 0;
  for (int t = 0; t < 100; ++t) {
    // Small vocabularies exercise the projected scoring path, large ones the direct scan.
    const std::size_t vocab = std::uniform_int_distribution<std::size_t>(4, 120)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 60)(rng);
    Corpus c;
    std::uniform_int_distribution<std::size_t> word(0, vocab - 1), len(1, 10);
    for (std::size_t i = 0; i < n; ++i) {
      std::string text;
      for (std::size_t j = len(rng); j > 0; --j) text += "t" + std::to_string(word(rng)) + " ";
      c.add_passage(static_cast<PassageId>(1000 - 3 * i), text);
    }
    const auto model = RetrieverModel::init(c.vocabulary().size(), 8, rng(), RetrieverRole::kRetriever);
    std::vector<TokenId> q;
    std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(c.vocabulary().size() - 1));
    for (std::size_t j = std::uniform_int_distribution<std::size_t>(1, 6)(rng); j > 0; --j) q.push_back(tok(rng));
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    const auto got = top_k(model, q, c, k);
    const auto ref = reference::rank_all(model.table, q, c);
    bool same = got.size() == k;
    for (std::size_t i = 0; same && i < k; ++i) {
      same = got[i].id == ref[i].first && std::abs(got[i].score - ref[i].second) <= 1e-12;
    }
    topk_mismatch += !same;
  }

  std::size_t metric_mismatch = 0;
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  for (int t = 0; t < 200; ++t) {
    const Words a = random_words(rng, 8, 6), b = random_words(rng, 8, 6), ctx = random_words(rng, 3, 6);
    bool ok = close(token_f1(a, b), reference::f1(a, b));
    ok &= close(knowledge_f1(a, b), reference::f1(a, b));

    std::vector<Words> targets;
    for (int i = 0; i < 5; ++i) targets.push_back(random_words(rng, 6, 8));
    targets.push_back({"v0"});
    const double threshold = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const auto common = build_common_words(targets, threshold);
    const auto ref_common = reference::common_words(targets, threshold);
    ok &= std::set<std::string>(common.words.begin(), common.words.end()) == ref_common;
    ok &= close(novel_f1(a, b, ctx, common), reference::novel_f1(a, b, ctx, ref_common));

    std::vector<Words> outputs, refs;
    for (int i = 0; i < 5; ++i) {
      outputs.push_back(random_words(rng, 5, 6));
      refs.push_back(random_words(rng, 5, 6));
    }
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, 5)(rng);
    double ref_max = 0.0, ref_max_novel = 0.0, ref_max_own = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      ref_max = std::max(ref_max, reference::f1(outputs[i], b));
      ref_max_novel = std::max(ref_max_novel, reference::novel_f1(outputs[i], b, ctx, ref_common));
      ref_max_own = std::max(ref_max_own, reference::f1(outputs[i], refs[i]));
    }
    ok &= close(max_f1_at_k(outputs, b, k, OverlapVariant::kF1), ref_max);
    ok &= close(max_f1_at_k(outputs, b, k, OverlapVariant::kNovelF1, ctx, &common), ref_max_novel);
    ok &= close(max_f1_at_k(outputs, std::span<const Words>(refs), k, OverlapVariant::kF1), ref_max_own);

    std::vector<std::vector<PassageId>> rankings;
    std::vector<std::optional<PassageId>> gold;
    for (int i = 0; i < 8; ++i) {
      std::vector<PassageId> r(12);
      std::iota(r.begin(), r.end(), 0);
      std::shuffle(r.begin(), r.end(), rng);
      r.resize(std::uniform_int_distribution<std::size_t>(0, 12)(rng));
      rankings.push_back(r);
      gold.push_back(std::uniform_int_distribution<int>(0, 7)(rng) == 0
                         ? std::nullopt
                         : std::optional<PassageId>(std::uniform_int_distribution<PassageId>(0, 13)(rng)));
    }
    for (std::size_t kk : {1, 5, 10}) {
      ok &= close(success_at_k(rankings, gold, kk).value, reference::success_at_k(rankings, gold, kk));
    }
    ok &= close(mrr(rankings, gold).value, reference::mrr(rankings, gold));

    std::vector<std::vector<double>> dists;
    for (int i = 0; i < 4; ++i) {
      std::vector<double> d(std::uniform_int_distribution<std::size_t>(1, 8)(rng));
      double z = 0.0;
      for (auto& x : d) z += x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      for (auto& x : d) x /= z;
      dists.push_back(d);
    }
    const auto curve = sharpness_curve(dists);
    const auto ref_curve = reference::sharpness(dists);
    ok &= curve.cumulative.size() == ref_curve.size();
    for (std::size_t r = 0; ok && r < ref_curve.size(); ++r) ok &= close(curve.cumulative[r], ref_curve[r]);

    std::vector<double> ll(dists[0].size());
    for (auto& x : ll) x = std::uniform_real_distribution<double>(-40.0, 0.0)(rng);
    const auto post = uniform_prior_posterior(ll);
    double z = 0.0;
    for (double x : ll) z += std::exp(x);
    for (std::size_t i = 0; i < ll.size(); ++i) ok &= std::abs(post[i] - std::exp(ll[i]) / z) <= 1e-12;

    metric_mismatch += !ok;
  }
  return {topk_mismatch == 0 && metric_mismatch == 0,
          fmt::format("top_k mismatches {}/100; metric mismatches {}/200", topk_mismatch, metric_mismatch)};
}

// ---------------------------------------------------------------------------------------------

/// Paired Marginalized and ELBO runs on one synthetic dataset per seed.
struct PairedRuns {
  std::vector<EvalReport> marginalized;
  std::vector<EvalReport> elbo;
  double seconds = 0.0;
};

PairedRuns run_pairs(const char* synth_file) {
  const auto start = std::chrono::steady_clock::now();
  PairedRuns out;
  for (int s = 0; s < kSeeds; ++s) {
    SynthConfig sc = synth_config(synth_file);
    sc.seed = 100 + static_cast<std::uint64_t>(s);
    const auto ds = generate(sc);
    for (auto kind : {ObjectiveKind::kMarginalized, ObjectiveKind::kElbo}) {
      TrainConfig tc = acceptance_train_config();
      tc.seed = static_cast<std::uint64_t>(s);
      tc.objective = kind;
      const auto res = run_training(tc, ds.data.corpus, ds.data.train);
      auto rep = evaluate(res.models, ds.data.corpus, ds.data.train, ds.data.dev);
      (kind == ObjectiveKind::kElbo ? out.elbo : out.marginalized).push_back(std::move(rep));
    }
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

const PairedRuns& one_to_many() {
  static const PairedRuns runs = run_pairs("synth_one_to_many.json");
  return runs;
}

const PairedRuns& one_to_one() {
  static const PairedRuns runs = run_pairs("synth_one_to_one.json");
  return runs;
}

std::vector<double> gaps(const PairedRuns& r, const std::function<double(const EvalReport&)>& metric) {
  std::vector<double> out;
  for (int s = 0; s < kSeeds; ++s) out.push_back(metric(r.elbo[s]) - metric(r.marginalized[s]));
  return out;
}

double s_at(const RelevanceMetrics& m, std::size_t k) { return m.success_at.at(k); }

Outcome relevance_claim() {
  const auto& r = one_to_many();
  const double d10 = median(gaps(r, [](const EvalReport& e) { return s_at(e.retriever, 10); }));
  std::vector<double> guide_s1, elbo_s1;
  for (const auto& e : r.elbo) {
    guide_s1.push_back(s_at(e.guide, 1));
    elbo_s1.push_back(s_at(e.retriever, 1));
  }
  const double g1 = median(guide_s1), e1 = median(elbo_s1);
  return {d10 >= 0.05 && g1 > e1,
          fmt::format("median S@10 gap ELBO-Marg {:+.3f} (need >= +0.050); guide S@1 {:.3f} vs ELBO retriever S@1 "
                      "{:.3f}; 10 training runs took {:.1f}s",
                      d10, g1, e1, r.seconds)};
}

Outcome grounding_claim() {
  const auto& r = one_to_many();
  const double d1 = median(gaps(r, [](const EvalReport& e) { return e.novel_f1_at_1; }));
  const double d5 = median(gaps(r, [](const EvalReport& e) { return e.max_novel_f1_at_k; }));
  return {d1 >= 0.02 && d5 >= d1,
          fmt::format("median Novel-F1@1 gap {:+.3f} (need >= +0.020); median Max-Novel-F1@5 gap {:+.3f} (need >= "
                      "@1 gap)",
                      d1, d5)};
}

Outcome sharpness_claim() {
  const auto& many = one_to_many();
  std::vector<double> guide_top, marg_post_top;
  for (int s = 0; s < kSeeds; ++s) {
    guide_top.push_back(many.elbo[s].guide_sharpness.cumulative.at(0));
    marg_post_top.push_back(many.marginalized[s].generator_posterior_sharpness.cumulative.at(0));
  }
  const double g = median(guide_top), m = median(marg_post_top);
  const auto s10 = [](const EvalReport& e) { return s_at(e.retriever, 10); };
  const double gap_many = median(gaps(many, s10));
  const double gap_one = median(gaps(one_to_one(), s10));
  return {g > m && gap_one < gap_many,
          fmt::format("rank-1 mass: guide {:.3f} vs Marginalized generator posterior {:.3f}; median S@10 gap "
                      "one-to-one {:+.3f} vs one-to-many {:+.3f}",
                      g, m, gap_one, gap_many)};
}

// ---------------------------------------------------------------------------------------------

Outcome alpha_boundaries() {
  SynthConfig sc = synth_config("synth_one_to_many.json");
  sc.seed = 100;
  const auto ds = generate(sc);
  TrainConfig tc = acceptance_train_config();
  tc.objective = ObjectiveKind::kElbo;
  tc.inner_epochs = 5;

  tc.alpha_schedule = {1.0, 1.0};
  SampleAudit ones;
  for (const auto& round : run_training(tc, ds.data.corpus, ds.data.train).report.rounds) {
    ones.draws_from_retriever += round.audit.draws_from_retriever;
    ones.draws_from_guide += round.audit.draws_from_guide;
    ones.outside_retriever_set += round.audit.outside_retriever_set;
  }
  tc.alpha_schedule = {0.0, 0.0};
  SampleAudit zeros;
  for (const auto& round : run_training(tc, ds.data.corpus, ds.data.train).report.rounds) {
    zeros.draws_from_retriever += round.audit.draws_from_retriever;
    zeros.draws_from_guide += round.audit.draws_from_guide;
    zeros.outside_guide_set += round.audit.outside_guide_set;
  }
  const bool pass = ones.draws_from_retriever > 0 && ones.draws_from_guide == 0 && ones.outside_retriever_set == 0 &&
                    zeros.draws_from_guide > 0 && zeros.draws_from_retriever == 0 && zeros.outside_guide_set == 0;
  return {pass, fmt::format("alpha=1: {} retriever draws, {} guide draws, {} outside P closed-sets; alpha=0: {} guide "
                            "draws, {} retriever draws, {} outside Q closed-sets",
                            ones.draws_from_retriever, ones.draws_from_guide, ones.outside_retriever_set,
                            zeros.draws_from_guide, zeros.draws_from_retriever, zeros.outside_guide_set)};
}

// ---------------------------------------------------------------------------------------------

/// Runs synth -> train -> eval -> report through the command-line entry point inside `dir`,
/// using relative paths so the two runs' manifests can be compared byte for byte.
void run_pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path previous = fs::current_path();
  fs::current_path(dir);
  // eval echoes its report on stdout; keep the acceptance output to one line per criterion.
  std::ostringstream sink;
  auto* const cout_buf = std::cout.rdbuf(sink.rdbuf());
  auto run = [](std::vector<std::string> args) {
    args.insert(args.begin(), {"--log-level", "error"});
    const int code = cli::cli_main(args);
    if (code != cli::kExitOk) throw std::runtime_error(fmt::format("{} exited with {}", args[2], code));
  };
  try {
    const std::string train_cfg = (config_dir() / "train.json").string();
    run({"synth", "--seed", "100", "--config", (config_dir() / "synth_one_to_many.json").string(), "--out", "data"});
    run({"train", "--data", "data", "--config", train_cfg, "--objective", "elbo", "--seed", "3", "--out", "run"});
    run({"eval", "--data", "data", "--run", "run", "--k", "1,5,10"});
    run({"report", "--eval", "run/eval.json", "--out", "run/sharpness.csv"});
  } catch (...) {
    std::cout.rdbuf(cout_buf);
    fs::current_path(previous);
    throw;
  }
  std::cout.rdbuf(cout_buf);
  fs::current_path(previous);
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / fmt::format("guiderag_acceptance_{}", std::random_device{}());
  fs::remove_all(root);
  run_pipeline(root / "a");
  run_pipeline(root / "b");
  std::size_t files = 0, differing = 0;
  std::string first_diff;
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(entry.path(), root / "a");
    const auto other = root / "b" / rel;
    if (!fs::exists(other) || read_text_file(entry.path()) != read_text_file(other)) {
      ++differing;
      if (first_diff.empty()) first_diff = rel.string();
    }
  }
  std::size_t files_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "b")) files_b += entry.is_regular_file();
  fs::remove_all(root);
  const bool pass = files > 0 && differing == 0 && files == files_b;
  return {pass, fmt::format("{} files compared, {} differ{}", files, differing,
                            first_diff.empty() ? "" : " (first: " + first_diff + ")")};
}

}  // namespace

std::vector<Criterion> all_criteria() {
  return {
      {1, "gradient fidelity", 10.0, gradient_fidelity},
      {2, "ELBO bound and tightness", 5.0, elbo_bound},
      {3, "oracle equivalence of retrieval and metrics", 30.0, oracle_equivalence},
      {4, "relevance: ELBO retriever and guide", 300.0, relevance_claim},
      {5, "grounding: Novel-F1 and Max-Novel-F1@5", 0.0, grounding_claim},
      {6, "sharpness and one-to-one contrast", 0.0, sharpness_claim},
      {7, "alpha boundary behaviour", 0.0, alpha_boundaries},
      {8, "pipeline determinism", 0.0, determinism},
  };
}

}  // namespace guiderag::acceptance
