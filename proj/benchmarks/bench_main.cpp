// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: MaxSim scoring, exact top-k, generator likelihood and decoding.

#include <benchmark/benchmark.h>

#include "guiderag/generator.hpp"
#include "guiderag/retrieval.hpp"
#include "guiderag/synthgen.hpp"

namespace {

using namespace guiderag;

const SynthDataset& dataset() {
  static const SynthDataset ds = generate(SynthConfig{});
  return ds;
}

void BM_MaxSim(benchmark::State& state) {
  const auto& ds = dataset();
  const auto model = RetrieverModel::init(ds.data.corpus.vocabulary().size(), state.range(0), 1,
                                          RetrieverRole::kRetriever);
  const auto query = guide_query(ds.data.train.front());
  const auto& passage = ds.data.corpus.passages().front().tokens;
  for (auto _ : state) benchmark::DoNotOptimize(maxsim_score(model, query, passage));
}
BENCHMARK(BM_MaxSim)->Arg(16)->Arg(64);

void BM_TopK(benchmark::State& state) {
  const auto& ds = dataset();
  const auto model = RetrieverModel::init(ds.data.corpus.vocabulary().size(), 16, 1, RetrieverRole::kRetriever);
  const auto& query = ds.data.train.front().context_tokens;
  for (auto _ : state) {
    benchmark::DoNotOptimize(top_k(model, query, ds.data.corpus, static_cast<std::size_t>(state.range(0))));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(ds.data.corpus.size()));
}
BENCHMARK(BM_TopK)->Arg(10)->Arg(100);

void BM_LogLikelihood(benchmark::State& state) {
  const auto& ds = dataset();
  const auto model = GeneratorModel::init(ds.data.corpus.vocabulary().size(), 16, 1);
  const auto& ex = ds.data.train.front();
  const auto& passage = ds.data.corpus.passages().front();
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood(model, ex, passage));
}
BENCHMARK(BM_LogLikelihood);

void BM_LogLikelihoodGradient(benchmark::State& state) {
  const auto& ds = dataset();
  const auto model = GeneratorModel::init(ds.data.corpus.vocabulary().size(), 16, 1);
  const auto& ex = ds.data.train.front();
  const auto& passage = ds.data.corpus.passages().front().tokens;
  GeneratorGrad grad(model.vocab_size(), 16);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        accumulate_log_likelihood_gradient(model, ex.context_tokens, ex.target_tokens, passage, 1.0, grad));
  }
}
BENCHMARK(BM_LogLikelihoodGradient);

void BM_Decode(benchmark::State& state) {
  const auto& ds = dataset();
  const auto model = GeneratorModel::init(ds.data.corpus.vocabulary().size(), 16, 1);
  const auto& ex = ds.data.train.front();
  const auto& passage = ds.data.corpus.passages().front().tokens;
  const auto beams = static_cast<std::size_t>(state.range(0));
  const auto mode = beams == 1 ? DecodeMode::kGreedy : DecodeMode::kBeam;
  for (auto _ : state) benchmark::DoNotOptimize(decode(model, ex.context_tokens, passage, mode, beams));
}
BENCHMARK(BM_Decode)->Arg(1)->Arg(4);

}  // namespace

BENCHMARK_MAIN();
