// SPDX-License-Identifier: Apache-2.0

#include "guiderag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "binary_io.hpp"

namespace guiderag {

std::string_view to_string(RetrieverRole role) {
  return role == RetrieverRole::kGuide ? "guide" : "retriever";
}

RetrieverModel RetrieverModel::init(std::size_t vocab_size, std::size_t dim, std::uint64_t seed,
                                    RetrieverRole role, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  return RetrieverModel{EmbeddingTable::init(vocab_size, dim, seed), temperature, role};
}

void RetrieverModel::write(std::ostream& out) const {
  detail::write_header(out, "GRAGRET");
  detail::write_pod<std::uint8_t>(out, role == RetrieverRole::kGuide ? 1 : 0);
  detail::write_pod(out, temperature);
  table.write(out);
}

RetrieverModel RetrieverModel::read(std::istream& in) {
  detail::read_header(in, "GRAGRET");
  RetrieverModel m;
  m.role = detail::read_pod<std::uint8_t>(in) == 1 ? RetrieverRole::kGuide : RetrieverRole::kRetriever;
  m.temperature = detail::read_pod<double>(in);
  if (!(m.temperature > 0.0)) throw InvalidArgument("corrupt retriever checkpoint: temperature");
  m.table = EmbeddingTable::read(in);
  return m;
}

std::optional<std::size_t> CandidateDistribution::index_of(PassageId id) const {
  auto it = std::find(passage_ids.begin(), passage_ids.end(), id);
  if (it == passage_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - passage_ids.begin());
}

std::vector<TokenId> guide_query(std::span<const TokenId> context, std::span<const TokenId> target) {
  std::vector<TokenId> q(context.begin(), context.end());
  q.insert(q.end(), target.begin(), target.end());
  return q;
}

std::vector<TokenId> guide_query(const Example& example) {
  return guide_query(example.context_tokens, example.target_tokens);
}

MaxSimMatch maxsim_match(const EmbeddingTable& table, std::span<const TokenId> query,
                         std::span<const TokenId> passage) {
  if (query.empty()) throw InvalidArgument("maxsim: empty query");
  if (passage.empty()) throw InvalidArgument("maxsim: empty passage");
  MaxSimMatch m;
  m.argmax.resize(query.size());
  for (std::size_t i = 0; i < query.size(); ++i) {
    const auto q = table.row(query[i]);
    double best = -std::numeric_limits<double>::infinity();
    std::uint32_t best_j = 0;
    for (std::size_t j = 0; j < passage.size(); ++j) {
      const double s = dot(q, table.row(passage[j]));
      if (s > best) {
        best = s;
        best_j = static_cast<std::uint32_t>(j);
      }
    }
    m.score += best;
    m.argmax[i] = best_j;
  }
  return m;
}

double maxsim_score(const EmbeddingTable& table, std::span<const TokenId> query,
                    std::span<const TokenId> passage) {
  if (query.empty()) throw InvalidArgument("maxsim: empty query");
  if (passage.empty()) throw InvalidArgument("maxsim: empty passage");
  double total = 0.0;
  for (TokenId qt : query) {
    const auto q = table.row(qt);
    double best = -std::numeric_limits<double>::infinity();
    for (TokenId dt : passage) best = std::max(best, dot(q, table.row(dt)));
    total += best;
  }
  return total;
}

double maxsim_score(const RetrieverModel& model, std::span<const TokenId> query,
                    std::span<const TokenId> passage) {
  model.table.check_ids(query);
  model.table.check_ids(passage);
  return maxsim_score(model.table, query, passage);
}

void accumulate_maxsim_gradient(const EmbeddingTable& table, std::span<const TokenId> query,
                                std::span<const TokenId> passage, const MaxSimMatch& match,
                                double weight, TableGrad& grad) {
  if (weight == 0.0) return;
  const std::size_t dim = table.dim();
  for (std::size_t i = 0; i < query.size(); ++i) {
    const TokenId qt = query[i];
    const TokenId dt = passage[match.argmax[i]];
    const auto qv = table.row(qt);
    const auto dv = table.row(dt);
    auto gq = grad.row(qt);
    for (std::size_t k = 0; k < dim; ++k) gq[k] += weight * dv[k];
    auto gd = grad.row(dt);
    for (std::size_t k = 0; k < dim; ++k) gd[k] += weight * qv[k];
  }
}

namespace {

bool ranks_before(const ScoredPassage& a, const ScoredPassage& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

}  // namespace

std::vector<ScoredPassage> top_k(const RetrieverModel& model, std::span<const TokenId> query,
                                 const Corpus& corpus, std::size_t k, std::size_t threads) {
  if (k < 1 || k > corpus.size()) {
    throw InvalidArgument("top_k: k=" + std::to_string(k) + " outside [1, " +
                          std::to_string(corpus.size()) + "]");
  }
  model.table.check_ids(query);
  const auto& passages = corpus.passages();
  const auto& table = model.table;
  const std::size_t vocab = table.vocab_size();

  // When the corpus holds more tokens than the vocabulary, project each distinct query token
  // onto every row once; passage scores then reduce to lookups. The dot products and their
  // summation order are unchanged, so scores match maxsim_score bit for bit.
  std::size_t corpus_tokens = 0;
  for (const auto& p : passages) corpus_tokens += p.tokens.size();
  std::vector<std::size_t> slot(query.size());
  std::vector<double> sims;
  const bool project = corpus_tokens >= vocab;
  if (project) {
    std::vector<TokenId> distinct;
    for (std::size_t i = 0; i < query.size(); ++i) {
      auto it = std::find(distinct.begin(), distinct.end(), query[i]);
      slot[i] = static_cast<std::size_t>(it - distinct.begin());
      if (it == distinct.end()) distinct.push_back(query[i]);
    }
    sims.resize(distinct.size() * vocab);
    for (std::size_t u = 0; u < distinct.size(); ++u) {
      const auto q = table.row(distinct[u]);
      for (std::size_t v = 0; v < vocab; ++v) sims[u * vocab + v] = dot(q, table.row(static_cast<TokenId>(v)));
    }
  }
  // Validate up front so worker threads never throw.
  for (const auto& p : passages) {
    table.check_ids(p.tokens);
    if (p.tokens.empty()) throw InvalidArgument("maxsim: empty passage");
  }
  std::vector<ScoredPassage> scored(passages.size());
  auto score_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& tokens = passages[i].tokens;
      if (!project) {
        scored[i] = {passages[i].id, maxsim_score(table, query, tokens)};
        continue;
      }
      double total = 0.0;
      for (std::size_t qi = 0; qi < query.size(); ++qi) {
        const double* row = sims.data() + slot[qi] * vocab;
        double best = -std::numeric_limits<double>::infinity();
        for (TokenId dt : tokens) best = std::max(best, row[static_cast<std::size_t>(dt)]);
        total += best;
      }
      scored[i] = {passages[i].id, total};
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, passages.size());
  if (threads == 1) {
    score_range(0, passages.size());
  } else {
    std::vector<std::jthread> workers;
    const std::size_t chunk = (passages.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(passages.size(), b + chunk);
      if (b < e) workers.emplace_back(score_range, b, e);
    }
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                    ranks_before);
  scored.resize(k);
  return scored;
}

CandidateDistribution make_distribution(std::span<const PassageId> ids,
                                        std::span<const double> scores, double temperature,
                                        RetrieverRole role, ExampleId example_id) {
  if (ids.empty()) throw InvalidArgument("distribution: empty candidate set");
  if (ids.size() != scores.size()) throw InvalidArgument("distribution: ids/scores size mismatch");
  if (!(temperature > 0.0)) throw InvalidArgument("distribution: temperature must be positive");
  {
    std::unordered_set<PassageId> seen;
    for (PassageId id : ids) {
      if (!seen.insert(id).second) {
        throw InvalidArgument("distribution: duplicate candidate id " + std::to_string(id));
      }
    }
  }
  const std::size_t n = ids.size();
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double s : scores) max_logit = std::max(max_logit, s / temperature);
  double z = 0.0;
  for (double s : scores) z += std::exp(s / temperature - max_logit);
  const double log_z = max_logit + std::log(z);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });

  CandidateDistribution d;
  d.example_id = example_id;
  d.model_role = role;
  d.passage_ids.reserve(n);
  for (std::size_t i : order) {
    const double lp = scores[i] / temperature - log_z;
    d.passage_ids.push_back(ids[i]);
    d.scores.push_back(scores[i]);
    d.log_probs.push_back(lp);
    d.probs.push_back(std::exp(lp));
  }
  return d;
}

CandidateDistribution distribution(const RetrieverModel& model, std::span<const TokenId> query,
                                   const Corpus& corpus, std::span<const PassageId> candidates,
                                   ExampleId example_id) {
  model.table.check_ids(query);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (PassageId id : candidates) {
    scores.push_back(maxsim_score(model.table, query, corpus.passage(id).tokens));
  }
  return make_distribution(candidates, scores, model.temperature, model.role, example_id);
}

EncodedIndex build_index(const RetrieverModel& model, const Corpus& corpus) {
  EncodedIndex index;
  index.dim = model.table.dim();
  for (const auto& p : corpus.passages()) {
    model.table.check_ids(p.tokens);
    std::vector<double> block;
    block.reserve(p.tokens.size() * index.dim);
    for (TokenId t : p.tokens) {
      auto r = model.table.row(t);
      block.insert(block.end(), r.begin(), r.end());
    }
    index.passage_ids.push_back(p.id);
    index.vectors.push_back(std::move(block));
  }
  return index;
}

void write_index(const EncodedIndex& index, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  detail::write_header(out, "GRAGIDX");
  detail::write_pod<std::uint64_t>(out, index.dim);
  detail::write_pod<std::uint64_t>(out, index.passage_ids.size());
  for (std::size_t i = 0; i < index.passage_ids.size(); ++i) {
    detail::write_pod<std::int64_t>(out, index.passage_ids[i]);
    detail::write_doubles(out, index.vectors[i]);
  }
}

EncodedIndex read_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  detail::read_header(in, "GRAGIDX");
  EncodedIndex index;
  index.dim = detail::read_pod<std::uint64_t>(in);
  const auto n = detail::read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    index.passage_ids.push_back(detail::read_pod<std::int64_t>(in));
    index.vectors.push_back(detail::read_doubles(in));
    if (index.dim == 0 || index.vectors.back().size() % index.dim != 0) {
      throw InvalidArgument("corrupt index file " + path.string());
    }
  }
  return index;
}

}  // namespace guiderag
