// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "guiderag/retrieval.hpp"
#include "unit/helpers.hpp"

using namespace guiderag;

namespace {

/// 2-d table with fixed rows: 0:(1,0) 1:(0,1) 2:(0.6,0.8).
RetrieverModel planar_model() {
  auto m = RetrieverModel::init(3, 2, 0, RetrieverRole::kRetriever);
  const double rows[3][2] = {{1, 0}, {0, 1}, {0.6, 0.8}};
  for (TokenId i = 0; i < 3; ++i) {
    m.table.mutable_row(i)[0] = rows[i][0];
    m.table.mutable_row(i)[1] = rows[i][1];
  }
  return m;
}

}  // namespace

TEST_SUITE("retrieval") {

TEST_CASE("guide query concatenates context and target") {
  Corpus c;
  c.add_passage(0, "a b c");
  const Example e = make_example(0, "a b", "c", std::nullopt, c);
  CHECK(guide_query(e) == tokenize("a b c", c.vocabulary()));
  const Example same = make_example(1, "a", "a", std::nullopt, c);
  CHECK(guide_query(same) == tokenize("a a", c.vocabulary()));
}

TEST_CASE("maxsim basic values") {
  const auto m = planar_model();
  const std::vector<TokenId> k{2};
  CHECK(maxsim_score(m, k, k) == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<TokenId> q0{0}, d1{1};
  CHECK(maxsim_score(m, q0, d1) == doctest::Approx(0.0));
  const std::vector<TokenId> q{0, 1}, d{0, 2};
  CHECK(maxsim_score(m, q, d) == doctest::Approx(1.8).epsilon(1e-12));
  const std::vector<TokenId> empty;
  CHECK_THROWS_AS(maxsim_score(m, empty, d), InvalidArgument);
  CHECK_THROWS_AS(maxsim_score(m, q, empty), InvalidArgument);
}

TEST_CASE("maxsim argmax prefers the lowest index on ties") {
  const auto m = planar_model();
  const std::vector<TokenId> q{0}, d{1, 0, 0};
  const auto match = maxsim_match(m.table, q, d);
  REQUIRE(match.argmax.size() == 1);
  CHECK(match.argmax[0] == 1);
}

TEST_CASE("maxsim gradient matches finite differences") {
  auto m = RetrieverModel::init(8, 5, 21, RetrieverRole::kRetriever);
  const std::vector<TokenId> q{1, 3, 3, 6}, d{0, 2, 5, 6, 7};
  const auto match = maxsim_match(m.table, q, d);
  TableGrad g(8, 5);
  accumulate_maxsim_gradient(m.table, q, d, match, 1.0, g);
  const double h = 1e-6;
  for (TokenId r = 0; r < 8; ++r) {
    for (std::size_t k = 0; k < 5; ++k) {
      double& x = m.table.mutable_row(r)[k];
      const double saved = x;
      x = saved + h;
      const double up = maxsim_score(m.table, q, d);
      x = saved - h;
      const double down = maxsim_score(m.table, q, d);
      x = saved;
      CHECK(g.row(r)[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6));
    }
  }
}

TEST_CASE("top_k agrees with brute force on random corpora") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Corpus c = test::random_corpus(rng, 30, 25, 1, 8);
    const auto m = RetrieverModel::init(c.vocabulary().size(), 6, trial, RetrieverRole::kRetriever);
    std::vector<TokenId> q;
    std::uniform_int_distribution<TokenId> tok(3, static_cast<TokenId>(c.vocabulary().size() - 1));
    for (int i = 0; i < 4; ++i) q.push_back(tok(rng));

    std::vector<ScoredPassage> ref;
    for (const auto& p : c.passages()) ref.push_back({p.id, test::reference_maxsim(m.table, q, p.tokens)});
    std::sort(ref.begin(), ref.end(), [](const auto& a, const auto& b) {
      return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    const auto got = top_k(m, q, c, 10);
    REQUIRE(got.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(got[i].id == ref[i].id);
      CHECK(got[i].score == doctest::Approx(ref[i].score).epsilon(1e-12));
    }
  }
}

TEST_CASE("top_k edge cases") {
  Corpus c;
  c.add_passage(4, "x y");
  c.add_passage(2, "y x");
  c.add_passage(7, "z w v");
  const auto m = RetrieverModel::init(c.vocabulary().size(), 8, 3, RetrieverRole::kRetriever);

  const auto all = top_k(m, c.passage(7).tokens, c, 3);
  REQUIRE(all.size() == 3);
  CHECK(all[0].id == 7);
  CHECK(std::is_sorted(all.begin(), all.end(),
                       [](const auto& a, const auto& b) { return a.score > b.score; }));

  // Passages 2 and 4 hold the same multiset: equal scores, lower id first.
  const std::vector<TokenId> q = tokenize("x", c.vocabulary());
  const auto ranked = top_k(m, q, c, 3);
  std::vector<PassageId> tied;
  for (const auto& s : ranked) if (s.id != 7) tied.push_back(s.id);
  CHECK(tied == std::vector<PassageId>{2, 4});

  CHECK_THROWS_AS(top_k(m, q, c, 0), InvalidArgument);
  CHECK_THROWS_AS(top_k(m, q, c, 4), InvalidArgument);
}

TEST_CASE("candidate distributions") {
  const std::vector<PassageId> ids{10, 11};
  const std::vector<double> log2_scores{std::log(2.0), 0.0};
  const auto d = make_distribution(ids, log2_scores, 1.0, RetrieverRole::kRetriever);
  CHECK(d.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(d.probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(d.passage_ids[0] == 10);

  const std::vector<double> equal{0.3, 0.3};
  const auto e = make_distribution(ids, equal, 1.0, RetrieverRole::kRetriever);
  CHECK(e.probs[0] == doctest::Approx(0.5));
  CHECK(e.probs[1] == doctest::Approx(0.5));

  const std::vector<PassageId> one{3};
  const std::vector<double> s{4.0};
  CHECK(make_distribution(one, s, 1.0, RetrieverRole::kGuide).probs[0] == 1.0);

  Corpus c;
  c.add_passage(0, "a b");
  c.add_passage(1, "c d");
  const auto m = RetrieverModel::init(c.vocabulary().size(), 4, 1, RetrieverRole::kRetriever);
  const std::vector<PassageId> dup{0, 0};
  const std::vector<TokenId> q = tokenize("a", c.vocabulary());
  CHECK_THROWS_AS(distribution(m, q, c, dup), InvalidArgument);
}

TEST_CASE("index round-trip") {
  std::mt19937_64 rng(1);
  const Corpus c = test::random_corpus(rng, 12, 10, 1, 5);
  const auto m = RetrieverModel::init(c.vocabulary().size(), 4, 1, RetrieverRole::kGuide);
  const auto index = build_index(m, c);
  test::TempDir dir("index");
  write_index(index, dir.path() / "idx.bin");
  CHECK(read_index(dir.path() / "idx.bin") == index);
}

}  // TEST_SUITE
