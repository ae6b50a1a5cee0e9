// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "common/reference.hpp"
#include "guiderag/metrics.hpp"

using namespace guiderag;

namespace {

Words w(std::initializer_list<const char*> items) {
  Words out;
  for (const char* s : items) out.emplace_back(s);
  return out;
}

Words random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> ch(0, alphabet - 1);
  Words out(len(rng));
  for (auto& s : out) s = std::string(1, static_cast<char>('a' + ch(rng)));
  return out;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("success and mrr on hand examples") {
  using R = std::vector<std::vector<PassageId>>;
  using G = std::vector<std::optional<PassageId>>;
  const R always{{5, 1, 2}, {7, 8}};
  const G gold_first{5, 7};
  for (std::size_t k : {1, 5, 10}) CHECK(success_at_k(always, gold_first, k).value == 1.0);

  const R ranks{{9, 1, 2}, {4, 3, 9}};
  const G gold{9, 9};
  CHECK(success_at_k(ranks, gold, 1).value == 0.5);
  CHECK(success_at_k(ranks, gold, 5).value == 1.0);
  CHECK(success_at_k(ranks, gold, 50).value == 1.0);
  CHECK(mrr(ranks, gold).value == doctest::Approx((1.0 + 1.0 / 3.0) / 2.0));

  const R two{{1, 2}, {3, 1}};
  CHECK(mrr(two, G{1, 1}).value == doctest::Approx(0.75));
  CHECK(mrr(two, G{8, 8}).value == 0.0);
  CHECK(mrr(R{{4}}, G{4}).value == 1.0);

  const auto skipped = mrr(two, G{1, std::nullopt});
  CHECK(skipped.value == 1.0);
  CHECK(skipped.evaluated == 1);
  CHECK(skipped.skipped == 1);
  CHECK_THROWS_AS(success_at_k(two, G{1, 1}, 0), InvalidArgument);
}

TEST_CASE("token F1 on hand examples") {
  CHECK(token_f1(w({"a", "b"}), w({"a", "b"})) == 1.0);
  CHECK(token_f1(w({"a"}), w({"b"})) == 0.0);
  CHECK(token_f1(w({"the", "cat", "sat"}), w({"the", "cat", "ran"})) == doctest::Approx(2.0 / 3.0));
  CHECK(token_f1(w({}), w({})) == 1.0);
  CHECK(token_f1(w({"a"}), w({})) == 0.0);
  CHECK(token_f1(w({"a", "a", "a"}), w({"a"})) == doctest::Approx(0.5));
}

TEST_CASE("common word lists") {
  const std::vector<Words> corpus{w({"a", "a", "a", "b"})};
  CHECK(build_common_words(corpus, 0.5).words == w({"a"}));
  CHECK(build_common_words(corpus, 0.9).words == w({"a", "b"}));
  const std::vector<Words> tie{w({"y", "x"})};
  CHECK(build_common_words(tie, 0.5).words == w({"x"}));
  CHECK_THROWS_AS(build_common_words(corpus, 0.0), InvalidArgument);
  CHECK_THROWS_AS(build_common_words(corpus, 1.0), InvalidArgument);
  const std::vector<Words> none;
  CHECK_THROWS_AS(build_common_words(none, 0.5), InvalidArgument);
}

TEST_CASE("novel F1 on hand examples") {
  const std::vector<Words> targets{w({"are", "are", "x"})};
  const auto common = build_common_words(targets, 0.5);
  REQUIRE(common.words == w({"are"}));
  CHECK(novel_f1(w({"cats", "are", "felines"}), w({"felines", "purr"}), w({"cats"}), common) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(novel_f1(w({"cats"}), w({"dogs"}), w({"cats"}), common) == 0.0);
  CHECK(novel_f1(w({"cats"}), w({"are"}), w({"cats"}), common) == 1.0);
  CHECK(novel_f1(w({"p", "q"}), w({"q", "r"}), w({}), common) == token_f1(w({"p", "q"}), w({"q", "r"})));
}

TEST_CASE("max F1 at k") {
  const std::vector<Words> outputs{w({"a"}), w({"b"}), w({"x", "y"}), w({"c"}), w({"d"})};
  const Words ref = w({"x", "y"});
  CHECK(max_f1_at_k(outputs, ref, 1, OverlapVariant::kF1) == token_f1(outputs[0], ref));
  CHECK(max_f1_at_k(outputs, ref, 5, OverlapVariant::kF1) == 1.0);
  CHECK(max_f1_at_k(outputs, ref, 50, OverlapVariant::kF1) == 1.0);
  CHECK(max_f1_at_k(outputs, ref, 5, OverlapVariant::kF1) >= max_f1_at_k(outputs, ref, 1, OverlapVariant::kF1));
}

TEST_CASE("knowledge F1") {
  const Words passage = w({"a", "b", "c", "d"});
  CHECK(knowledge_f1(passage, passage) == 1.0);
  CHECK(knowledge_f1(w({"x"}), passage) == 0.0);
  CHECK(knowledge_f1(w({"a", "b"}), passage) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("sharpness curves") {
  const std::vector<std::vector<double>> one{{0.2, 0.5, 0.3}};
  const auto c = sharpness_curve(one);
  CHECK(c.cumulative[0] == doctest::Approx(0.5));
  CHECK(c.cumulative[1] == doctest::Approx(0.8));
  CHECK(c.cumulative[2] == doctest::Approx(1.0));
  CHECK(c.uniform[0] == doctest::Approx(1.0 / 3.0));

  const std::vector<std::vector<double>> uni{{0.25, 0.25, 0.25, 0.25}};
  const auto u = sharpness_curve(uni);
  for (std::size_t k = 0; k < 4; ++k) CHECK(u.cumulative[k] == doctest::Approx((k + 1) / 4.0));

  const std::vector<std::vector<double>> hot{{0.0, 1.0, 0.0}};
  for (double v : sharpness_curve(hot).cumulative) CHECK(v == 1.0);

  const std::vector<std::vector<double>> none;
  CHECK_THROWS_AS(sharpness_curve(none), InvalidArgument);

  const std::vector<double> ll{std::log(0.1), std::log(0.3)};
  const auto post = uniform_prior_posterior(ll);
  CHECK(post[0] == doctest::Approx(0.25));
  CHECK(post[1] == doctest::Approx(0.75));
}

TEST_CASE("metrics match brute-force references on random inputs") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const Words a = random_words(rng, 7, 5), b = random_words(rng, 7, 5), ctx = random_words(rng, 3, 5);
    CHECK(token_f1(a, b) == doctest::Approx(reference::f1(a, b)).epsilon(1e-12));
    CHECK(token_f1(a, b) == doctest::Approx(token_f1(b, a)).epsilon(1e-12));

    std::vector<Words> targets;
    for (int i = 0; i < 4; ++i) targets.push_back(random_words(rng, 6, 6));
    targets.push_back(w({"a"}));
    const double threshold = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    const auto common = build_common_words(targets, threshold);
    const auto ref_common = reference::common_words(targets, threshold);
    CHECK(std::set<std::string>(common.words.begin(), common.words.end()) == ref_common);
    CHECK(novel_f1(a, b, ctx, common) == doctest::Approx(reference::novel_f1(a, b, ctx, ref_common)).epsilon(1e-12));

    std::vector<std::vector<PassageId>> rankings;
    std::vector<std::optional<PassageId>> gold;
    for (int i = 0; i < 6; ++i) {
      std::vector<PassageId> r(8);
      std::iota(r.begin(), r.end(), 0);
      std::shuffle(r.begin(), r.end(), rng);
      r.resize(std::uniform_int_distribution<std::size_t>(0, 8)(rng));
      rankings.push_back(r);
      gold.push_back(std::uniform_int_distribution<int>(0, 9)(rng) == 0 ? std::nullopt
                                                                        : std::optional<PassageId>(std::uniform_int_distribution<PassageId>(0, 9)(rng)));
    }
    for (std::size_t k : {1, 3, 10}) {
      CHECK(success_at_k(rankings, gold, k).value == doctest::Approx(reference::success_at_k(rankings, gold, k)));
    }
    CHECK(mrr(rankings, gold).value == doctest::Approx(reference::mrr(rankings, gold)));
    CHECK(mrr(rankings, gold).value >= success_at_k(rankings, gold, 1).value - 1e-12);

    std::vector<std::vector<double>> dists;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> d(std::uniform_int_distribution<std::size_t>(1, 6)(rng));
      double z = 0.0;
      for (auto& x : d) z += x = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      for (auto& x : d) x /= z;
      dists.push_back(d);
    }
    const auto curve = sharpness_curve(dists);
    const auto ref_curve = reference::sharpness(dists);
    REQUIRE(curve.cumulative.size() == ref_curve.size());
    for (std::size_t r = 0; r < ref_curve.size(); ++r) CHECK(curve.cumulative[r] == doctest::Approx(ref_curve[r]).epsilon(1e-12));
    CHECK(curve.cumulative.back() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // TEST_SUITE
