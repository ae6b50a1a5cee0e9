// SPDX-License-Identifier: Apache-2.0
//
// Deliberately naive re-implementations used as oracles by the unit and acceptance tests.
// None of them call into the library's metric or retrieval code.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "guiderag/corpus.hpp"
#include "guiderag/embedder.hpp"

namespace guiderag::reference {

inline double maxsim(const EmbeddingTable& t, std::span<const TokenId> q, std::span<const TokenId> d) {
  double s = 0.0;
  for (TokenId qi : q) {
    double best = -1e300;
    for (TokenId dj : d) {
      double v = 0.0;
      for (std::size_t k = 0; k < t.dim(); ++k) v += t.row(qi)[k] * t.row(dj)[k];
      best = std::max(best, v);
    }
    s += best;
  }
  return s;
}

/// Full scoring and a stable sort: (id, score) by score desc, id asc.
inline std::vector<std::pair<PassageId, double>> rank_all(const EmbeddingTable& t, std::span<const TokenId> q,
                                                          const Corpus& corpus) {
  std::vector<std::pair<PassageId, double>> all;
  for (const auto& p : corpus.passages()) all.emplace_back(p.id, maxsim(t, q, p.tokens));
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return all;
}

inline double success_at_k(const std::vector<std::vector<PassageId>>& rankings,
                           const std::vector<std::optional<PassageId>>& gold, std::size_t k) {
  double hit = 0.0, n = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (!gold[i]) continue;
    n += 1.0;
    for (std::size_t r = 0; r < rankings[i].size() && r < k; ++r) {
      if (rankings[i][r] == *gold[i]) {
        hit += 1.0;
        break;
      }
    }
  }
  return n == 0.0 ? 0.0 : hit / n;
}

inline double mrr(const std::vector<std::vector<PassageId>>& rankings,
                  const std::vector<std::optional<PassageId>>& gold) {
  double s = 0.0, n = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    if (!gold[i]) continue;
    n += 1.0;
    for (std::size_t r = 0; r < rankings[i].size(); ++r) {
      if (rankings[i][r] == *gold[i]) {
        s += 1.0 / static_cast<double>(r + 1);
        break;
      }
    }
  }
  return n == 0.0 ? 0.0 : s / n;
}

/// Overlap by repeatedly removing matched tokens from a copy of the reference.
inline double f1(std::vector<std::string> pred, std::vector<std::string> ref) {
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;
  const double np = static_cast<double>(pred.size()), nr = static_cast<double>(ref.size());
  double common = 0.0;
  for (const auto& w : pred) {
    auto it = std::find(ref.begin(), ref.end(), w);
    if (it != ref.end()) {
      ref.erase(it);
      common += 1.0;
    }
  }
  if (common == 0.0) return 0.0;
  const double p = common / np, r = common / nr;
  return 2.0 * p * r / (p + r);
}

inline std::set<std::string> common_words(const std::vector<std::vector<std::string>>& targets, double threshold) {
  std::map<std::string, double> counts;
  double total = 0.0;
  for (const auto& t : targets) {
    for (const auto& w : t) {
      counts[w] += 1.0;
      total += 1.0;
    }
  }
  // Try prefixes of increasing size; the first to reach the threshold wins.
  std::vector<std::pair<std::string, double>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  for (std::size_t n = 1; n <= items.size(); ++n) {
    double mass = 0.0;
    std::set<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
      mass += items[i].second;
      out.insert(items[i].first);
    }
    if (mass / total >= threshold) return out;
  }
  std::set<std::string> all;
  for (const auto& [w, c] : items) all.insert(w);
  return all;
}

inline double novel_f1(const std::vector<std::string>& pred, const std::vector<std::string>& ref,
                       const std::vector<std::string>& context, const std::set<std::string>& common) {
  auto keep = [&](const std::string& w) {
    return !common.count(w) && std::find(context.begin(), context.end(), w) == context.end();
  };
  std::vector<std::string> fp, fr;
  for (const auto& w : pred) if (keep(w)) fp.push_back(w);
  for (const auto& w : ref) if (keep(w)) fr.push_back(w);
  return f1(fp, fr);
}

inline std::vector<double> sharpness(const std::vector<std::vector<double>>& dists) {
  std::size_t n = 0;
  for (const auto& d : dists) n = std::max(n, d.size());
  std::vector<double> out(n, 0.0);
  for (const auto& d : dists) {
    std::vector<double> s = d;
    std::sort(s.rbegin(), s.rend());
    for (std::size_t r = 0; r < n; ++r) {
      double acc = 0.0;
      if (r >= s.size()) {
        acc = 1.0;
      } else {
        for (std::size_t j = 0; j <= r; ++j) acc += s[j];
      }
      out[r] += acc / static_cast<double>(dists.size());
    }
  }
  return out;
}

}  // namespace guiderag::reference
