// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "guiderag/common.hpp"
#include "guiderag_cli/cli.hpp"

namespace guiderag::cli {

namespace {

using ojson = nlohmann::ordered_json;

bool is_bookkeeping(const std::string& key) {
  static const std::set<std::string> skip{"examples", "evaluated", "skipped", "common_words",
                                          "sharpness"};
  return skip.contains(key);
}

void flatten(const ojson& j, const std::string& prefix, std::vector<std::pair<std::string, double>>& out) {
  for (const auto& [key, value] : j.items()) {
    if (is_bookkeeping(key)) continue;
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      flatten(value, path, out);
    } else if (value.is_number()) {
      out.emplace_back(path, value.get<double>());
    }
  }
}

std::vector<std::pair<std::string, double>> metrics_of(std::string_view text, const char* which) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("report ") + which + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidArgument(std::string("report ") + which + " must be a JSON object");
  std::vector<std::pair<std::string, double>> out;
  flatten(j, "", out);
  return out;
}

}  // namespace

std::vector<MetricDelta> compare_reports(std::string_view report_a, std::string_view report_b) {
  const auto a = metrics_of(report_a, "A");
  const auto b = metrics_of(report_b, "B");
  std::set<std::string> ka, kb;
  for (const auto& [k, v] : a) ka.insert(k);
  for (const auto& [k, v] : b) kb.insert(k);
  if (ka != kb) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(ka.begin(), ka.end(), kb.begin(), kb.end(), std::back_inserter(diff));
    std::string names;
    for (const auto& d : diff) names += (names.empty() ? "" : ", ") + d;
    throw InvalidArgument("reports cover different metrics: " + names);
  }
  std::vector<MetricDelta> out;
  for (const auto& [key, va] : a) {
    const auto it = std::find_if(b.begin(), b.end(), [&](const auto& p) { return p.first == key; });
    MetricDelta d{key, va, it->second, it->second - va, std::nullopt};
    if (va != 0.0) d.relative = d.delta / std::abs(va);
    out.push_back(std::move(d));
  }
  return out;
}

std::string compare_json(const std::vector<MetricDelta>& deltas) {
  ojson j = ojson::array();
  for (const auto& d : deltas) {
    j.push_back({{"metric", d.metric},
                 {"a", d.a},
                 {"b", d.b},
                 {"delta", d.delta},
                 {"relative", d.relative ? ojson(*d.relative) : ojson(nullptr)}});
  }
  return j.dump(2) + "\n";
}

std::string compare_text(const std::vector<MetricDelta>& deltas) {
  std::size_t width = 6;
  for (const auto& d : deltas) width = std::max(width, d.metric.size());
  std::string out = fmt::format("{:<{}}  {:>10}  {:>10}  {:>10}  {:>9}\n", "metric", width, "A", "B",
                                "delta", "r.i.");
  for (const auto& d : deltas) {
    const std::string rel = d.relative ? fmt::format("{:+.1f}%", 100.0 * *d.relative) : "n/a";
    out += fmt::format("{:<{}}  {:>10.4f}  {:>10.4f}  {:>+10.4f}  {:>9}\n", d.metric, width, d.a, d.b,
                       d.delta, rel);
  }
  return out;
}

}  // namespace guiderag::cli
