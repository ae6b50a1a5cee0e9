// SPDX-License-Identifier: Apache-2.0
//
// Entry point of the `guiderag` tool. Exit codes: 0 success, 1 user error, 2 internal error.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace guiderag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);  // args excludes the program name

struct MetricDelta {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;                 // b - a
  std::optional<double> relative;     // delta / |a|, absent when a == 0
};

/// Per-metric differences between two evaluation reports (JSON text). Every numeric leaf is a
/// metric, keyed by its dotted path; bookkeeping counts and curves are ignored. Throws
/// InvalidArgument when the two metric sets differ.
std::vector<MetricDelta> compare_reports(std::string_view report_a, std::string_view report_b);
std::string compare_json(const std::vector<MetricDelta>& deltas);
std::string compare_text(const std::vector<MetricDelta>& deltas);

}  // namespace guiderag::cli
