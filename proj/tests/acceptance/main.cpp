// SPDX-License-Identifier: Apache-2.0
//
// Runs every acceptance criterion and prints one PASS/FAIL line per criterion.
// Usage: guiderag_acceptance [criterion ids...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "acceptance/criteria.hpp"

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::err);
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& c : guiderag::acceptance::all_criteria()) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    guiderag::acceptance::Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = out.pass;
    std::string timing = fmt::format("{:.1f}s", secs);
    if (c.budget_seconds > 0.0) {
      timing += fmt::format(" of {:.0f}s budget", c.budget_seconds);
      if (secs >= c.budget_seconds) {
        pass = false;
        timing += " EXCEEDED";
      }
    }
    failures += !pass;
    fmt::print("criterion {}: {} - {} [{}] ({})\n", c.id, pass ? "PASS" : "FAIL", c.name, out.detail, timing);
    std::fflush(stdout);
  }
  return failures == 0 ? EXIT_SUCCESS : EXIT_FAILURE;
}
