#include <cstdio>
#include <string>

#include "roughcalc/harness.hpp"

using namespace roughcalc;

// Prints one PASS/FAIL line per criterion, then its sub-checks indented.
int main(int argc, char** argv) {
  const std::string selector = argc > 1 ? argv[1] : "all";
  const AcceptanceSummary s = run_acceptance(selector);
  for (const auto& c : s.criteria) {
    std::printf("criterion %d [%s] %s: %s (%.1f s)\n", c.id, c.tag.c_str(), c.title.c_str(), c.pass ? "PASS" : "FAIL",
                c.seconds);
    for (const auto& k : c.checks)
      std::printf("    %-4s %s: %.6g %s %.6g\n", k.pass ? "ok" : "miss", k.name.c_str(), k.value, k.at_least ? ">=" : "<",
                  k.bound);
    if (!c.error.empty()) std::printf("    error: %s\n", c.error.c_str());
  }
  std::printf("summary: %zu passed, %zu failed, %.1f s\n", s.passed, s.failed, s.seconds);
  return s.failed == 0 ? 0 : 1;
}
