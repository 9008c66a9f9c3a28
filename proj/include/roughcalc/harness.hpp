#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "roughcalc/convergence.hpp"
#include "roughcalc/grid.hpp"

namespace roughcalc {

// Convergence studies: integral-refinement, rde-vs-oracle, backward-identity,
// taylor-order, rpde-roundtrip.
struct StudyConfig {
  HolderPair pair{};
  std::vector<int> levels;          // strictly increasing, at least three
  std::uint64_t seed = 1;
  std::string driver;               // smooth | brownian; empty picks the study default
  std::optional<double> threshold;  // overrides the declared threshold
  int power = 2;                    // taylor-order: theta = w^power
};

std::vector<std::string> study_names();
std::vector<int> default_levels(const std::string& study);
ConvergenceReport run_convergence(const std::string& study, const StudyConfig& config);

// Acceptance criteria 1..10.
struct Check {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool at_least = false;  // value >= bound, else value < bound
  bool pass = false;
};

struct CriterionResult {
  int id = 0;
  std::string tag;
  std::string title;
  std::vector<Check> checks;
  bool pass = false;
  double seconds = 0.0;
  std::string error;  // set when a check threw
};

struct AcceptanceSummary {
  std::vector<CriterionResult> criteria;
  std::size_t passed = 0;
  std::size_t failed = 0;
  double seconds = 0.0;
};

// Tags: exact-identities, bracket, integral-refinement, backward-identity, rde-oracle,
// riccati (linear RDEs), sde, calculus, rpde, runtime. Also "all" or a criterion number.
// The runtime criterion runs the whole suite.
std::vector<std::string> acceptance_tags();
AcceptanceSummary run_acceptance(const std::string& selector = "all");

}  // namespace roughcalc
