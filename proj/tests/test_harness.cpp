#include <doctest.h>

#include "roughcalc/errors.hpp"
#include "roughcalc/harness.hpp"

using namespace roughcalc;

TEST_CASE("convergence studies: declared examples") {
  StudyConfig c;
  c.levels = {6, 7, 8, 9, 10, 11, 12};
  c.driver = "smooth";
  const ConvergenceReport a = run_convergence("integral-refinement", c);
  CHECK(a.fit.order >= 1.8);
  CHECK(a.pass);
  CHECK(a.scales.size() == 7);

  c.levels = {8, 9, 10, 11, 12, 13, 14};
  c.driver = "brownian";
  const ConvergenceReport t = run_convergence("taylor-order", c);
  CHECK(t.threshold == doctest::Approx(c.pair.young_exponent() - 0.1));
  CHECK(t.pass);
  c.power = 3;
  const ConvergenceReport t3 = run_convergence("taylor-order", c);
  CHECK_FALSE(t3.fit.exact);
  CHECK(t3.fit.order >= t3.threshold);
}

TEST_CASE("convergence studies: validation") {
  StudyConfig c;
  CHECK_THROWS_AS(run_convergence("taylor-order", c), Error);  // empty levels
  c.levels = {8, 9};
  CHECK_THROWS_AS(run_convergence("taylor-order", c), Error);
  c.levels = {8, 8, 9};
  CHECK_THROWS_AS(run_convergence("taylor-order", c), Error);
  c.levels = {8, 9, 10};
  CHECK_THROWS_AS(run_convergence("no-such-study", c), Error);
  c.driver = "fractional";
  CHECK_THROWS_AS(run_convergence("taylor-order", c), Error);
  c.driver.clear();
  c.pair = {0.3, 0.3};
  CHECK_THROWS_AS(run_convergence("taylor-order", c), Error);
  CHECK_THROWS_AS(default_levels("no-such-study"), Error);
  for (const auto& s : study_names()) CHECK(default_levels(s).size() >= 3);
}

TEST_CASE("convergence studies: threshold override decides PASS") {
  StudyConfig c;
  c.levels = {6, 7, 8};
  c.driver = "smooth";
  c.threshold = 5.0;
  const ConvergenceReport r = run_convergence("rde-vs-oracle", c);
  CHECK(r.threshold == 5.0);
  CHECK_FALSE(r.pass);
}

TEST_CASE("acceptance selectors") {
  const AcceptanceSummary s = run_acceptance("exact-identities");
  REQUIRE(s.criteria.size() == 1);
  CHECK(s.criteria[0].id == 1);
  for (const auto& k : s.criteria[0].checks)
    if (k.name != "runtime seconds") CHECK(k.value < 1e-12);
  CHECK(s.passed + s.failed == 1);
  CHECK(run_acceptance("1").criteria[0].tag == "exact-identities");
  CHECK_THROWS_AS(run_acceptance("nope"), Error);
  CHECK(acceptance_tags().size() == 10);
}
