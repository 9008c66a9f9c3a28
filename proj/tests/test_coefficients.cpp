#include <doctest.h>

#include <cmath>

#include "roughcalc/coefficients.hpp"
#include "roughcalc/pathwise.hpp"

using namespace roughcalc;

namespace {

RoughPathPtr share(RoughPath rp) { return std::make_shared<const RoughPath>(std::move(rp)); }

}  // namespace

TEST_CASE("registry builds every named bundle and validates it") {
  const BundleShape s1{1, 1, 1, 1};
  for (const char* spec : {"zero", "const:2", "linear:0.5", "affine:0.5,1", "poly:1,0,2,-1", "trig:1,0.5",
                           "omega-linear:0.7", "omega-quadratic:0.3", "adapted-lipschitz:0.5,2"}) {
    const BundlePtr b = make_bundle(spec, s1);
    CHECK(b->size() == 1);
    CHECK(validate_bundle(*b).ok);
  }
  const BundlePtr r = make_bundle("rotation", {2, 2, 3, 3});
  CHECK(r->cols == 3);
  CHECK(validate_bundle(*r).ok);
  CHECK_THROWS_AS(make_bundle("nope:1", s1), Error);
  CHECK_THROWS_AS(make_bundle("poly:1,x", s1), Error);
  CHECK_THROWS_AS(make_bundle("trig:1", s1), Error);
}

TEST_CASE("registration rejects wrong derivatives") {
  CoefficientBundle b;
  b.name = "bad";
  b.regularity = Regularity::kC33;
  b.path_free = true;
  b.value = [](const TimePoint&, std::span<const double> y, std::span<double> out) { out[0] = y[0] * y[0]; };
  b.dy = [](const TimePoint&, std::span<const double> y, std::span<double> out) { out[0] = y[0]; };
  b.dyy = [](const TimePoint&, std::span<const double>, std::span<double> out) { out[0] = 1.0; };
  try {
    register_bundle(b);
    FAIL("expected a capability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kCapability);
  }
  b.dy = [](const TimePoint&, std::span<const double> y, std::span<double> out) { out[0] = 2 * y[0]; };
  b.dyy = [](const TimePoint&, std::span<const double>, std::span<double> out) { out[0] = 2.0; };
  CHECK_NOTHROW(register_bundle(b));
}

TEST_CASE("probe points form a tensor grid") {
  const auto pts = probe_points(2, {-1.0, 1.0, 9});
  CHECK(pts.size() == 81);
  CHECK(pts.front()[0] == doctest::Approx(-1.0));
  CHECK(pts.back()[1] == doctest::Approx(1.0));
}

TEST_CASE("path view refuses future nodes") {
  const auto base = share(lift_brownian_ito(1, 1, Grid::dyadic(0.0, 1.0, 6), 1));
  const PathContext ctx(base->omega());
  const PathView view(&ctx, 10);
  CHECK_NOTHROW(view.at(10));
  CHECK_THROWS_AS(view.at(11), AdaptednessError);
  double sup = 0.0;
  for (std::size_t i = 0; i <= 10; ++i) sup = std::max(sup, std::abs(base->omega()(i, 0)));
  CHECK(view.running_sup() == doctest::Approx(sup));

  // a coefficient that peeks one node ahead is caught during composition
  CoefficientBundle peek;
  peek.name = "peek";
  peek.regularity = Regularity::kC33;
  peek.uses_path = true;
  peek.value = [](const TimePoint& tp, std::span<const double>, std::span<double> out) {
    out[0] = tp.view().at(tp.node + 1)[0];
  };
  peek.dy = [](const TimePoint&, std::span<const double>, std::span<double>) {};
  peek.dyy = peek.dy;
  peek.path = peek.dy;
  const auto eta_in = ControlledPath::of_driver(base);
  CHECK_THROWS_AS(compose(peek, eta_in), AdaptednessError);
}

TEST_CASE("bundle composition is associative with path composition") {
  const auto base = share(lift_smooth(smooth_test_generator(2, 4), Grid::dyadic(0.0, 1.0, 8)));
  const BundleShape s{2, 2, 1, 2};
  const BundlePtr f = make_bundle("trig:0.8,0.3", s);
  const BundlePtr g = make_bundle("omega-quadratic:0.5", s);
  const ControlledPath theta = ControlledPath::of_driver(base);
  const ControlledPath nested = compose(*g, compose(*f, theta));
  const ControlledPath direct = compose(*compose_bundles(g, f), theta);
  double worst = 0.0;
  for (std::size_t i = 0; i < base->grid().nodes(); ++i) {
    for (std::size_t v = 0; v < 2; ++v) worst = std::max(worst, std::abs(nested.value(i)[v] - direct.value(i)[v]));
    for (std::size_t q = 0; q < 4; ++q)
      worst = std::max(worst, std::abs(nested.derivative(i)[q] - direct.derivative(i)[q]));
  }
  CHECK(worst < 1e-10);
  CHECK(validate_bundle(*compose_bundles(g, f)).ok);
}

TEST_CASE("drift as bracket spreads b over the diagonal") {
  const BundlePtr b = make_bundle("const:3", {1, 1, 1, 2});
  const BundlePtr f = drift_as_bracket(b, 2);
  CHECK(f->cols == 4);
  const TimePoint tp{};
  const std::vector<double> y{0.0};
  const auto v = f->eval_value(tp, y);
  CHECK(v[0] == doctest::Approx(1.5));
  CHECK(v[1] == 0.0);
  CHECK(v[2] == 0.0);
  CHECK(v[3] == doctest::Approx(1.5));
}

TEST_CASE("function norms are finite and scale with the bundle") {
  const auto base = share(lift_brownian_ito(5, 1, Grid::dyadic(0.0, 1.0, 8), 1));
  const BundleShape s{1, 1, 1, 1};
  const FunctionNorms a = function_norms(*make_bundle("omega-linear:1", s), base, {-1, 1, 9});
  const FunctionNorms b = function_norms(*make_bundle("omega-linear:2", s), base, {-1, 1, 9});
  CHECK(std::isfinite(a.norm_2));
  CHECK(a.norm_2 > 0.0);
  CHECK(b.sup_k == doctest::Approx(2 * a.sup_k));
  CHECK(b.controlled == doctest::Approx(2 * a.controlled));
}
