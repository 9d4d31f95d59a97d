#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "rcbf/barrier.hpp"
#include "rcbf/errors.hpp"

using namespace rcbf;
using doctest::Approx;

namespace {

BarrierSpec half_plane(double h0, double h1, double l) { return BarrierSpec::affine(Eigen::RowVector2d(h0, h1), l); }

// The four half-planes of the example1 reach set.
BarrierSpec example1_reach_set() {
  return BarrierSpec::min_of({half_plane(1, 0, 2), half_plane(-1, 0, 2), half_plane(0, 1, 2), half_plane(0, -1, 2)});
}

}  // namespace

TEST_CASE("barrier evaluation") {
  CHECK(half_plane(1, 0, 2).evaluate(Eigen::Vector2d(-1, 1)) == 1.0);
  CHECK(example1_reach_set().evaluate(Eigen::Vector2d(4, 0)) == -2.0);
  const BarrierSpec braking(BrakingBarrier{1.0});
  CHECK(braking.evaluate(Eigen::Vector4d(-1, 0, 0, 0)) == 2.0);
  CHECK(braking.evaluate(Eigen::Vector4d(0, 0, 2, 0)) == -4.0);
  CHECK(braking.evaluate(Eigen::Vector4d(0, 0, -2, 0)) == 4.0);

  const BarrierSpec angle(CartPoleAngleBarrier{0.5, 0.04});
  CHECK(angle.evaluate(Eigen::Vector4d(0, 0.1, 0, 0)) == Approx(0.16 - 0.04));
  CHECK(angle.is_convex());
  CHECK_FALSE(braking.is_convex());
  CHECK(example1_reach_set().as_min_of_affine() != nullptr);
  CHECK_FALSE(example1_reach_set().is_convex());

  CHECK_THROWS_AS(BarrierSpec::affine(Eigen::RowVector2d(0, 0), 1.0), ParameterError);
  CHECK_THROWS_AS(BarrierSpec::min_of({}), ParameterError);
  CHECK_THROWS_AS(half_plane(1, 0, 2).evaluate(Eigen::Vector3d::Zero()), DimensionError);
}

TEST_CASE("gradients") {
  const BarrierSpec braking(BrakingBarrier{2.0});
  const Eigen::Vector4d x(0.5, 0.1, -1.5, 0.0);
  const Eigen::VectorXd g = braking.gradient(x);
  CHECK(g(0) == -4.0);
  CHECK(g(2) == -3.0);

  CustomBarrier c;
  c.h = [](const Eigen::VectorXd& v) { return v(0) * v(0) + 3.0 * v(1); };
  const BarrierSpec custom(c);
  const Eigen::VectorXd gc = custom.gradient(Eigen::Vector2d(2.0, -1.0));
  CHECK(gc(0) == Approx(4.0).epsilon(1e-7));
  CHECK(gc(1) == Approx(3.0).epsilon(1e-7));
}

TEST_CASE("composites bracket their parts") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-5.0, 5.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<BarrierSpec> parts;
    for (int i = 0; i < 3; ++i) parts.push_back(half_plane(d(rng), d(rng) + 10.0, d(rng)));
    const auto lo = BarrierSpec::min_of(parts);
    const auto hi = BarrierSpec::max_of(parts);
    const Eigen::Vector2d x(d(rng), d(rng));
    for (const auto& p : parts) {
      CHECK(lo.evaluate(x) <= p.evaluate(x));
      CHECK(p.evaluate(x) <= hi.evaluate(x));
    }
  }
}

TEST_CASE("reach_time_bound") {
  CHECK(reach_time_bound(16.2, 0.9, -2.0) == Approx(1.105).epsilon(5e-4));
  CHECK(reach_time_bound(6.5, 0.9, -2.0) == Approx(2.546).epsilon(5e-4));
  CHECK(reach_time_bound(4.0, 0.9, -2.0) == Approx(3.849).epsilon(5e-4));
  CHECK(std::abs(reach_time_bound(0.1, 0.05, -0.2) - 0.3667) < 5e-4);
  CHECK_THROWS_AS(reach_time_bound(4.0, 0.9, 0.5), PreconditionError);
  CHECK_THROWS_AS(reach_time_bound(4.0, 1.0, -1.0), ParameterError);
  CHECK_THROWS_AS(reach_time_bound(0.0, 0.9, -1.0), ParameterError);
}

TEST_CASE("reach_time_bound is monotone") {
  double prev = 0.0;
  for (double h0 = -0.1; h0 > -50.0; h0 *= 1.3) {
    const double t = reach_time_bound(4.0, 0.9, h0);
    CHECK(t > prev);
    prev = t;
  }
  prev = 1e300;
  for (double eps = 0.1; eps < 100.0; eps *= 1.5) {
    const double t = reach_time_bound(eps, 0.9, -2.0);
    CHECK(t < prev);
    prev = t;
  }
}

TEST_CASE("the scalar reach recursion crosses zero within the bound") {
  for (double eps : {0.5, 4.0, 16.2}) {
    for (double gamma : {0.3, 0.9, 0.99}) {
      for (double h0 : {-0.1, -2.0, -30.0}) {
        const double bound = reach_time_bound(eps, gamma, h0);
        int t = 0;
        while (std::pow(gamma, t) * (h0 - eps) + eps < 0.0) ++t;
        CHECK(t <= std::ceil(bound));
      }
    }
  }
}

TEST_CASE("verify_alpha") {
  const std::vector<double> r{1e-3, 0.1, 1.0, 5.0, 100.0};
  const auto constant = verify_alpha(ClassK(0.9), r);
  CHECK(constant.passed);
  CHECK(constant.delta == 0.9);
  CHECK_THROWS_AS(verify_alpha(ClassK(1.2), r), ParameterError);
  CHECK_THROWS_AS(verify_alpha(ClassK([](double v) { return v; }, "identity"), r), ValidationError);
  const auto frac = verify_alpha(ClassK([](double v) { return v / (1.0 + v); }, "r/(1+r)"), r);
  CHECK(frac.passed);
  CHECK(frac.delta == Approx(1.0 / (1.0 + 1e-3)));
}

TEST_CASE("DecaySpec") {
  CHECK(DecaySpec::safety(0.9).rhs(2.0) == Approx(1.8));
  CHECK(DecaySpec::reach(0.9, 4.0).rhs(-2.0) == Approx(-1.8 + 0.4));
  CHECK_THROWS_AS(DecaySpec::reach(1.5, 4.0).validate(), ParameterError);
  CHECK_THROWS_AS(DecaySpec::reach(0.9, -1.0).validate(), ParameterError);
  CHECK_THROWS_AS(DecaySpec::safety(0.0).validate(), ParameterError);
  CHECK_NOTHROW(DecaySpec::safety(ClassK([](double v) { return 0.5 * v * v / (1.0 + v); }, "q")).validate());
}
