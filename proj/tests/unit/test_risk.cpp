#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "rcbf/errors.hpp"
#include "rcbf/risk.hpp"
#include "test_support.hpp"

using namespace rcbf;
using doctest::Approx;

namespace {

// Independent oracle: dense grid minimization of the Rockafellar objective.
double cvar_grid_oracle(const ScalarRandomVariable& rv, double beta, double lo, double hi, int n) {
  double best = 1e300;
  for (int k = 0; k <= n; ++k) {
    const double zeta = lo + (hi - lo) * k / n;
    double f = zeta;
    for (std::size_t i = 0; i < rv.size(); ++i) {
      f += rv.pmf()[i] * std::max(-rv.values()[i] - zeta, 0.0) / beta;
    }
    best = std::min(best, f);
  }
  return -best;
}

// Independent oracle: dense log-spaced zeta grid for EVaR, no refinement.
double evar_grid_oracle(const ScalarRandomVariable& rv, double beta, int n) {
  double best = -1e300;
  for (int k = 0; k <= n; ++k) {
    const double zeta = std::pow(10.0, -6.0 + 12.0 * k / n);
    double s = 0.0;
    for (std::size_t i = 0; i < rv.size(); ++i) s += rv.pmf()[i] * std::exp(-zeta * rv.values()[i]);
    if (s > 0.0 && std::isfinite(s)) best = std::max(best, -std::log(s / beta) / zeta);
  }
  return best;
}

}  // namespace

TEST_CASE("ScalarRandomVariable validates its pmf") {
  CHECK_THROWS_AS(ScalarRandomVariable({}, {}), ParameterError);
  CHECK_THROWS_AS(ScalarRandomVariable({1.0, 2.0}, {1.0}), DimensionError);
  CHECK_THROWS_AS(ScalarRandomVariable({1.0, 2.0}, {0.6, 0.6}), ParameterError);
  CHECK_THROWS_AS(ScalarRandomVariable({1.0, 2.0}, {1.5, -0.5}), ParameterError);
  CHECK_NOTHROW(ScalarRandomVariable({1.0, 2.0}, {0.25, 0.75}));
}

TEST_CASE("expectation") {
  CHECK(expectation(ScalarRandomVariable({3.0 - 0.5, 3.0 + 0.5}, {0.5, 0.5})) == Approx(3.0));
  CHECK(expectation(ScalarRandomVariable({7.0, 7.0, 7.0}, {0.2, 0.3, 0.5})) == Approx(7.0));
  CHECK(expectation(ScalarRandomVariable({0.0, 10.0}, {0.5, 0.5})) == Approx(5.0));
}

TEST_CASE("value_at_risk") {
  CHECK(value_at_risk(ScalarRandomVariable::uniform({1.0, 2.0, 3.0}), 0.4) == 2.0);
  CHECK(value_at_risk(ScalarRandomVariable({0.0, 10.0}, {0.5, 0.5}), 1e-9) == 0.0);
  CHECK(value_at_risk(ScalarRandomVariable({4.2}, {1.0}), 0.3) == 4.2);
  // Ties: the mass of equal outcomes is pooled before comparing with beta.
  CHECK(value_at_risk(ScalarRandomVariable({5.0, 1.0, 1.0}, {0.4, 0.3, 0.3}), 0.5) == 1.0);
  CHECK_THROWS_AS(value_at_risk(ScalarRandomVariable({1.0}, {1.0}), 1.0), ParameterError);
  CHECK_THROWS_AS(value_at_risk(ScalarRandomVariable({1.0}, {1.0}), 0.0), ParameterError);
}

TEST_CASE("cvar matches hand values and the grid oracle") {
  CHECK(cvar(ScalarRandomVariable({0.0, 10.0}, {0.5, 0.5}), 0.5) == Approx(0.0));
  const auto rv = ScalarRandomVariable::uniform({1.0, 2.0, 3.0});
  const double oracle = cvar_grid_oracle(rv, 0.5, -4.0, 0.0, 400000);
  CHECK(oracle == Approx(4.0 / 3.0).epsilon(1e-9));
  CHECK(cvar(rv, 0.5) == Approx(oracle).epsilon(1e-9));
  CHECK(cvar(rv, 1.0) == Approx(expectation(rv)));
  CHECK_THROWS_AS(cvar(rv, 0.0), ParameterError);
  CHECK_THROWS_AS(cvar(rv, 1.5), ParameterError);
}

TEST_CASE("cvar_via_rockafellar agrees with the sort-based evaluation") {
  CHECK(cvar_via_rockafellar(ScalarRandomVariable({0.0, 10.0}, {0.5, 0.5}), 0.5) == Approx(0.0));
  CHECK(cvar_via_rockafellar(ScalarRandomVariable::uniform({1.0, 2.0, 3.0}), 0.5) ==
        Approx(4.0 / 3.0).epsilon(1e-12));
  CHECK(cvar_via_rockafellar(ScalarRandomVariable({-2.5}, {1.0}), 0.3) == Approx(-2.5));
}

TEST_CASE("evar") {
  CHECK(evar(ScalarRandomVariable({0.0, 1.0}, {0.5, 0.5}), 0.5) == Approx(0.0));
  const auto rv = ScalarRandomVariable({1.0, 2.0, 3.0}, {0.2, 0.5, 0.3});
  CHECK(evar(rv, 1.0) == Approx(expectation(rv)));

  const auto u = ScalarRandomVariable::uniform({1.0, 2.0, 3.0});
  const double v = evar(u, 0.5);
  CHECK(v >= 1.0);
  CHECK(v <= cvar(u, 0.5));
  // Refined search can only improve on the dense grid, and by very little.
  const double oracle = evar_grid_oracle(u, 0.5, 200000);
  CHECK(v >= oracle - 1e-12);
  CHECK(v == Approx(oracle).epsilon(1e-6));
  CHECK(v == Approx(1.1317583705848457).epsilon(1e-9));

  // Fixed-zeta objective never exceeds the supremum.
  for (double zeta : {1e-3, 0.1, 1.0, 2.0, 10.0, 1e3}) CHECK(evar_at(u, 0.5, zeta) <= v + 1e-12);
  CHECK_THROWS_AS(evar(u, 0.0), ParameterError);
}

TEST_CASE("evar handles extreme magnitudes without overflow") {
  const auto rv = ScalarRandomVariable({1e20, 1e20 + 1e6, 3e20}, {0.3, 0.3, 0.4});
  const double v = evar(rv, 0.2);
  CHECK(std::isfinite(v));
  CHECK(v >= 1e20);
}

TEST_CASE("cvar_envelope") {
  SUBCASE("two outcomes, beta 0.5: caps of 1, vertices (1,0) and (0,1)") {
    const std::vector<double> p{0.5, 0.5};
    const auto env = cvar_envelope(p, 0.5);
    CHECK(env.contains(Eigen::Vector2d(1.0, 0.0)));
    CHECK(env.contains(Eigen::Vector2d(0.0, 1.0)));
    CHECK(env.contains(Eigen::Vector2d(0.3, 0.7)));
    CHECK_FALSE(env.contains(Eigen::Vector2d(0.5, 0.6)));
    CHECK(env.b().tail(2).isApprox(Eigen::Vector2d(1.0, 1.0)));
  }
  SUBCASE("beta 1 collapses to the pmf") {
    const std::vector<double> p{0.2, 0.8};
    const auto env = cvar_envelope(p, 1.0);
    CHECK(env.contains(Eigen::Vector2d(0.2, 0.8)));
    CHECK_FALSE(env.contains(Eigen::Vector2d(0.25, 0.75)));
  }
  SUBCASE("caps above the simplex give the whole simplex") {
    const std::vector<double> p{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto env = cvar_envelope(p, 1.0 / 3);
    CHECK(env.contains(Eigen::Vector3d(1.0, 0.0, 0.0)));
    CHECK(env.contains(Eigen::Vector3d(0.0, 0.0, 1.0)));
  }
}

TEST_CASE("RiskEnvelope construction rejects bad polytopes") {
  // Empty: q1 <= -1 with q in the simplex.
  Eigen::MatrixXd B(3, 2);
  B << 1, 1, -1, -1, 1, 0;
  CHECK_THROWS_AS(RiskEnvelope(B, Eigen::Vector3d(1, -1, -1)), EnvelopeError);
  // Not inside the simplex: only q1 + q2 <= 1.
  Eigen::MatrixXd B2(1, 2);
  B2 << 1, 1;
  CHECK_THROWS_AS(RiskEnvelope(B2, Eigen::VectorXd::Ones(1)), EnvelopeError);
}

TEST_CASE("envelope_min_expectation") {
  const std::vector<double> half{0.5, 0.5};
  CHECK(envelope_min_expectation(ScalarRandomVariable({0.0, 10.0}, half), cvar_envelope(half, 0.5)) ==
        Approx(0.0));
  const auto rv = ScalarRandomVariable({1.0, 2.0, 3.0}, {0.2, 0.5, 0.3});
  CHECK(envelope_min_expectation(rv, point_envelope(rv.pmf())) == Approx(expectation(rv)));
  const auto u = ScalarRandomVariable::uniform({1.0, 2.0, 3.0});
  CHECK(envelope_min_expectation(u, cvar_envelope(u.pmf(), 0.5)) == Approx(4.0 / 3.0).epsilon(1e-10));
  CHECK_THROWS_AS(envelope_min_expectation(u, cvar_envelope(half, 0.5)), DimensionError);
}

TEST_CASE("nested_risk") {
  const std::vector<double> pmf{0.3, 0.7};
  SUBCASE("depth one is the one-step risk") {
    ScenarioTree tree(1, pmf, {1.0, 4.0});
    CHECK(nested_risk(tree, RiskSpec::cvar(0.5)) ==
          Approx(cvar(ScalarRandomVariable({1.0, 4.0}, pmf), 0.5)));
  }
  SUBCASE("expectation is the path-weighted mean") {
    ScenarioTree tree(2, pmf, {1.0, 4.0, 2.0, 5.0});
    const double mean = 0.09 * 1.0 + 0.21 * 4.0 + 0.21 * 2.0 + 0.49 * 5.0;
    CHECK(nested_risk(tree, RiskSpec::expectation()) == Approx(mean));
  }
  SUBCASE("depth two by hand recursion") {
    // Left child CVaR_0.5 of {1,4}: (0.3*1 + 0.2*4)/0.5 = 2.2; right of {2,5}: 3.2;
    // root CVaR_0.5 of {2.2, 3.2}: (0.3*2.2 + 0.2*3.2)/0.5 = 2.6.
    ScenarioTree tree(2, pmf, {1.0, 4.0, 2.0, 5.0});
    CHECK(nested_risk(tree, RiskSpec::cvar(0.5)) == Approx(2.6));
  }
  SUBCASE("worst case recursion equals the minimum leaf") {
    ScenarioTree tree(3, {0.5, 0.5}, {3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0});
    CHECK(nested_risk(tree, RiskSpec::cvar(1e-9)) == Approx(1.0));
  }
  SUBCASE("malformed trees") {
    CHECK_THROWS_AS(ScenarioTree(2, pmf, {1.0, 2.0, 3.0}), StructuralError);
    CHECK_THROWS_AS(ScenarioTree(1, {0.5, 0.6}, {1.0, 2.0}), StructuralError);
    CHECK_THROWS_AS(ScenarioTree(1, {}, {}), StructuralError);
  }
}

TEST_CASE("coherence properties on random variables") {
  std::mt19937_64 rng(20240611);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = testing::random_rv(rng);
    std::vector<double> shifted(a.values().begin(), a.values().end());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (double& v : shifted) v += 2.0 * unit(rng);
    const ScalarRandomVariable b(shifted, {a.pmf().begin(), a.pmf().end()});
    const double beta = 0.05 + 0.9 * unit(rng);
    for (const RiskSpec spec : {RiskSpec::expectation(), RiskSpec::cvar(beta), RiskSpec::evar(beta)}) {
      CAPTURE(spec.label());
      CHECK(evaluate(a, spec) <= evaluate(b, spec) + 1e-9);
    }
    CHECK(cvar(a, beta) <= expectation(a) + 1e-9);
    CHECK(evar(a, beta) <= cvar(a, beta) + 1e-9);
    CHECK(evar(a, beta) >= a.min_value() - 1e-9);
    CHECK(cvar(a, beta) == Approx(cvar_via_rockafellar(a, beta)).epsilon(1e-9));
  }
}
