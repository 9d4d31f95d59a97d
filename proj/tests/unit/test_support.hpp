#pragma once

#include <memory>
#include <random>
#include <vector>

#include "rcbf/filter.hpp"
#include "rcbf/risk.hpp"

namespace rcbf::testing {

// Random finite distribution with 2..8 outcomes in [-10, 10].
inline ScalarRandomVariable random_rv(std::mt19937_64& rng, int min_m = 2, int max_m = 8) {
  std::uniform_int_distribution<int> size(min_m, max_m);
  std::uniform_real_distribution<double> value(-10.0, 10.0);
  std::uniform_real_distribution<double> weight(0.05, 1.0);
  const int m = size(rng);
  std::vector<double> v(m), p(m);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    v[i] = value(rng);
    p[i] = weight(rng);
    total += p[i];
  }
  for (double& x : p) x /= total;
  // Renormalize so the residual rounding lands on the last entry.
  double head = 0.0;
  for (int i = 0; i + 1 < m; ++i) head += p[i];
  p[m - 1] = 1.0 - head;
  return {std::move(v), std::move(p)};
}

inline std::shared_ptr<const StochasticSystem> example1() {
  static const auto sys = std::make_shared<const StochasticSystem>(make_example1());
  return sys;
}

// example1 safety filter: h = x1 + 2, u in [-5, 5], u_des = 0.
inline FilterProblem ex1_problem(RiskSpec risk, double alpha = 0.9) {
  return {example1(),
          BarrierSpec::affine(Eigen::RowVector2d(1.0, 0.0), 2.0),
          risk,
          DecaySpec::safety(alpha),
          Eigen::VectorXd::Constant(1, -5.0),
          Eigen::VectorXd::Constant(1, 5.0),
          Eigen::VectorXd::Zero(1),
          {}};
}

// Goal square |x1| <= 2, |x2| <= 2 as a min of four half-planes.
inline BarrierSpec reach_square() {
  auto hp = [](double a, double b) { return BarrierSpec::affine(Eigen::RowVector2d(a, b), 2.0); };
  return BarrierSpec::min_of({hp(1, 0), hp(-1, 0), hp(0, 1), hp(0, -1)});
}

}  // namespace rcbf::testing
