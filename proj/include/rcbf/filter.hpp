#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcbf/barrier.hpp"
#include "rcbf/dynamics.hpp"
#include "rcbf/risk.hpp"

namespace rcbf {

struct FilterTolerances {
  double constraint = 1e-6;
  double kkt = 1e-8;
  double dccp_step = 1e-8;
  int dccp_max_iterations = 50;
  int dccp_restarts = 8;
  double slack_penalty = 1e6;
};

/// One-step safety filter:
///   minimize |u - u_des|^2  s.t.  u_lo <= u <= u_hi,
///                                 rho(h(x+(u))) >= alpha(h(x))                  (safety)
///                                 rho(h(x+(u))) >= gamma h(x) + eps (1 - gamma)  (reach)
struct FilterProblem {
  std::shared_ptr<const StochasticSystem> system;
  BarrierSpec barrier;
  RiskSpec risk;
  DecaySpec decay;
  Eigen::VectorXd u_lo;
  Eigen::VectorXd u_hi;
  Eigen::VectorXd u_des;
  FilterTolerances tol;

  void validate() const;
  /// Right-hand side of the risk constraint at state x.
  double rhs(const Eigen::VectorXd& x) const;
};

enum class FilterStatus { Optimal, LocallyOptimal, RelaxedInfeasible, Failed };

const char* to_string(FilterStatus status);

struct FilterDiagnostics {
  std::string path;
  int iterations = 0;
  double kkt_residual = 0.0;
  double wall_time_us = 0.0;
  double slack = 0.0;  // risk-constraint relaxation, 0 unless RelaxedInfeasible
  double zeta = 0.0;   // EVaR multiplier at the returned control
  int restarts = 0;
  std::string note;
};

struct FilterSolution {
  Eigen::VectorXd u_star;
  double objective = 0.0;
  double risk_residual = 0.0;
  FilterStatus status = FilterStatus::Failed;
  FilterDiagnostics diagnostics;

  bool certified() const { return status == FilterStatus::Optimal || status == FilterStatus::LocallyOptimal; }
};

/// Per disturbance outcome j: h(x+_j(u)) = a_j + b_j u, with b stored as
/// the rows of a |W| x m matrix.
struct AffineOutcomeCoeffs {
  Eigen::VectorXd a;
  Eigen::MatrixXd b;

  std::size_t size() const { return static_cast<std::size_t>(a.size()); }
};

/// Requires a Linear or ControlAffine system and an Affine barrier.
AffineOutcomeCoeffs affine_outcome_coeffs(const StochasticSystem& system, const BarrierSpec& barrier,
                                          const Eigen::VectorXd& x);

FilterSolution solve_expectation_qp(const FilterProblem& problem, const Eigen::VectorXd& x);
FilterSolution solve_cvar_qp(const FilterProblem& problem, const Eigen::VectorXd& x);
FilterSolution solve_evar(const FilterProblem& problem, const Eigen::VectorXd& x);

/// EVaR filter with the multiplier held at zeta. Status Failed when the
/// fixed-zeta constraint admits no control; feasible output is always a
/// valid (conservative) certificate.
FilterSolution solve_evar_at_zeta(const FilterProblem& problem, const Eigen::VectorXd& x, double zeta);

/// Convex-concave procedure: each outcome value is replaced by its
/// linearization at the current iterate and the affine problem is solved.
FilterSolution solve_dccp(const FilterProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& u_init);

/// Routes to the matching solver; see the README for the dispatch table.
FilterSolution solve(const FilterProblem& problem, const Eigen::VectorXd& x);

/// rho(h(x+(u))) - rhs, evaluated exactly over the successor set.
double certify(const FilterProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& u);

}  // namespace rcbf
