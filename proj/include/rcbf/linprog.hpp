#pragma once

#include <Eigen/Dense>

namespace rcbf::lp {

enum class LpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* to_string(LpStatus status);

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
};

/// Dense two-phase simplex with Bland's anti-cycling rule.
///
/// Solves   minimize c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x free.
/// Free variables are split into positive and negative parts internally.
/// Intended for the small programs that appear in risk envelopes and QP
/// phase-one problems (tens of variables).
LpResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, double tol = 1e-10);

/// Convenience overload without equality rows.
LpResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 double tol = 1e-10);

}  // namespace rcbf::lp
