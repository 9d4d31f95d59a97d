#pragma once

#include <optional>

#include <Eigen/Dense>

namespace rcbf::qp {

/// minimize 0.5 x'Px + q'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq.
struct QpProblem {
  Eigen::MatrixXd P;
  Eigen::VectorXd q;
  Eigen::MatrixXd A_ub;
  Eigen::VectorXd b_ub;
  Eigen::MatrixXd A_eq;
  Eigen::VectorXd b_eq;

  Eigen::Index dimension() const { return q.size(); }
  /// Throws DimensionError on inconsistent shapes, ParameterError when P is
  /// not symmetric positive semidefinite within 1e-10.
  void validate() const;
};

enum class QpStatus { Optimal, Infeasible, Unbounded, IterationLimit };

const char* to_string(QpStatus status);

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double dual = 0.0;  // most negative inequality multiplier, as a positive number

  double max() const;
};

struct QpResult {
  QpStatus status = QpStatus::Infeasible;
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_ub;  // >= 0 at optimality
  Eigen::VectorXd lambda_eq;
  double objective = 0.0;
  int iterations = 0;
  KktResiduals kkt;
};

struct QpOptions {
  double tol = 1e-10;
  int max_iterations = 500;
  /// Feasible starting point; phase one is skipped when it checks out.
  std::optional<Eigen::VectorXd> x0;
};

/// Primal active-set method with a null-space step.
///
/// Handles semidefinite P: a direction of zero curvature with nonzero slope
/// is followed as a ray to the first blocking constraint, and reported as
/// Unbounded if none blocks. Phase one is a linear program. Meant for dense
/// problems of up to a few dozen variables.
QpResult solve(const QpProblem& problem, const QpOptions& options = {});

KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda_ub,
                           const Eigen::VectorXd& lambda_eq);

}  // namespace rcbf::qp
