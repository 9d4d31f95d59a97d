#include "rcbf/linprog.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "rcbf/errors.hpp"

namespace rcbf::lp {

const char* to_string(LpStatus status) {
  switch (status) {
    case LpStatus::Optimal:
      return "optimal";
    case LpStatus::Infeasible:
      return "infeasible";
    case LpStatus::Unbounded:
      return "unbounded";
    case LpStatus::IterationLimit:
      return "iteration-limit";
  }
  return "unknown";
}

namespace {

// Tableau layout: rows 0..m-1 are constraints, row m is the objective
// (reduced costs), last column is the right-hand side.
class Tableau {
 public:
  Tableau(Eigen::MatrixXd t, std::vector<int> basis, double tol)
      : t_(std::move(t)), basis_(std::move(basis)), tol_(tol) {}

  int rows() const { return static_cast<int>(t_.rows()) - 1; }
  int cols() const { return static_cast<int>(t_.cols()) - 1; }

  void pivot(int r, int c) {
    t_.row(r) /= t_(r, c);
    for (int i = 0; i <= rows(); ++i) {
      if (i != r && t_(i, c) != 0.0) {
        t_.row(i) -= t_(i, c) * t_.row(r);
      }
    }
    basis_[r] = c;
  }

  // Loads a cost vector (length cols()) and prices out the basic columns.
  void set_objective(const Eigen::VectorXd& cost) {
    t_.row(rows()).setZero();
    t_.row(rows()).head(cols()) = cost.transpose();
    for (int i = 0; i < rows(); ++i) {
      const double cb = t_(rows(), basis_[i]);
      if (cb != 0.0) t_.row(rows()) -= cb * t_.row(i);
    }
  }

  // Runs primal simplex on columns [0, active_cols). Returns Optimal,
  // Unbounded or IterationLimit.
  LpStatus run(int active_cols, int& iterations, int max_iter) {
    while (iterations < max_iter) {
      int enter = -1;
      for (int j = 0; j < active_cols; ++j) {
        if (t_(rows(), j) < -tol_) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      int leave = -1;
      double best = std::numeric_limits<double>::infinity();
      for (int i = 0; i < rows(); ++i) {
        const double a = t_(i, enter);
        if (a > tol_) {
          const double ratio = t_(i, cols()) / a;
          if (ratio < best - tol_ || (leave >= 0 && std::abs(ratio - best) <= tol_ &&
                                        basis_[i] < basis_[leave])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return LpStatus::Unbounded;
      pivot(leave, enter);
      ++iterations;
    }
    return LpStatus::IterationLimit;
  }

  double rhs(int r) const { return t_(r, cols()); }
  double entry(int r, int c) const { return t_(r, c); }
  double objective_row_rhs() const { return t_(rows(), cols()); }
  const std::vector<int>& basis() const { return basis_; }

  void drop_row(int r) {
    const int n = static_cast<int>(t_.rows());
    Eigen::MatrixXd next(n - 1, t_.cols());
    next.topRows(r) = t_.topRows(r);
    next.bottomRows(n - 1 - r) = t_.bottomRows(n - 1 - r);
    t_ = std::move(next);
    basis_.erase(basis_.begin() + r);
  }

 private:
  Eigen::MatrixXd t_;
  std::vector<int> basis_;
  double tol_;
};

}  // namespace

LpResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, double tol) {
  const int n = static_cast<int>(c.size());
  const int m_ub = static_cast<int>(A_ub.rows());
  const int m_eq = static_cast<int>(A_eq.rows());
  if ((m_ub > 0 && A_ub.cols() != n) || (m_eq > 0 && A_eq.cols() != n) || b_ub.size() != m_ub ||
      b_eq.size() != m_eq) {
    throw DimensionError("linprog: inconsistent problem dimensions");
  }
  const int m = m_ub + m_eq;

  // Columns: x+ (n), x- (n), slacks (m_ub), artificials (m).
  const int n_struct = 2 * n + m_ub;
  const int n_cols = n_struct + m;
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m + 1, n_cols + 1);
  std::vector<int> basis(m);

  for (int i = 0; i < m; ++i) {
    Eigen::RowVectorXd row = i < m_ub ? A_ub.row(i) : A_eq.row(i - m_ub);
    double rhs = i < m_ub ? b_ub(i) : b_eq(i - m_ub);
    double scale = row.size() > 0 ? row.cwiseAbs().maxCoeff() : 0.0;
    if (scale < 1e-300) scale = 1.0;
    row /= scale;
    rhs /= scale;
    double slack = i < m_ub ? 1.0 / scale : 0.0;
    const double sign = rhs < 0.0 ? -1.0 : 1.0;
    t.block(i, 0, 1, n) = sign * row;
    t.block(i, n, 1, n) = -sign * row;
    if (i < m_ub) t(i, 2 * n + i) = sign * slack;
    t(i, n_struct + i) = 1.0;
    t(i, n_cols) = sign * rhs;
    basis[i] = n_struct + i;
  }

  Tableau tab(std::move(t), std::move(basis), tol);
  LpResult result;
  const int max_iter = 50 * (n_cols + m + 10);

  // Phase one: minimize the sum of artificials.
  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n_cols);
  phase1.tail(m).setOnes();
  tab.set_objective(phase1);
  LpStatus st = tab.run(n_cols, result.iterations, max_iter);
  if (st == LpStatus::IterationLimit) {
    result.status = st;
    return result;
  }
  if (-tab.objective_row_rhs() > std::sqrt(tol)) {
    result.status = LpStatus::Infeasible;
    return result;
  }

  // Drive remaining artificials out of the basis; drop redundant rows.
  for (int r = tab.rows() - 1; r >= 0; --r) {
    if (tab.basis()[r] < n_struct) continue;
    int col = -1;
    double best = tol;
    for (int j = 0; j < n_struct; ++j) {
      if (std::abs(tab.entry(r, j)) > best) {
        best = std::abs(tab.entry(r, j));
        col = j;
      }
    }
    if (col >= 0) {
      tab.pivot(r, col);
    } else {
      tab.drop_row(r);
    }
  }

  // Phase two on structural columns only.
  Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n_cols);
  phase2.head(n) = c;
  phase2.segment(n, n) = -c;
  tab.set_objective(phase2);
  st = tab.run(n_struct, result.iterations, max_iter);
  result.status = st;
  if (st != LpStatus::Optimal) return result;

  Eigen::VectorXd z = Eigen::VectorXd::Zero(n_cols);
  for (int r = 0; r < tab.rows(); ++r) z(tab.basis()[r]) = tab.rhs(r);
  result.x = z.head(n) - z.segment(n, n);
  result.objective = c.dot(result.x);
  return result;
}

LpResult linprog(const Eigen::VectorXd& c, const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub,
                 double tol) {
  return linprog(c, A_ub, b_ub, Eigen::MatrixXd(0, c.size()), Eigen::VectorXd(0), tol);
}

}  // namespace rcbf::lp
