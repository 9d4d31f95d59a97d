#include "rcbf/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <fmt/format.h>

#include "rcbf/errors.hpp"
#include "rcbf/linprog.hpp"

namespace rcbf::qp {

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal:
      return "optimal";
    case QpStatus::Infeasible:
      return "infeasible";
    case QpStatus::Unbounded:
      return "unbounded";
    case QpStatus::IterationLimit:
      return "iteration_limit";
  }
  return "?";
}

double KktResiduals::max() const { return std::max({stationarity, primal, complementarity, dual}); }

namespace {

Eigen::MatrixXd rows_or_empty(const Eigen::MatrixXd& A, Eigen::Index n) {
  return A.rows() == 0 ? Eigen::MatrixXd(0, n) : A;
}

bool is_feasible(const Eigen::MatrixXd& A_ub, const Eigen::VectorXd& b_ub, const Eigen::MatrixXd& A_eq,
                 const Eigen::VectorXd& b_eq, const Eigen::VectorXd& x, double tol) {
  if (A_ub.rows() > 0 && ((A_ub * x - b_ub).array() > tol).any()) return false;
  if (A_eq.rows() > 0 && ((A_eq * x - b_eq).array().abs() > tol).any()) return false;
  return true;
}

}  // namespace

void QpProblem::validate() const {
  const Eigen::Index n = q.size();
  if (n == 0) throw DimensionError("QP: empty decision vector");
  if (P.rows() != n || P.cols() != n) throw DimensionError(fmt::format("QP: P is {}x{}, expected {}x{}", P.rows(), P.cols(), n, n));
  if (A_ub.rows() != b_ub.size() || (A_ub.rows() > 0 && A_ub.cols() != n)) {
    throw DimensionError("QP: inequality block has inconsistent shape");
  }
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n)) {
    throw DimensionError("QP: equality block has inconsistent shape");
  }
  const double scale = std::max(1.0, P.cwiseAbs().maxCoeff());
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) throw ParameterError("QP: P is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10 * scale) throw ParameterError("QP: P is not positive semidefinite");
}

KktResiduals kkt_residuals(const QpProblem& pr, const Eigen::VectorXd& x, const Eigen::VectorXd& lambda_ub,
                           const Eigen::VectorXd& lambda_eq) {
  const Eigen::Index n = x.size();
  const Eigen::MatrixXd A_ub = rows_or_empty(pr.A_ub, n);
  const Eigen::MatrixXd A_eq = rows_or_empty(pr.A_eq, n);
  KktResiduals r;
  Eigen::VectorXd grad = pr.P * x + pr.q;
  if (A_ub.rows() > 0) grad += A_ub.transpose() * lambda_ub;
  if (A_eq.rows() > 0) grad += A_eq.transpose() * lambda_eq;
  r.stationarity = grad.cwiseAbs().maxCoeff();
  if (A_ub.rows() > 0) {
    const Eigen::VectorXd slack = pr.b_ub - A_ub * x;
    r.primal = std::max(0.0, -slack.minCoeff());
    r.complementarity = (lambda_ub.array() * slack.array()).abs().maxCoeff();
    r.dual = std::max(0.0, -lambda_ub.minCoeff());
  }
  if (A_eq.rows() > 0) r.primal = std::max(r.primal, (A_eq * x - pr.b_eq).cwiseAbs().maxCoeff());
  return r;
}

QpResult solve(const QpProblem& problem, const QpOptions& options) {
  problem.validate();
  const Eigen::Index n = problem.dimension();
  const Eigen::MatrixXd A_ub = rows_or_empty(problem.A_ub, n);
  const Eigen::MatrixXd A_eq = rows_or_empty(problem.A_eq, n);
  const Eigen::Index m_ub = A_ub.rows();
  const Eigen::Index m_eq = A_eq.rows();
  const double tol = options.tol;

  QpResult out;
  out.lambda_ub = Eigen::VectorXd::Zero(m_ub);
  out.lambda_eq = Eigen::VectorXd::Zero(m_eq);

  Eigen::VectorXd x;
  if (options.x0 && options.x0->size() == n &&
      is_feasible(A_ub, problem.b_ub, A_eq, problem.b_eq, *options.x0, 1e-9)) {
    x = *options.x0;
  } else {
    const auto lp = lp::linprog(Eigen::VectorXd::Zero(n), A_ub, problem.b_ub, A_eq, problem.b_eq);
    if (lp.status != lp::LpStatus::Optimal) {
      out.status = QpStatus::Infeasible;
      out.x = Eigen::VectorXd::Zero(n);
      return out;
    }
    x = lp.x;
  }

  std::vector<Eigen::Index> working;
  std::vector<char> in_working(static_cast<std::size_t>(m_ub), 0);
  // Start with the inequalities that are already tight.
  for (Eigen::Index i = 0; i < m_ub; ++i) {
    if (std::abs(A_ub.row(i).dot(x) - problem.b_ub(i)) <= 1e-12 * (1.0 + std::abs(problem.b_ub(i)))) {
      Eigen::MatrixXd trial(m_eq + static_cast<Eigen::Index>(working.size()) + 1, n);
      trial.topRows(m_eq) = A_eq;
      for (std::size_t k = 0; k < working.size(); ++k) trial.row(m_eq + k) = A_ub.row(working[k]);
      trial.bottomRows(1) = A_ub.row(i);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(trial);
      lu.setThreshold(1e-10);
      if (lu.rank() == trial.rows()) {
        working.push_back(i);
        in_working[i] = 1;
      }
    }
  }

  auto status = QpStatus::IterationLimit;
  Eigen::VectorXd mu;
  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    const Eigen::VectorXd g = problem.P * x + problem.q;
    const Eigen::Index k = m_eq + static_cast<Eigen::Index>(working.size());
    Eigen::MatrixXd A_w(k, n);
    A_w.topRows(m_eq) = A_eq;
    for (std::size_t j = 0; j < working.size(); ++j) A_w.row(m_eq + j) = A_ub.row(working[j]);

    Eigen::MatrixXd Z;
    if (k == 0) {
      Z = Eigen::MatrixXd::Identity(n, n);
    } else {
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(A_w, Eigen::ComputeFullV);
      const auto& s = svd.singularValues();
      const double cut = 1e-10 * std::max(1.0, s.size() > 0 ? s(0) : 0.0);
      Eigen::Index rank = 0;
      while (rank < s.size() && s(rank) > cut) ++rank;
      Z = svd.matrixV().rightCols(n - rank);
    }

    Eigen::VectorXd p = Eigen::VectorXd::Zero(n);
    bool ray = false;
    if (Z.cols() > 0) {
      const Eigen::MatrixXd H = Z.transpose() * problem.P * Z;
      const Eigen::VectorXd gr = Z.transpose() * g;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (H + H.transpose()));
      const auto& ev = eig.eigenvalues();
      const auto& V = eig.eigenvectors();
      const double curv_cut = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
      const double slope_cut = tol * (1.0 + g.cwiseAbs().maxCoeff());
      double best_slope = 0.0;
      Eigen::VectorXd dr;
      Eigen::VectorXd step_r = Eigen::VectorXd::Zero(Z.cols());
      for (Eigen::Index j = 0; j < ev.size(); ++j) {
        const double sj = V.col(j).dot(gr);
        if (ev(j) <= curv_cut) {
          if (std::abs(sj) > slope_cut && std::abs(sj) > best_slope) {
            best_slope = std::abs(sj);
            dr = (sj > 0.0 ? -1.0 : 1.0) * V.col(j);
          }
        } else {
          step_r -= V.col(j) * (sj / ev(j));
        }
      }
      if (best_slope > 0.0) {
        ray = true;
        p = Z * dr;
      } else {
        p = Z * step_r;
      }
    }

    if (!ray && p.norm() <= 1e-12 * (1.0 + x.norm())) {
      if (k == 0) {
        status = QpStatus::Optimal;
        mu = Eigen::VectorXd();
        break;
      }
      mu = A_w.transpose().completeOrthogonalDecomposition().solve(-g);
      double most_negative = -tol * std::max(1.0, g.cwiseAbs().maxCoeff());
      Eigen::Index drop = -1;
      for (std::size_t j = 0; j < working.size(); ++j) {
        if (mu(m_eq + j) < most_negative) {
          most_negative = mu(m_eq + j);
          drop = static_cast<Eigen::Index>(j);
        }
      }
      if (drop < 0) {
        status = QpStatus::Optimal;
        break;
      }
      in_working[working[drop]] = 0;
      working.erase(working.begin() + drop);
      continue;
    }

    double alpha = ray ? std::numeric_limits<double>::infinity() : 1.0;
    Eigen::Index blocking = -1;
    for (Eigen::Index i = 0; i < m_ub; ++i) {
      if (in_working[i]) continue;
      const double ap = A_ub.row(i).dot(p);
      if (ap <= 1e-14 * (1.0 + p.norm())) continue;
      const double room = std::max(0.0, problem.b_ub(i) - A_ub.row(i).dot(x));
      const double step = room / ap;
      if (step < alpha) {
        alpha = step;
        blocking = i;
      }
    }
    if (ray && blocking < 0) {
      status = QpStatus::Unbounded;
      break;
    }
    x += alpha * p;
    if (blocking >= 0) {
      working.push_back(blocking);
      in_working[blocking] = 1;
    }
  }

  out.status = status;
  out.iterations = iter;
  out.x = x;
  if (mu.size() > 0) {
    out.lambda_eq = mu.head(m_eq);
    for (std::size_t j = 0; j < working.size(); ++j) out.lambda_ub(working[j]) = mu(m_eq + j);
  }
  out.objective = 0.5 * x.dot(problem.P * x) + problem.q.dot(x);
  if (status == QpStatus::Unbounded) out.objective = -std::numeric_limits<double>::infinity();
  out.kkt = kkt_residuals(problem, x, out.lambda_ub, out.lambda_eq);
  return out;
}

}  // namespace rcbf::qp
