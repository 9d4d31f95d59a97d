#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcbf/barrier.hpp"
#include "rcbf/filter.hpp"
#include "rcbf/nominal.hpp"
#include "rcbf/risk.hpp"

namespace rcbf {

inline constexpr std::size_t kTreeBudget = 1'000'000;

struct TreeNode {
  Eigen::VectorXd x;
  Eigen::VectorXd u;  // empty at the leaves
  double h = 0.0;
  FilterStatus status = FilterStatus::Optimal;
};

/// Closed-loop scenario tree. Level t holds |W|^t nodes in lexicographic
/// disturbance-path order; node k at level t has children k|W| + j.
struct ClosedLoopTree {
  std::size_t horizon = 0;
  std::vector<double> edge_pmf;
  RiskSpec risk;
  std::vector<std::vector<TreeNode>> levels;
  std::size_t solves = 0;
  std::size_t relaxed_nodes = 0;
  std::size_t failed_nodes = 0;
  std::vector<std::size_t> uncertified_by_depth;  // relaxed + failed solves per level 0..T-1

  bool inconclusive() const { return relaxed_nodes + failed_nodes > 0; }
  std::size_t leaf_count() const { return levels.empty() ? 0 : levels.back().size(); }
  /// Nested risk rho_{0,t} of h(x^t) over the first t levels.
  double nested_at(std::size_t t) const;
};

/// Control law used at every internal node at depth t.
using TreePolicy =
    std::function<std::pair<Eigen::VectorXd, FilterStatus>(const Eigen::VectorXd& x, std::size_t t)>;

/// Throws BudgetError when T |W|^T exceeds `budget`.
void check_tree_budget(std::size_t branching, std::size_t T, std::size_t budget = kTreeBudget);

/// Expands the tree under an arbitrary policy (used for unfiltered baselines).
ClosedLoopTree enumerate_policy_tree(const StochasticSystem& system, const BarrierSpec& barrier, const RiskSpec& risk,
                                     const TreePolicy& policy, const Eigen::VectorXd& x0, std::size_t T,
                                     unsigned jobs = 0, std::size_t budget = kTreeBudget);

/// One filter solve per internal node; leaves carry h(x^T). Uses the
/// fixed problem.u_des as the nominal control.
ClosedLoopTree enumerate_closed_loop_tree(const FilterProblem& problem, const Eigen::VectorXd& x0, std::size_t T,
                                          unsigned jobs = 0, std::size_t budget = kTreeBudget);

/// As above with u_des = nominal(x, t) at each node.
ClosedLoopTree enumerate_closed_loop_tree(const FilterProblem& problem, const NominalController& nominal,
                                          const Eigen::VectorXd& x0, std::size_t T, unsigned jobs = 0,
                                          std::size_t budget = kTreeBudget);

enum class Verdict { Pass, Fail, Inconclusive };

const char* to_string(Verdict v);

struct TreeCertificate {
  DecayMode mode = DecayMode::Safety;
  std::size_t horizon = 0;
  double h0 = 0.0;
  std::vector<double> nested;  // rho_{0,t}, t = 0..T
  std::vector<double> bound;   // required lower bound at t
  std::vector<bool> pass;
  double reach_bound = 0.0;    // t* (reach mode)
  std::optional<std::size_t> crossing;  // first t with nested >= 0 (reach mode)
  std::size_t relaxed_nodes = 0;        // uncertified solves that bear on the verdict
  std::size_t post_entry_relaxed = 0;   // reach mode: uncertified solves at depth >= crossing
  std::string note;

  Verdict verdict() const;
  /// Fixed-width table, one row per t.
  std::string table() const;
};

/// rho_{0,t} >= alpha^t h0 - 1e-6 for every t <= T.
TreeCertificate check_safety_decay(const ClosedLoopTree& tree, double alpha, double h0);

/// rho_{0,t} >= gamma^t (h0 - eps) + eps - 1e-6 for every t <= T, and
/// rho_{0,t} >= 0 for some t <= ceil(t*). Requires h0 < 0.
///
/// A relaxed solve at depth d only reaches nested values at t > d, so once
/// the crossing at t_c is established relaxed nodes at depth >= t_c are
/// counted in post_entry_relaxed and do not make the verdict inconclusive.
TreeCertificate check_reach_bound(const ClosedLoopTree& tree, double gamma, double eps, double h0);

struct GridResult {
  bool feasible = false;
  Eigen::VectorXd u_best;
  double objective = 0.0;
  std::size_t evaluated = 0;
};

/// Exhaustive search over a grid_n^m lattice on [u_lo, u_hi] for the point
/// with least |u - u_des|^2 whose exact risk residual is >= 0.
GridResult brute_force_filter(const FilterProblem& problem, const Eigen::VectorXd& x, std::size_t grid_n);

}  // namespace rcbf
