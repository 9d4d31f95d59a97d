#include "rcbf/verify.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "rcbf/errors.hpp"
#include "rcbf/parallel.hpp"

namespace rcbf {

namespace {

constexpr double kCertTol = 1e-6;

double ipow(double base, std::size_t e) {
  double r = 1.0;
  for (std::size_t i = 0; i < e; ++i) r *= base;
  return r;
}

}  // namespace

void check_tree_budget(std::size_t branching, std::size_t T, std::size_t budget) {
  // T |W|^T without overflow: bail out as soon as the running product passes the budget.
  double leaves = 1.0;
  for (std::size_t t = 0; t < T; ++t) leaves *= static_cast<double>(branching);
  const double work = static_cast<double>(T) * leaves;
  if (work > static_cast<double>(budget)) {
    throw BudgetError(fmt::format("tree of depth {} with branching {} needs T|W|^T = {:g} > budget {}", T, branching,
                                  work, budget));
  }
}

double ClosedLoopTree::nested_at(std::size_t t) const {
  if (t >= levels.size()) throw ParameterError(fmt::format("nested_at: t = {} beyond horizon {}", t, horizon));
  std::vector<double> values;
  values.reserve(levels[t].size());
  for (const auto& node : levels[t]) values.push_back(node.h);
  return nested_risk(ScenarioTree(t, edge_pmf, std::move(values)), risk);
}

ClosedLoopTree enumerate_policy_tree(const StochasticSystem& system, const BarrierSpec& barrier, const RiskSpec& risk,
                                     const TreePolicy& policy, const Eigen::VectorXd& x0, std::size_t T,
                                     unsigned jobs, std::size_t budget) {
  risk.validate();
  const std::size_t k = system.disturbance().size();
  check_tree_budget(k, T, budget);
  if (x0.size() != system.state_dim()) throw DimensionError("enumerate: x0 has the wrong size");

  ClosedLoopTree tree;
  tree.horizon = T;
  tree.edge_pmf = system.disturbance().pmf();
  tree.risk = risk;
  tree.levels.resize(T + 1);
  tree.uncertified_by_depth.assign(T, 0);
  tree.levels[0].push_back(TreeNode{x0, {}, barrier.evaluate(x0), FilterStatus::Optimal});

  for (std::size_t t = 0; t < T; ++t) {
    auto& parents = tree.levels[t];
    auto& children = tree.levels[t + 1];
    children.resize(parents.size() * k);
    // Each parent writes only its own slot and its own k children, so the
    // result does not depend on the thread schedule.
    parallel_for(parents.size(), jobs, [&](std::size_t i) {
      auto& node = parents[i];
      auto [u, status] = policy(node.x, t);
      node.u = std::move(u);
      node.status = status;
      const auto succ = system.successor_set(node.x, node.u);
      for (std::size_t j = 0; j < k; ++j) {
        auto& child = children[i * k + j];
        child.x = succ[j].state;
        child.h = barrier.evaluate(child.x);
      }
    });
    tree.solves += parents.size();
    for (const auto& node : parents) {
      if (node.status == FilterStatus::RelaxedInfeasible) ++tree.relaxed_nodes;
      if (node.status == FilterStatus::Failed) ++tree.failed_nodes;
      if (node.status == FilterStatus::RelaxedInfeasible || node.status == FilterStatus::Failed) {
        ++tree.uncertified_by_depth[t];
      }
    }
  }
  return tree;
}

ClosedLoopTree enumerate_closed_loop_tree(const FilterProblem& problem, const Eigen::VectorXd& x0, std::size_t T,
                                          unsigned jobs, std::size_t budget) {
  problem.validate();
  check_tree_budget(problem.system->disturbance().size(), T, budget);
  TreePolicy policy = [&problem](const Eigen::VectorXd& x, std::size_t) {
    auto sol = solve(problem, x);
    return std::make_pair(std::move(sol.u_star), sol.status);
  };
  return enumerate_policy_tree(*problem.system, problem.barrier, problem.risk, policy, x0, T, jobs, budget);
}

ClosedLoopTree enumerate_closed_loop_tree(const FilterProblem& problem, const NominalController& nominal,
                                          const Eigen::VectorXd& x0, std::size_t T, unsigned jobs,
                                          std::size_t budget) {
  problem.validate();
  if (nominal.control_dim() != problem.system->control_dim()) {
    throw DimensionError("enumerate: nominal controller has the wrong control dimension");
  }
  check_tree_budget(problem.system->disturbance().size(), T, budget);
  TreePolicy policy = [&problem, &nominal](const Eigen::VectorXd& x, std::size_t t) {
    FilterProblem local = problem;
    local.u_des = nominal(x, t);
    auto sol = solve(local, x);
    return std::make_pair(std::move(sol.u_star), sol.status);
  };
  return enumerate_policy_tree(*problem.system, problem.barrier, problem.risk, policy, x0, T, jobs, budget);
}

const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Pass:
      return "pass";
    case Verdict::Fail:
      return "fail";
    case Verdict::Inconclusive:
      return "inconclusive";
  }
  return "?";
}

Verdict TreeCertificate::verdict() const {
  for (bool ok : pass) {
    if (!ok) return relaxed_nodes > 0 ? Verdict::Inconclusive : Verdict::Fail;
  }
  if (relaxed_nodes > 0) return Verdict::Inconclusive;
  if (mode == DecayMode::Reach && !crossing) {
    // The horizon stops before ceil(t*): entry cannot be confirmed either way.
    if (static_cast<double>(horizon) < std::ceil(reach_bound)) return Verdict::Inconclusive;
    return Verdict::Fail;
  }
  return Verdict::Pass;
}

std::string TreeCertificate::table() const {
  std::string out = fmt::format("{:>4}  {:>14}  {:>14}  {:>14}  {}\n", "t", "nested_risk", "bound", "margin", "ok");
  for (std::size_t t = 0; t < nested.size(); ++t) {
    out += fmt::format("{:>4}  {:>14.6f}  {:>14.6f}  {:>14.3e}  {}\n", t, nested[t], bound[t], nested[t] - bound[t],
                       pass[t] ? "yes" : "NO");
  }
  if (mode == DecayMode::Reach) {
    out += fmt::format("t* = {:.4f}, first t with nested risk >= 0: {}\n", reach_bound,
                       crossing ? fmt::format("{}", *crossing) : std::string("none"));
  }
  if (relaxed_nodes > 0) out += fmt::format("relaxed nodes: {}\n", relaxed_nodes);
  if (post_entry_relaxed > 0) out += fmt::format("relaxed nodes after entry (not counted): {}\n", post_entry_relaxed);
  if (!note.empty()) out += note + "\n";
  out += fmt::format("verdict: {}\n", to_string(verdict()));
  return out;
}

TreeCertificate check_safety_decay(const ClosedLoopTree& tree, double alpha, double h0) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError(fmt::format("alpha = {} is outside (0, 1)", alpha));
  TreeCertificate cert;
  cert.mode = DecayMode::Safety;
  cert.horizon = tree.horizon;
  cert.h0 = h0;
  cert.relaxed_nodes = tree.relaxed_nodes + tree.failed_nodes;
  for (std::size_t t = 0; t <= tree.horizon; ++t) {
    const double v = tree.nested_at(t);
    const double b = ipow(alpha, t) * h0;
    cert.nested.push_back(v);
    cert.bound.push_back(b);
    cert.pass.push_back(v >= b - kCertTol);
  }
  for (std::size_t t = 0; t < cert.pass.size(); ++t) {
    if (!cert.pass[t]) {
      cert.note = fmt::format("violation at t = {}: gap {:.3e}", t, cert.nested[t] - cert.bound[t]);
      break;
    }
  }
  return cert;
}

TreeCertificate check_reach_bound(const ClosedLoopTree& tree, double gamma, double eps, double h0) {
  TreeCertificate cert;
  cert.mode = DecayMode::Reach;
  cert.reach_bound = reach_time_bound(eps, gamma, h0);
  cert.horizon = tree.horizon;
  cert.h0 = h0;
  const auto deadline = static_cast<std::size_t>(std::ceil(cert.reach_bound));
  for (std::size_t t = 0; t <= tree.horizon; ++t) {
    const double v = tree.nested_at(t);
    const double b = ipow(gamma, t) * (h0 - eps) + eps;
    cert.nested.push_back(v);
    cert.bound.push_back(b);
    cert.pass.push_back(v >= b - kCertTol);
    if (!cert.crossing && v >= 0.0 && t <= deadline) cert.crossing = t;
  }
  for (std::size_t t = 0; t < cert.pass.size(); ++t) {
    if (!cert.pass[t]) {
      cert.note = fmt::format("violation at t = {}: gap {:.3e}", t, cert.nested[t] - cert.bound[t]);
      break;
    }
  }
  for (std::size_t d = 0; d < tree.uncertified_by_depth.size(); ++d) {
    if (cert.crossing && d >= *cert.crossing) {
      cert.post_entry_relaxed += tree.uncertified_by_depth[d];
    } else {
      cert.relaxed_nodes += tree.uncertified_by_depth[d];
    }
  }
  if (!cert.crossing && tree.horizon < deadline) {
    cert.note += fmt::format("{}horizon {} ends before ceil(t*) = {}", cert.note.empty() ? "" : "; ", tree.horizon,
                             deadline);
  }
  return cert;
}

GridResult brute_force_filter(const FilterProblem& problem, const Eigen::VectorXd& x, std::size_t grid_n) {
  problem.validate();
  const Eigen::Index m = problem.system->control_dim();
  if (m > 2) throw UnsupportedError(fmt::format("brute_force_filter: control dimension {} > 2", m));
  if (grid_n < 2 || grid_n > 2001) throw ParameterError(fmt::format("grid_n = {} is outside [2, 2001]", grid_n));

  auto axis = [&](Eigen::Index d, std::size_t i) {
    const double s = static_cast<double>(i) / static_cast<double>(grid_n - 1);
    return i + 1 == grid_n ? problem.u_hi(d) : problem.u_lo(d) + s * (problem.u_hi(d) - problem.u_lo(d));
  };

  GridResult best;
  best.objective = std::numeric_limits<double>::infinity();
  const std::size_t total = m == 1 ? grid_n : grid_n * grid_n;
  Eigen::VectorXd u(m);
  for (std::size_t idx = 0; idx < total; ++idx) {
    u(0) = axis(0, idx % grid_n);
    if (m == 2) u(1) = axis(1, idx / grid_n);
    ++best.evaluated;
    const double obj = (u - problem.u_des).squaredNorm();
    if (obj >= best.objective) continue;
    if (certify(problem, x, u) >= 0.0) {
      best.feasible = true;
      best.objective = obj;
      best.u_best = u;
    }
  }
  if (!best.feasible) best.objective = std::numeric_limits<double>::quiet_NaN();
  return best;
}

}  // namespace rcbf
