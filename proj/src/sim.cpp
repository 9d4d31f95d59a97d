#include "rcbf/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "rcbf/errors.hpp"
#include "rcbf/parallel.hpp"

namespace rcbf {

namespace {

constexpr std::uint64_t kDisturbanceStream = 0x64697374ULL;  // "dist"
constexpr std::uint64_t kInitialStream = 0x78300000ULL;

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = splitmix(seed);
  z = splitmix(z ^ stream);
  z = splitmix(z ^ a);
  z = splitmix(z ^ b);
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

std::size_t sample_disturbance_index(const DisturbanceModel& model, std::uint64_t run, std::uint64_t t,
                                     std::uint64_t seed) {
  const double r = counter_uniform(seed, kDisturbanceStream, run, t);
  const auto& pmf = model.pmf();
  double cum = 0.0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    cum += pmf[i];
    if (r < cum) return i;
  }
  // Rounding left r above the last partial sum: take the last outcome with mass.
  for (std::size_t i = pmf.size(); i-- > 0;) {
    if (pmf[i] > 0.0) return i;
  }
  return pmf.size() - 1;
}

Eigen::VectorXd sample_disturbance(const DisturbanceModel& model, std::uint64_t run, std::uint64_t t,
                                   std::uint64_t seed) {
  return model.support()[sample_disturbance_index(model, run, t, seed)];
}

void SimConfig::validate() const {
  problem.validate();
  if (runs < 1) throw ParameterError("sim: runs must be >= 1");
  if (horizon < 1) throw ParameterError("sim: horizon must be >= 1");
  const Eigen::Index n = problem.system->state_dim();
  if (nominal.control_dim() != problem.system->control_dim()) {
    throw DimensionError(fmt::format("sim: nominal controller has {} inputs, system {}", nominal.control_dim(),
                                     problem.system->control_dim()));
  }
  if (x0.kind == InitialStatePolicy::Kind::Fixed) {
    if (x0.fixed.size() != n) throw DimensionError(fmt::format("sim: x0 must have {} entries", n));
    if (!x0.fixed.allFinite()) throw ParameterError("sim: x0 is not finite");
  } else {
    if (x0.box_lo.size() != n || x0.box_hi.size() != n) {
      throw DimensionError(fmt::format("sim: x0 box bounds must have {} entries", n));
    }
    if (!x0.box_lo.allFinite() || !x0.box_hi.allFinite() || (x0.box_lo.array() > x0.box_hi.array()).any()) {
      throw ParameterError("sim: x0 box is empty or not finite");
    }
    if (x0.max_tries < 1) throw ParameterError("sim: x0 max_tries must be positive");
  }
  if (!(divergence_bound > 0.0)) throw ParameterError("sim: divergence_bound must be positive");
}

Eigen::VectorXd sample_initial_state(const SimConfig& config, std::uint64_t run) {
  const auto& p = config.x0;
  if (p.kind == InitialStatePolicy::Kind::Fixed) return p.fixed;
  const Eigen::Index n = p.box_lo.size();
  const bool need_safe = config.problem.decay.mode == DecayMode::Safety;
  Eigen::VectorXd x(n);
  for (int attempt = 0; attempt < p.max_tries; ++attempt) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double r = counter_uniform(config.seed, kInitialStream + static_cast<std::uint64_t>(i), run,
                                       static_cast<std::uint64_t>(attempt));
      x(i) = p.box_lo(i) + r * (p.box_hi(i) - p.box_lo(i));
    }
    if (!need_safe || config.problem.barrier.evaluate(x) >= 0.0) return x;
  }
  throw PreconditionError(fmt::format("sim: no safe initial state found in the box after {} draws", p.max_tries));
}

namespace {

RunLog simulate_run(const SimConfig& config, std::size_t run) {
  RunLog log;
  log.run = run;
  log.min_h = std::numeric_limits<double>::infinity();
  const auto& system = *config.problem.system;
  const bool reach = config.problem.decay.mode == DecayMode::Reach;
  FilterProblem local = config.problem;
  Eigen::VectorXd x = sample_initial_state(config, run);
  log.steps.reserve(config.horizon);

  for (std::size_t t = 0; t < config.horizon; ++t) {
    StepLog step;
    step.t = t;
    step.x = x;
    step.h = local.barrier.evaluate(x);
    if (!log.hitting_time && step.h >= 0.0) log.hitting_time = t;

    local.u_des = config.nominal(x, t);
    FilterSolution sol;
    try {
      const auto start = std::chrono::steady_clock::now();
      sol = solve(local, x);
      step.solve_us = std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start).count();
    } catch (const Error& e) {
      log.aborted = true;
      log.abort_reason = fmt::format("t = {}: {}", t, e.what());
      break;
    }
    step.u = sol.u_star;
    step.risk_residual = sol.risk_residual;
    step.status = sol.status;
    if (sol.status == FilterStatus::RelaxedInfeasible) ++log.relaxed_steps;

    const bool counts = !reach || log.hitting_time.has_value();
    if (counts) {
      log.min_h = std::min(log.min_h, step.h);
      if (step.h < 0.0) log.failed = true;
    }
    log.steps.push_back(step);

    if (sol.status == FilterStatus::Failed) {
      log.aborted = true;
      log.abort_reason = fmt::format("t = {}: solver failed ({})", t, sol.diagnostics.note);
      break;
    }
    const auto w = sample_disturbance(system.disturbance(), run, t, config.seed);
    x = system.step(x, sol.u_star, w);
    if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > config.divergence_bound) {
      log.diverged = true;
      break;
    }
  }
  return log;
}

}  // namespace

SimResult run_monte_carlo(const SimConfig& config) {
  config.validate();
  SimResult result;
  result.runs.resize(config.runs);
  parallel_for(config.runs, config.jobs, [&](std::size_t i) { result.runs[i] = simulate_run(config, i); });

  auto& s = result.stats;
  s.runs = config.runs;
  double total_us = 0.0;
  for (const auto& run : result.runs) {
    if (run.failed) ++s.failures;
    if (run.aborted) ++s.aborted_runs;
    if (run.diverged) ++s.diverged_runs;
    s.relaxed_steps += run.relaxed_steps;
    s.hitting_time.push_back(run.hitting_time);
    for (const auto& step : run.steps) {
      total_us += step.solve_us;
      s.max_solve_us = std::max(s.max_solve_us, step.solve_us);
      ++s.steps;
    }
  }
  s.failure_ratio = static_cast<double>(s.failures) / static_cast<double>(s.runs);
  s.mean_solve_us = s.steps > 0 ? total_us / static_cast<double>(s.steps) : 0.0;
  return result;
}

}  // namespace rcbf
