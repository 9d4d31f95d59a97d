#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcbf/dynamics.hpp"
#include "rcbf/filter.hpp"
#include "rcbf/nominal.hpp"

namespace rcbf {

/// Uniform double in [0, 1) from a counter-based hash of the key words.
/// Pure function: no generator state is carried between calls.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a, std::uint64_t b);

/// Support index drawn by inverse CDF, keyed by (seed, run, t).
std::size_t sample_disturbance_index(const DisturbanceModel& model, std::uint64_t run, std::uint64_t t,
                                     std::uint64_t seed);

Eigen::VectorXd sample_disturbance(const DisturbanceModel& model, std::uint64_t run, std::uint64_t t,
                                   std::uint64_t seed);

struct InitialStatePolicy {
  enum class Kind { Fixed, UniformBox };
  Kind kind = Kind::Fixed;
  Eigen::VectorXd fixed;
  Eigen::VectorXd box_lo;
  Eigen::VectorXd box_hi;
  int max_tries = 100000;

  static InitialStatePolicy at(Eigen::VectorXd x0) { return {Kind::Fixed, std::move(x0), {}, {}, 100000}; }
  static InitialStatePolicy box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    return {Kind::UniformBox, {}, std::move(lo), std::move(hi), 100000};
  }
};

struct SimConfig {
  FilterProblem problem;  // u_des is replaced by the nominal output at every step
  NominalController nominal = NominalController::zero(1);
  InitialStatePolicy x0;
  std::size_t runs = 1;
  std::size_t horizon = 1;
  std::uint64_t seed = 0;
  unsigned jobs = 0;  // 0: hardware concurrency
  double divergence_bound = 1e6;  // a run stops once |x|_inf exceeds this

  void validate() const;
};

/// Initial state of one run. Box sampling rejects points outside {h >= 0}
/// in safety mode; in reach mode the box is used as is.
Eigen::VectorXd sample_initial_state(const SimConfig& config, std::uint64_t run);

struct StepLog {
  std::size_t t = 0;
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  double h = 0.0;
  double risk_residual = 0.0;
  FilterStatus status = FilterStatus::Optimal;
  double solve_us = 0.0;
};

struct RunLog {
  std::size_t run = 0;
  std::vector<StepLog> steps;
  double min_h = 0.0;                    // over the steps that count toward failure
  bool failed = false;
  std::optional<std::size_t> hitting_time;  // first t with h >= 0
  std::size_t relaxed_steps = 0;
  bool diverged = false;
  bool aborted = false;  // solver error or Failed status
  std::string abort_reason;
};

struct RunStats {
  std::size_t runs = 0;
  std::size_t failures = 0;
  double failure_ratio = 0.0;
  std::vector<std::optional<std::size_t>> hitting_time;
  std::size_t steps = 0;
  double mean_solve_us = 0.0;
  double max_solve_us = 0.0;
  std::size_t relaxed_steps = 0;
  std::size_t diverged_runs = 0;
  std::size_t aborted_runs = 0;
};

struct SimResult {
  RunStats stats;
  std::vector<RunLog> runs;
};

/// Runs execute in parallel; each run depends only on (config, run index),
/// and logs are returned in run order.
///
/// A run fails when some logged h(x^t) < 0. In reach mode only steps after
/// the first entry (h >= 0) count.
SimResult run_monte_carlo(const SimConfig& config);

}  // namespace rcbf
