#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rcbf/risk.hpp"
#include "rcbf/sim.hpp"
#include "rcbf/verify.hpp"

namespace rcbf {

/// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

/// Header: run,t,x0..x{n-1},u0..u{m-1},h,risk_residual,status,solve_us.
/// solve_us is written as 0 unless `with_solve_time`, so the file is a pure
/// function of (config, seed).
std::string trajectories_csv(const SimResult& result, bool with_solve_time);

std::string stats_csv(const RunStats& stats);

struct SweepRow {
  RiskSpec risk;
  RunStats stats;
};

/// risk,beta,avg_time_s,failure_ratio (plus bookkeeping columns).
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// The machine-readable twin of certificate.txt.
std::string certificate_json(const TreeCertificate& cert);

/// Standalone gnuplot script over the CSVs in `out_dir`.
std::string plot_script(Eigen::Index state_dim, Eigen::Index control_dim, bool has_sweep);

}  // namespace rcbf
