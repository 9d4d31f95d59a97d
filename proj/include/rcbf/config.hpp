#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "rcbf/risk.hpp"
#include "rcbf/sim.hpp"

namespace rcbf {

inline constexpr int kConfigSchema = 1;

/// A parsed experiment file.
///
/// Sections: system, barrier, risk, filter, nominal, sim, and the optional
/// sweep and verify. Unknown keys anywhere are rejected.
struct ExperimentConfig {
  SimConfig sim;
  bool log_solve_time = false;  // write measured solve_us into trajectories.csv
  std::vector<RiskSpec> sweep;  // sweep.risks; empty when the section is absent
  std::size_t verify_horizon = 3;
  Eigen::VectorXd verify_x0;    // defaults to sim.x0.fixed
  std::string resolved;         // the input with every default filled in, as JSON
};

/// Throws SchemaError for structural problems and the usual library errors
/// (ParameterError, DimensionError, ...) for values the components reject.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// "E", "CVaR:0.1", "EVaR:0.25" (kind names are case-insensitive).
RiskSpec parse_risk_label(const std::string& text);

}  // namespace rcbf
