// rcbf: run, sweep, verify, and bound from the command line.
//
// stdout carries the summary table only; everything else goes to stderr.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "rcbf/config.hpp"
#include "rcbf/errors.hpp"
#include "rcbf/io.hpp"
#include "rcbf/sim.hpp"
#include "rcbf/verify.hpp"

namespace fs = std::filesystem;
using namespace rcbf;

namespace {

enum Exit : int {
  kOk = 0,
  kHardFailure = 1,
  kRelaxed = 2,
  kVerifyFail = 3,
  kVerifyInconclusive = 4,
  kSchema = 64,
};

struct Common {
  std::string config;
  std::string out = "rcbf_out";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
  bool plot = false;
};

unsigned resolve_jobs(const Common& c) {
  if (c.jobs) return *c.jobs;
  if (const char* env = std::getenv("RCBF_JOBS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0') return static_cast<unsigned>(v);
    fmt::print(stderr, "warning: ignoring RCBF_JOBS='{}'\n", env);
  }
  return 0;
}

// Loads the config and applies the command-line overrides. Returns nullopt
// after printing the diagnostic when the file is rejected.
std::optional<ExperimentConfig> load(const Common& c) {
  try {
    auto cfg = load_config(c.config);
    nlohmann::json resolved = nlohmann::json::parse(cfg.resolved);
    if (c.seed) {
      cfg.sim.seed = *c.seed;
      resolved["sim"]["seed"] = *c.seed;
    }
    cfg.sim.jobs = resolve_jobs(c);
    cfg.resolved = resolved.dump(2) + "\n";
    return cfg;
  } catch (const SchemaError& e) {
    fmt::print(stderr, "{}: schema error: {}\n", c.config, e.what());
  } catch (const Error& e) {
    fmt::print(stderr, "{}: invalid config: {}\n", c.config, e.what());
  }
  return std::nullopt;
}

fs::path prepare_out(const Common& c) {
  fs::path dir(c.out);
  fs::create_directories(dir);
  return dir;
}

int exit_for(const RunStats& s) {
  if (s.aborted_runs > 0) return kHardFailure;
  if (s.relaxed_steps > 0) return kRelaxed;
  return kOk;
}

void print_stats_header() {
  fmt::print("{:<12} {:>6} {:>9} {:>14} {:>14} {:>14} {:>8}\n", "risk", "runs", "failures", "failure_ratio",
             "mean_solve_us", "relaxed_steps", "aborted");
}

void print_stats_row(const RiskSpec& risk, const RunStats& s) {
  fmt::print("{:<12} {:>6} {:>9} {:>14.4f} {:>14.2f} {:>14} {:>8}\n", risk.label(), s.runs, s.failures,
             s.failure_ratio, s.mean_solve_us, s.relaxed_steps, s.aborted_runs);
}

void report_aborts(const SimResult& r) {
  for (const auto& run : r.runs) {
    if (run.aborted) fmt::print(stderr, "run {} aborted: {}\n", run.run, run.abort_reason);
  }
}

int cmd_run(const Common& c) {
  auto cfg = load(c);
  if (!cfg) return kSchema;
  const auto dir = prepare_out(c);
  const auto result = run_monte_carlo(cfg->sim);
  report_aborts(result);
  write_atomic(dir / "trajectories.csv", trajectories_csv(result, cfg->log_solve_time));
  write_atomic(dir / "stats.csv", stats_csv(result.stats));
  write_atomic(dir / "resolved_config.json", cfg->resolved);
  if (c.plot) {
    const auto& sys = *cfg->sim.problem.system;
    write_atomic(dir / "plot.gp", plot_script(sys.state_dim(), sys.control_dim(), false));
  }
  print_stats_header();
  print_stats_row(cfg->sim.problem.risk, result.stats);
  fmt::print(stderr, "wrote {}\n", dir.string());
  return exit_for(result.stats);
}

int cmd_sweep(const Common& c, const std::vector<std::string>& labels) {
  auto cfg = load(c);
  if (!cfg) return kSchema;
  std::vector<RiskSpec> risks = cfg->sweep;
  if (!labels.empty()) {
    risks.clear();
    try {
      for (const auto& l : labels) risks.push_back(parse_risk_label(l));
    } catch (const Error& e) {
      fmt::print(stderr, "--risks: {}\n", e.what());
      return kSchema;
    }
  }
  if (risks.empty()) risks.push_back(cfg->sim.problem.risk);

  const auto dir = prepare_out(c);
  std::vector<SweepRow> rows;
  bool hard = false, relaxed = false;
  print_stats_header();
  for (const auto& risk : risks) {
    auto sim = cfg->sim;
    sim.problem.risk = risk;
    const auto result = run_monte_carlo(sim);
    report_aborts(result);
    rows.push_back({risk, result.stats});
    print_stats_row(risk, result.stats);
    hard = hard || exit_for(result.stats) == kHardFailure;
    relaxed = relaxed || exit_for(result.stats) == kRelaxed;
  }
  write_atomic(dir / "sweep.csv", sweep_csv(rows));
  write_atomic(dir / "resolved_config.json", cfg->resolved);
  if (c.plot) {
    const auto& sys = *cfg->sim.problem.system;
    write_atomic(dir / "plot.gp", plot_script(sys.state_dim(), sys.control_dim(), true));
  }
  fmt::print(stderr, "wrote {}\n", dir.string());
  return hard ? kHardFailure : relaxed ? kRelaxed : kOk;
}

int cmd_verify(const Common& c, std::optional<std::size_t> horizon) {
  auto cfg = load(c);
  if (!cfg) return kSchema;
  if (cfg->verify_x0.size() == 0) {
    fmt::print(stderr, "{}: verify needs a point x0 (sim.x0.fixed or verify.x0)\n", c.config);
    return kSchema;
  }
  const std::size_t T = horizon.value_or(cfg->verify_horizon);
  const auto& pr = cfg->sim.problem;
  const auto dir = prepare_out(c);
  const Eigen::VectorXd& x0 = cfg->verify_x0;
  const double h0 = pr.barrier.evaluate(x0);

  TreeCertificate cert;
  try {
    const auto tree = enumerate_closed_loop_tree(pr, cfg->sim.nominal, x0, T, cfg->sim.jobs);
    if (pr.decay.mode == DecayMode::Safety) {
      if (!pr.decay.alpha.is_constant()) {
        fmt::print(stderr, "verify: the decay certificate needs a constant alpha\n");
        return kHardFailure;
      }
      cert = check_safety_decay(tree, pr.decay.alpha.constant(), h0);
    } else {
      cert = check_reach_bound(tree, pr.decay.gamma, pr.decay.eps, h0);
    }
  } catch (const BudgetError& e) {
    const std::string msg = fmt::format("inconclusive: {}\n", e.what());
    write_atomic(dir / "certificate.txt", msg);
    fmt::print(stderr, "{}", msg);
    fmt::print("verdict: inconclusive\n");
    return kVerifyInconclusive;
  }

  std::string text = fmt::format("mode: {}\nrisk: {}\nhorizon: {}\nh0: {}\n",
                                 pr.decay.mode == DecayMode::Safety ? "safety" : "reach", pr.risk.label(), T, h0);
  if (!cert.note.empty()) text += fmt::format("note: {}\n", cert.note);
  text += cert.table();
  write_atomic(dir / "certificate.txt", text);
  write_atomic(dir / "certificate.json", certificate_json(cert));
  write_atomic(dir / "resolved_config.json", cfg->resolved);
  fmt::print("{}", cert.table());
  switch (cert.verdict()) {
    case Verdict::Pass:
      return kOk;
    case Verdict::Fail:
      return kVerifyFail;
    case Verdict::Inconclusive:
      return kVerifyInconclusive;
  }
  return kHardFailure;
}

int cmd_bound(double eps, double gamma, double h0) {
  const double t = reach_time_bound(eps, gamma, h0);
  fmt::print("t* = {:.6g}  (ceil {})\n", t, static_cast<long long>(std::ceil(t)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Risk control barrier function filters: simulation, sweeps, and tree certificates"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("config", common.config, "experiment config (JSON, schema 1)")->required();
    sub->add_option("--out", common.out, "output directory")->capture_default_str();
    sub->add_option("--seed", common.seed, "override sim.seed");
    sub->add_option("--jobs", common.jobs, "worker threads (0: all cores; default $RCBF_JOBS)");
    sub->add_flag("--emit-plot-script", common.plot, "also write plot.gp for gnuplot");
  };

  auto* run = app.add_subcommand("run", "Monte Carlo simulation of the filtered closed loop");
  add_common(run);

  std::vector<std::string> risks;
  auto* sweep = app.add_subcommand("sweep", "same scenario and seed under several risk measures");
  add_common(sweep);
  sweep->add_option("--risks", risks, "risk list, e.g. E CVaR:0.5 EVaR:0.1 (default: sweep.risks)");

  std::optional<std::size_t> horizon;
  auto* verify = app.add_subcommand("verify", "closed-loop scenario-tree certificate");
  add_common(verify);
  verify->add_option("--horizon", horizon, "tree depth (default: verify.horizon)");

  double eps = 0.0, gamma = 0.0, h0 = 0.0;
  auto* bound = app.add_subcommand("bound", "upper bound on the time to reach the set");
  bound->add_option("--eps", eps, "finite-time barrier constant eps")->required();
  bound->add_option("--gamma", gamma, "decay gamma in (0,1)")->required();
  bound->add_option("--h0", h0, "h(x0), negative outside the set")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kSchema;
  }

  try {
    if (*run) return cmd_run(common);
    if (*sweep) return cmd_sweep(common, risks);
    if (*verify) return cmd_verify(common, horizon);
    if (*bound) return cmd_bound(eps, gamma, h0);
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kHardFailure;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kHardFailure;
  }
  return kHardFailure;
}
