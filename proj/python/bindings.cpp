#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rcbf/config.hpp"
#include "rcbf/errors.hpp"
#include "rcbf/filter.hpp"
#include "rcbf/risk.hpp"
#include "rcbf/sim.hpp"
#include "rcbf/verify.hpp"

namespace py = pybind11;
using namespace rcbf;

namespace {

RiskSpec make_risk(const std::string& kind, double beta) {
  RiskSpec r{parse_risk_kind(kind), beta};
  if (r.kind == RiskKind::Expectation) r.beta = 1.0;
  r.validate();
  return r;
}

double risk_of(std::vector<double> values, std::optional<std::vector<double>> pmf, const std::string& kind,
               double beta) {
  if (!pmf) pmf = std::vector<double>(values.size(), 1.0 / static_cast<double>(values.size()));
  return evaluate(ScalarRandomVariable(std::move(values), std::move(*pmf)), make_risk(kind, beta));
}

py::dict stats_dict(const RunStats& s) {
  py::dict d;
  d["runs"] = s.runs;
  d["failures"] = s.failures;
  d["failure_ratio"] = s.failure_ratio;
  d["steps"] = s.steps;
  d["mean_solve_us"] = s.mean_solve_us;
  d["max_solve_us"] = s.max_solve_us;
  d["relaxed_steps"] = s.relaxed_steps;
  d["diverged_runs"] = s.diverged_runs;
  d["aborted_runs"] = s.aborted_runs;
  d["hitting_time"] = s.hitting_time;
  return d;
}

// One config, loaded once; the Python-side handle for run/solve/verify.
class Experiment {
 public:
  explicit Experiment(const std::string& path) : cfg_(load_config(path)) {}

  std::string risk() const { return cfg_.sim.problem.risk.label(); }
  std::string resolved() const { return cfg_.resolved; }

  void set_risk(const std::string& kind, double beta) { cfg_.sim.problem.risk = make_risk(kind, beta); }

  py::dict run(std::optional<std::uint64_t> seed, unsigned jobs) const {
    SimConfig sim = cfg_.sim;
    if (seed) sim.seed = *seed;
    sim.jobs = jobs;
    SimResult res;
    {
      py::gil_scoped_release release;
      res = run_monte_carlo(sim);
    }
    py::dict out = stats_dict(res.stats);
    // Per-run minimum of h over the counted steps.
    std::vector<double> min_h;
    for (const auto& r : res.runs) min_h.push_back(r.min_h);
    out["min_h"] = min_h;
    return out;
  }

  py::dict solve(const Eigen::VectorXd& x, std::optional<Eigen::VectorXd> u_des) const {
    FilterProblem pr = cfg_.sim.problem;
    pr.u_des = u_des ? *u_des : cfg_.sim.nominal(x, 0);
    const auto sol = rcbf::solve(pr, x);
    py::dict d;
    d["u"] = sol.u_star;
    d["status"] = to_string(sol.status);
    d["risk_residual"] = sol.risk_residual;
    d["objective"] = sol.objective;
    d["path"] = sol.diagnostics.path;
    d["certify"] = certify(pr, x, sol.u_star);
    return d;
  }

  py::dict verify(std::optional<std::size_t> horizon, std::optional<Eigen::VectorXd> x0) const {
    const auto& pr = cfg_.sim.problem;
    const Eigen::VectorXd start = x0 ? *x0 : cfg_.verify_x0;
    if (start.size() == 0) throw PreconditionError("verify needs x0 (argument, verify.x0, or sim.x0.fixed)");
    const std::size_t T = horizon.value_or(cfg_.verify_horizon);
    const double h0 = pr.barrier.evaluate(start);
    TreeCertificate cert;
    {
      py::gil_scoped_release release;
      const auto tree = enumerate_closed_loop_tree(pr, cfg_.sim.nominal, start, T, cfg_.sim.jobs);
      cert = pr.decay.mode == DecayMode::Safety ? check_safety_decay(tree, pr.decay.alpha.constant(), h0)
                                                 : check_reach_bound(tree, pr.decay.gamma, pr.decay.eps, h0);
    }
    py::dict d;
    d["verdict"] = to_string(cert.verdict());
    d["nested"] = cert.nested;
    d["bound"] = cert.bound;
    d["crossing"] = cert.crossing;
    d["table"] = cert.table();
    return d;
  }

 private:
  ExperimentConfig cfg_;
};

}  // namespace

PYBIND11_MODULE(_rcbf, m) {
  m.doc() = "Risk control barrier function filters (C++ core)";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", base.ptr());
  py::register_exception<BudgetError>(m, "BudgetError", base.ptr());
  py::register_exception<UnsupportedError>(m, "UnsupportedError", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());

  m.def("risk", &risk_of, py::arg("values"), py::arg("pmf") = py::none(), py::arg("kind") = "E",
        py::arg("beta") = 1.0, "rho(values) under the pmf (uniform when omitted); larger is safer");
  m.def(
      "cvar_rockafellar",
      [](std::vector<double> v, std::vector<double> p, double beta) {
        return cvar_via_rockafellar(ScalarRandomVariable(std::move(v), std::move(p)), beta);
      },
      py::arg("values"), py::arg("pmf"), py::arg("beta"));
  m.def("reach_time_bound", &reach_time_bound, py::arg("eps"), py::arg("gamma"), py::arg("h0"));

  py::class_<Experiment>(m, "Experiment")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("risk", &Experiment::risk)
      .def_property_readonly("resolved_config", &Experiment::resolved)
      .def("set_risk", &Experiment::set_risk, py::arg("kind"), py::arg("beta") = 1.0)
      .def("run", &Experiment::run, py::arg("seed") = py::none(), py::arg("jobs") = 0u)
      .def("solve", &Experiment::solve, py::arg("x"), py::arg("u_des") = py::none())
      .def("verify", &Experiment::verify, py::arg("horizon") = py::none(), py::arg("x0") = py::none());
}
