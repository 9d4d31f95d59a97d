#include "rcbf/io.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>
#include <system_error>

#include <fmt/format.h>

#include "json.hpp"
#include "rcbf/errors.hpp"

namespace rcbf {

namespace {

// Shortest round-trip form, so equal doubles always print the same bytes.
std::string num(double v) { return fmt::format("{}", v); }

double median_hitting_time(const RunStats& s) {
  std::vector<double> hits;
  for (const auto& h : s.hitting_time) {
    if (h) hits.push_back(static_cast<double>(*h));
  }
  if (hits.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(hits.begin(), hits.end());
  const std::size_t k = hits.size() / 2;
  return hits.size() % 2 == 1 ? hits[k] : 0.5 * (hits[k - 1] + hits[k]);
}

}  // namespace

void write_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(fmt::format("cannot write '{}'", tmp.string()));
    f << contents;
    f.flush();
    if (!f) throw Error(fmt::format("write to '{}' failed", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(fmt::format("cannot move '{}' into place", path.string()));
  }
}

std::string trajectories_csv(const SimResult& result, bool with_solve_time) {
  Eigen::Index n = 0, m = 0;
  for (const auto& run : result.runs) {
    if (!run.steps.empty()) {
      n = run.steps.front().x.size();
      m = run.steps.front().u.size();
      break;
    }
  }
  std::string out = "run,t";
  for (Eigen::Index i = 0; i < n; ++i) out += fmt::format(",x{}", i);
  for (Eigen::Index i = 0; i < m; ++i) out += fmt::format(",u{}", i);
  out += ",h,risk_residual,status,solve_us\n";
  auto it = std::back_inserter(out);
  for (const auto& run : result.runs) {
    for (const auto& s : run.steps) {
      fmt::format_to(it, "{},{}", run.run, s.t);
      for (Eigen::Index i = 0; i < n; ++i) fmt::format_to(it, ",{}", num(s.x(i)));
      for (Eigen::Index i = 0; i < m; ++i) fmt::format_to(it, ",{}", num(s.u(i)));
      fmt::format_to(it, ",{},{},{},{}\n", num(s.h), num(s.risk_residual), to_string(s.status),
                     with_solve_time ? num(s.solve_us) : std::string("0"));
    }
  }
  return out;
}

std::string stats_csv(const RunStats& s) {
  std::string out =
      "runs,failures,failure_ratio,steps,relaxed_steps,diverged_runs,aborted_runs,mean_solve_us,max_solve_us,"
      "avg_time_s,median_hitting_time\n";
  out += fmt::format("{},{},{},{},{},{},{},{},{},{},{}\n", s.runs, s.failures, num(s.failure_ratio), s.steps,
                     s.relaxed_steps, s.diverged_runs, s.aborted_runs, num(s.mean_solve_us), num(s.max_solve_us),
                     num(s.mean_solve_us * 1e-6), num(median_hitting_time(s)));
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "risk,beta,avg_time_s,failure_ratio,failures,runs,relaxed_steps,aborted_runs\n";
  for (const auto& r : rows) {
    const auto& s = r.stats;
    out += fmt::format("{},{},{},{},{},{},{},{}\n", to_string(r.risk.kind), num(r.risk.beta), num(s.mean_solve_us * 1e-6),
                       num(s.failure_ratio), s.failures, s.runs, s.relaxed_steps, s.aborted_runs);
  }
  return out;
}

std::string certificate_json(const TreeCertificate& c) {
  nlohmann::json j;
  j["mode"] = c.mode == DecayMode::Safety ? "safety" : "reach";
  j["horizon"] = c.horizon;
  j["h0"] = c.h0;
  j["nested"] = c.nested;
  j["bound"] = c.bound;
  j["pass"] = c.pass;
  j["relaxed_nodes"] = c.relaxed_nodes;
  j["verdict"] = to_string(c.verdict());
  if (c.mode == DecayMode::Reach) {
    j["reach_bound"] = c.reach_bound;
    j["crossing"] = c.crossing ? nlohmann::json(*c.crossing) : nlohmann::json(nullptr);
    j["post_entry_relaxed"] = c.post_entry_relaxed;
  }
  j["note"] = c.note;
  return j.dump(2) + "\n";
}

std::string plot_script(Eigen::Index state_dim, Eigen::Index control_dim, bool has_sweep) {
  const Eigen::Index h_col = 2 + state_dim + control_dim + 1;
  std::string out = fmt::format(
      "# gnuplot script; run from the output directory: gnuplot plot.gp\n"
      "set datafile separator ','\n"
      "set terminal pngcairo size 900,600\n"
      "set key off\n"
      "set output 'barrier.png'\n"
      "set xlabel 't'\n"
      "set ylabel 'h(x_t)'\n"
      "set yzeroaxis\n"
      "plot 'trajectories.csv' every ::1 using 2:{} with points pt 7 ps 0.2 lc rgb '#4060a0', 0 with lines lc rgb 'red'\n",
      h_col);
  if (state_dim >= 2) {
    out +=
        "set output 'states.png'\n"
        "set xlabel 'x0'\n"
        "set ylabel 'x1'\n"
        "plot 'trajectories.csv' every ::1 using 3:4 with points pt 7 ps 0.2 lc rgb '#4060a0'\n";
  }
  if (has_sweep) {
    out +=
        "set output 'sweep.png'\n"
        "set style data histogram\n"
        "set style fill solid 0.6\n"
        "set xlabel 'risk'\n"
        "set ylabel 'failure ratio'\n"
        "plot 'sweep.csv' every ::1 using 4:xticlabels(sprintf('%s %s', strcol(1), strcol(2)))\n";
  }
  return out;
}

}  // namespace rcbf
