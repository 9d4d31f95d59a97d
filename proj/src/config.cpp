#include "rcbf/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"
#include "rcbf/errors.hpp"

namespace rcbf {

namespace {

using json = nlohmann::json;

// A view of one object in the input, mirrored into the resolved output.
// Every read copies the value (or the default used) into `out`, so the
// resolved config lists exactly what the run used.
class Section {
 public:
  Section(const json& in, json& out, std::string path) : in_(in), out_(out), path_(std::move(path)) {
    if (!in_.is_object()) fail("expected an object");
    if (!out_.is_object()) out_ = json::object();
  }

  void allow(std::initializer_list<const char*> keys) const {
    for (const auto& [key, value] : in_.items()) {
      if (std::none_of(keys.begin(), keys.end(), [&](const char* k) { return key == k; })) {
        throw SchemaError(field(key), "unknown key");
      }
    }
  }

  bool has(const char* key) const { return in_.contains(key); }

  Section section(const char* key) const {
    if (!has(key)) throw SchemaError(field(key), "missing section");
    return Section(in_.at(key), out_[key], field(key));
  }

  double number(const char* key) const {
    out_[key] = checked_number(require(key), field(key));
    return out_[key].get<double>();
  }
  double number(const char* key, double fallback) const { return has(key) ? number(key) : (out_[key] = fallback, fallback); }

  std::uint64_t count(const char* key) const {
    const json& v = require(key);
    if (!v.is_number_unsigned()) throw SchemaError(field(key), "expected a nonnegative integer");
    out_[key] = v;
    return v.get<std::uint64_t>();
  }
  std::uint64_t count(const char* key, std::uint64_t fallback) const {
    return has(key) ? count(key) : (out_[key] = fallback, fallback);
  }

  bool flag(const char* key, bool fallback) const {
    if (!has(key)) return out_[key] = fallback, fallback;
    if (!in_.at(key).is_boolean()) throw SchemaError(field(key), "expected true or false");
    out_[key] = in_.at(key);
    return in_.at(key).get<bool>();
  }

  std::string text(const char* key) const {
    const json& v = require(key);
    if (!v.is_string()) throw SchemaError(field(key), "expected a string");
    out_[key] = v;
    return v.get<std::string>();
  }
  std::string text(const char* key, const std::string& fallback) const {
    return has(key) ? text(key) : (out_[key] = fallback, fallback);
  }

  Eigen::VectorXd vector(const char* key) const {
    const json& v = require(key);
    auto out = to_vector(v, field(key));
    out_[key] = v;
    return out;
  }

  Eigen::MatrixXd matrix(const char* key) const {
    const json& v = require(key);
    if (!v.is_array() || v.empty()) throw SchemaError(field(key), "expected a nonempty array of rows");
    std::vector<Eigen::VectorXd> rows;
    for (std::size_t i = 0; i < v.size(); ++i) rows.push_back(to_vector(v[i], fmt::format("{}[{}]", field(key), i)));
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols()) throw SchemaError(field(key), "rows have different lengths");
      m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    }
    out_[key] = v;
    return m;
  }

  const json& raw(const char* key) const { return require(key); }
  json& resolved() const { return out_; }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  [[noreturn]] void fail(const std::string& message) const { throw SchemaError(path_, message); }

 private:
  const json& require(const char* key) const {
    if (!has(key)) throw SchemaError(field(key), "missing required key");
    return in_.at(key);
  }

  static double checked_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw SchemaError(where, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(where, "expected a finite number");
    return d;
  }

  static Eigen::VectorXd to_vector(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw SchemaError(where, "expected a nonempty array of numbers");
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      out(static_cast<Eigen::Index>(i)) = checked_number(v[i], fmt::format("{}[{}]", where, i));
    }
    return out;
  }

  const json& in_;
  json& out_;
  std::string path_;
};

std::shared_ptr<const StochasticSystem> read_system(const Section& s) {
  const std::string name = s.text("name");
  if (name == "example1") {
    s.allow({"name"});
    return std::make_shared<const StochasticSystem>(make_example1());
  }
  if (name == "cartpole") {
    s.allow({"name", "params", "dt"});
    CartPoleParams p;
    p.dt = s.number("dt", p.dt);
    std::string disturbance = "angular_accel_5pt";
    std::vector<double> sigma{0.05, 0.05, 0.2, 0.2};
    if (s.has("params")) {
      const auto ps = s.section("params");
      ps.allow({"cart_mass", "pole_mass", "pole_length", "gravity", "disturbance", "sigma"});
      p.cart_mass = ps.number("cart_mass", p.cart_mass);
      p.pole_mass = ps.number("pole_mass", p.pole_mass);
      p.pole_length = ps.number("pole_length", p.pole_length);
      p.gravity = ps.number("gravity", p.gravity);
      disturbance = ps.text("disturbance", disturbance);
      if (ps.has("sigma")) {
        const Eigen::VectorXd v = ps.vector("sigma");
        sigma.assign(v.data(), v.data() + v.size());
      } else {
        ps.resolved()["sigma"] = sigma;
      }
    }
    return std::make_shared<const StochasticSystem>(make_cartpole(p, parse_cartpole_disturbance(disturbance), sigma));
  }
  throw SchemaError(s.field("name"), fmt::format("unknown system '{}' (expected example1 or cartpole)", name));
}

std::vector<BarrierSpec> affine_rows(const Section& ps) {
  const Eigen::MatrixXd H = ps.matrix("H");
  const Eigen::VectorXd l = ps.vector("l");
  if (l.size() != H.rows()) throw SchemaError(ps.field("l"), "needs one entry per row of H");
  std::vector<BarrierSpec> parts;
  for (Eigen::Index i = 0; i < H.rows(); ++i) parts.push_back(BarrierSpec::affine(H.row(i), l(i)));
  return parts;
}

BarrierSpec read_barrier(const Section& s) {
  s.allow({"variant", "params"});
  const std::string variant = s.text("variant");
  const auto ps = s.section("params");
  if (variant == "affine") {
    ps.allow({"H", "l"});
    const Eigen::VectorXd H = ps.vector("H");
    return BarrierSpec::affine(H.transpose(), ps.number("l"));
  }
  if (variant == "min_affine" || variant == "max_affine") {
    ps.allow({"H", "l"});
    auto parts = affine_rows(ps);
    return variant == "min_affine" ? BarrierSpec::min_of(std::move(parts)) : BarrierSpec::max_of(std::move(parts));
  }
  if (variant == "cartpole_angle") {
    ps.allow({"theta0", "C"});
    return BarrierSpec(CartPoleAngleBarrier{ps.number("theta0"), ps.number("C")});
  }
  if (variant == "braking") {
    ps.allow({"a_max"});
    return BarrierSpec(BrakingBarrier{ps.number("a_max")});
  }
  throw SchemaError(s.field("variant"),
                    fmt::format("unknown barrier '{}' (expected affine, min_affine, max_affine, cartpole_angle, "
                                "braking)",
                                variant));
}

RiskSpec read_risk(const Section& s) {
  s.allow({"kind", "beta"});
  RiskSpec r;
  try {
    r.kind = parse_risk_kind(s.text("kind"));
  } catch (const ParameterError& e) {
    throw SchemaError(s.field("kind"), e.what());
  }
  r.beta = r.kind == RiskKind::Expectation ? s.number("beta", 1.0) : s.number("beta");
  r.validate();
  return r;
}

NominalController read_nominal(const Section& s, Eigen::Index m) {
  s.allow({"kind", "params"});
  const std::string kind = s.text("kind", "zero");
  if (kind == "zero") {
    if (s.has("params")) s.section("params").allow({});
    return NominalController::zero(m);
  }
  const auto ps = s.section("params");
  if (kind == "affine") {
    ps.allow({"K", "k0"});
    const Eigen::MatrixXd K = ps.matrix("K");
    Eigen::VectorXd k0 = Eigen::VectorXd::Zero(K.rows());
    if (ps.has("k0")) {
      k0 = ps.vector("k0");
    } else {
      ps.resolved()["k0"] = std::vector<double>(static_cast<std::size_t>(K.rows()), 0.0);
    }
    return NominalController::affine(K, k0);
  }
  if (kind == "scripted") {
    ps.allow({"sequence"});
    const Eigen::MatrixXd seq = ps.matrix("sequence");
    std::vector<Eigen::VectorXd> steps;
    for (Eigen::Index t = 0; t < seq.rows(); ++t) steps.push_back(seq.row(t).transpose());
    return NominalController::scripted(std::move(steps));
  }
  throw SchemaError(s.field("kind"), fmt::format("unknown nominal '{}' (expected zero, affine, scripted)", kind));
}

void read_filter(const Section& s, FilterProblem& pr) {
  s.allow({"mode", "alpha", "gamma", "eps", "u_lo", "u_hi", "tolerances"});
  const std::string mode = s.text("mode");
  if (mode == "safety") {
    if (s.has("gamma") || s.has("eps")) s.fail("gamma and eps belong to reach mode");
    pr.decay = DecaySpec::safety(s.number("alpha"));
  } else if (mode == "reach") {
    if (s.has("alpha")) s.fail("alpha belongs to safety mode");
    const double gamma = s.number("gamma");
    pr.decay = DecaySpec::reach(gamma, s.number("eps"));
  } else {
    throw SchemaError(s.field("mode"), fmt::format("unknown mode '{}' (expected safety or reach)", mode));
  }
  pr.u_lo = s.vector("u_lo");
  pr.u_hi = s.vector("u_hi");
  auto& tol = pr.tol;
  if (s.has("tolerances")) {
    const auto ts = s.section("tolerances");
    ts.allow({"constraint", "kkt", "dccp_step", "dccp_max_iterations", "dccp_restarts", "slack_penalty"});
    tol.constraint = ts.number("constraint", tol.constraint);
    tol.kkt = ts.number("kkt", tol.kkt);
    tol.dccp_step = ts.number("dccp_step", tol.dccp_step);
    tol.dccp_max_iterations = static_cast<int>(ts.count("dccp_max_iterations", tol.dccp_max_iterations));
    tol.dccp_restarts = static_cast<int>(ts.count("dccp_restarts", tol.dccp_restarts));
    tol.slack_penalty = ts.number("slack_penalty", tol.slack_penalty);
  }
}

InitialStatePolicy read_x0(const Section& s) {
  if (s.has("fixed") == s.has("box")) s.fail("give exactly one of 'fixed' or 'box'");
  if (s.has("fixed")) {
    s.allow({"fixed"});
    return InitialStatePolicy::at(s.vector("fixed"));
  }
  s.allow({"box", "max_tries"});
  const auto b = s.section("box");
  b.allow({"lo", "hi"});
  auto p = InitialStatePolicy::box(b.vector("lo"), b.vector("hi"));
  p.max_tries = static_cast<int>(s.count("max_tries", 100000));
  return p;
}

}  // namespace

RiskSpec parse_risk_label(const std::string& text) {
  const auto colon = text.find(':');
  RiskSpec r;
  r.kind = parse_risk_kind(text.substr(0, colon));
  if (colon == std::string::npos) {
    if (r.kind != RiskKind::Expectation) throw ParameterError(fmt::format("risk '{}' needs a level, e.g. CVaR:0.1", text));
    return r;
  }
  const std::string level = text.substr(colon + 1);
  std::size_t used = 0;
  try {
    r.beta = std::stod(level, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != level.size()) throw ParameterError(fmt::format("risk '{}': bad level '{}'", text, level));
  r.validate();
  return r;
}

ExperimentConfig parse_config(const std::string& text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", fmt::format("invalid JSON: {}", e.what()));
  }
  json out = json::object();
  const Section root(in, out, "");
  root.allow({"schema", "system", "barrier", "risk", "filter", "nominal", "sim", "sweep", "verify"});
  if (!root.has("schema")) throw SchemaError("schema", "missing required key");
  if (root.raw("schema") != json(kConfigSchema)) {
    throw SchemaError("schema", fmt::format("unsupported version {} (expected {})", root.raw("schema").dump(), kConfigSchema));
  }
  out["schema"] = kConfigSchema;

  auto system = read_system(root.section("system"));
  BarrierSpec barrier = read_barrier(root.section("barrier"));
  const RiskSpec risk = read_risk(root.section("risk"));
  const Eigen::Index m = system->control_dim();
  FilterProblem problem{system, barrier, risk, DecaySpec::safety(0.9), Eigen::VectorXd::Zero(m),
                        Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m), {}};
  read_filter(root.section("filter"), problem);

  ExperimentConfig cfg{SimConfig{problem, NominalController::zero(m), InitialStatePolicy{}, 1, 1, 0, 0, 1e6},
                       false, {}, 3, Eigen::VectorXd{}, std::string{}};
  auto& sim = cfg.sim;
  if (root.has("nominal")) {
    sim.nominal = read_nominal(root.section("nominal"), m);
  } else {
    sim.nominal = NominalController::zero(m);
    out["nominal"] = {{"kind", "zero"}};
  }

  const auto ss = root.section("sim");
  ss.allow({"runs", "horizon", "seed", "x0", "divergence_bound", "log_solve_time"});
  sim.runs = ss.count("runs");
  sim.horizon = ss.count("horizon");
  sim.seed = ss.count("seed", 0);
  sim.x0 = read_x0(ss.section("x0"));
  sim.divergence_bound = ss.number("divergence_bound", sim.divergence_bound);
  cfg.log_solve_time = ss.flag("log_solve_time", false);

  if (root.has("sweep")) {
    const auto sw = root.section("sweep");
    sw.allow({"risks"});
    const json& list = sw.raw("risks");
    if (!list.is_array() || list.empty()) throw SchemaError("sweep.risks", "expected a nonempty array");
    json& resolved = sw.resolved()["risks"] = json::array();
    for (std::size_t i = 0; i < list.size(); ++i) {
      json entry = json::object();
      cfg.sweep.push_back(read_risk(Section(list[i], entry, fmt::format("sweep.risks[{}]", i))));
      resolved.push_back(entry);
    }
  }

  cfg.verify_x0 = sim.x0.fixed;
  if (root.has("verify")) {
    const auto vs = root.section("verify");
    vs.allow({"horizon", "x0"});
    cfg.verify_horizon = vs.count("horizon", cfg.verify_horizon);
    if (vs.has("x0")) cfg.verify_x0 = vs.vector("x0");
  }

  sim.validate();
  if (cfg.verify_x0.size() > 0 && cfg.verify_x0.size() != system->state_dim()) {
    throw DimensionError(fmt::format("verify.x0 must have {} entries", system->state_dim()));
  }
  cfg.resolved = out.dump(2);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw SchemaError("", fmt::format("cannot read config '{}'", path.string()));
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config(buf.str());
}

}  // namespace rcbf
