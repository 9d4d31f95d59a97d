#include "rcbf/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "rcbf/errors.hpp"
#include "rcbf/linprog.hpp"

namespace rcbf {

namespace {

constexpr double kPmfTol = 1e-12;

// Indices of rv sorted by ascending value; ties keep their original order.
std::vector<std::size_t> ascending_order(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return idx;
}

void require_beta(double beta, bool allow_one, const char* who) {
  const bool ok = allow_one ? (beta > 0.0 && beta <= 1.0) : (beta > 0.0 && beta < 1.0);
  if (!ok || !std::isfinite(beta)) {
    throw ParameterError(fmt::format("{}: beta = {} is outside {}", who, beta,
                                     allow_one ? "(0, 1]" : "(0, 1)"));
  }
}

}  // namespace

ScalarRandomVariable::ScalarRandomVariable(std::vector<double> values, std::vector<double> pmf)
    : values_(std::move(values)), pmf_(std::move(pmf)) {
  if (values_.empty()) throw ParameterError("ScalarRandomVariable: empty support");
  if (values_.size() != pmf_.size()) {
    throw DimensionError(fmt::format("ScalarRandomVariable: {} values but {} probabilities",
                                     values_.size(), pmf_.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < pmf_.size(); ++i) {
    if (!(pmf_[i] >= 0.0)) throw ParameterError("ScalarRandomVariable: negative probability");
    if (!std::isfinite(values_[i])) throw ParameterError("ScalarRandomVariable: non-finite value");
    total += pmf_[i];
  }
  if (std::abs(total - 1.0) > kPmfTol) {
    throw ParameterError(fmt::format("ScalarRandomVariable: pmf sums to {:.17g}", total));
  }
}

ScalarRandomVariable ScalarRandomVariable::uniform(std::vector<double> values) {
  const std::size_t n = values.size();
  if (n == 0) throw ParameterError("ScalarRandomVariable: empty support");
  return {std::move(values), std::vector<double>(n, 1.0 / static_cast<double>(n))};
}

double ScalarRandomVariable::min_value() const {
  return *std::min_element(values_.begin(), values_.end());
}

const char* to_string(RiskKind kind) {
  switch (kind) {
    case RiskKind::Expectation:
      return "E";
    case RiskKind::VaR:
      return "VaR";
    case RiskKind::CVaR:
      return "CVaR";
    case RiskKind::EVaR:
      return "EVaR";
  }
  return "?";
}

RiskKind parse_risk_kind(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
  if (t == "e" || t == "expectation") return RiskKind::Expectation;
  if (t == "var") return RiskKind::VaR;
  if (t == "cvar") return RiskKind::CVaR;
  if (t == "evar") return RiskKind::EVaR;
  throw ParameterError(fmt::format("unknown risk measure '{}'", text));
}

void RiskSpec::validate() const {
  if (kind == RiskKind::Expectation) return;
  require_beta(beta, kind != RiskKind::VaR, to_string(kind));
}

std::string RiskSpec::label() const {
  if (kind == RiskKind::Expectation) return "E";
  return fmt::format("{}_{:g}", to_string(kind), beta);
}

double expectation(const ScalarRandomVariable& rv) {
  double acc = 0.0;
  for (std::size_t i = 0; i < rv.size(); ++i) acc += rv.pmf()[i] * rv.values()[i];
  return acc;
}

double value_at_risk(const ScalarRandomVariable& rv, double beta) {
  require_beta(beta, false, "value_at_risk");
  const auto v = rv.values();
  const auto p = rv.pmf();
  const auto order = ascending_order(v);
  double cum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    cum += p[order[k]];
    // Mass at tied values is accumulated before the threshold test.
    if (k + 1 < order.size() && v[order[k + 1]] == v[order[k]]) continue;
    if (cum > beta + kPmfTol) return v[order[k]];
  }
  return v[order.back()];
}

double cvar(const ScalarRandomVariable& rv, double beta) {
  require_beta(beta, true, "cvar");
  if (beta == 1.0) return expectation(rv);
  const auto v = rv.values();
  const auto p = rv.pmf();
  double acc = 0.0;
  double cum = 0.0;
  for (std::size_t i : ascending_order(v)) {
    if (cum + p[i] <= beta) {
      acc += p[i] * v[i];
      cum += p[i];
    } else {
      acc += (beta - cum) * v[i];
      cum = beta;
      break;
    }
  }
  // Floating-point drift can leave a sliver of tail mass unassigned.
  if (cum < beta) acc += (beta - cum) * v[ascending_order(v).back()];
  return acc / beta;
}

double cvar_via_rockafellar(const ScalarRandomVariable& rv, double beta) {
  require_beta(beta, true, "cvar_via_rockafellar");
  const auto v = rv.values();
  const auto p = rv.pmf();
  double best = std::numeric_limits<double>::infinity();
  for (double hv : v) {
    const double zeta = -hv;
    double f = zeta;
    for (std::size_t i = 0; i < v.size(); ++i) {
      f += p[i] * std::max(-v[i] - zeta, 0.0) / beta;
    }
    best = std::min(best, f);
  }
  return -best;
}

double evar_at(const ScalarRandomVariable& rv, double beta, double zeta) {
  const auto v = rv.values();
  const auto p = rv.pmf();
  const double m = rv.min_value();
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += p[i] * std::exp(-zeta * (v[i] - m));
  return m - (std::log(s) - std::log(beta)) / zeta;
}

namespace {

struct EvarOptimum {
  double value;
  double zeta;  // +inf when the supremum is the zeta -> infinity limit
};

EvarOptimum evar_search(const ScalarRandomVariable& rv, double beta) {
  constexpr int kGrid = 60;
  constexpr double kLogLo = -6.0 * 2.302585092994046;  // log(1e-6)
  constexpr double kLogHi = 6.0 * 2.302585092994046;   // log(1e6)
  constexpr double kRelTol = 1e-10;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  const double m = rv.min_value();
  double mass_at_min = 0.0;
  for (std::size_t i = 0; i < rv.size(); ++i) {
    if (rv.values()[i] == m) mass_at_min += rv.pmf()[i];
  }
  // The tail of mass beta sits entirely on the minimum; EVaR is squeezed
  // between min and CVaR, which both equal m.
  if (mass_at_min >= beta) return {m, kInf};

  auto phi = [&](double log_zeta) { return evar_at(rv, beta, std::exp(log_zeta)); };

  int best_k = 0;
  double best_val = -kInf;
  const double step = (kLogHi - kLogLo) / (kGrid - 1);
  for (int k = 0; k < kGrid; ++k) {
    const double val = phi(kLogLo + step * k);
    if (val > best_val) {
      best_val = val;
      best_k = k;
    }
  }

  // phi is unimodal in zeta, so the maximizer lies between the grid
  // neighbours of the best grid point.
  double lo = kLogLo + step * std::max(best_k - 1, 0);
  double hi = kLogLo + step * std::min(best_k + 1, kGrid - 1);
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - inv_phi * (hi - lo);
  double d = lo + inv_phi * (hi - lo);
  double fc = phi(c);
  double fd = phi(d);
  while (hi - lo > kRelTol) {
    if (fc > fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - inv_phi * (hi - lo);
      fc = phi(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + inv_phi * (hi - lo);
      fd = phi(d);
    }
  }
  EvarOptimum out{best_val, std::exp(kLogLo + step * best_k)};
  if (fc > out.value) out = {fc, std::exp(c)};
  if (fd > out.value) out = {fd, std::exp(d)};
  if (m >= out.value) out = {m, kInf};
  return out;
}

}  // namespace

double evar(const ScalarRandomVariable& rv, double beta) {
  require_beta(beta, true, "evar");
  if (beta == 1.0) return expectation(rv);
  return evar_search(rv, beta).value;
}

double evar_argmax(const ScalarRandomVariable& rv, double beta) {
  require_beta(beta, false, "evar_argmax");
  return evar_search(rv, beta).zeta;
}

double evaluate(const ScalarRandomVariable& rv, const RiskSpec& spec) {
  switch (spec.kind) {
    case RiskKind::Expectation:
      return expectation(rv);
    case RiskKind::VaR:
      return value_at_risk(rv, spec.beta);
    case RiskKind::CVaR:
      return cvar(rv, spec.beta);
    case RiskKind::EVaR:
      return evar(rv, spec.beta);
  }
  throw ParameterError("evaluate: unknown risk kind");
}

RiskEnvelope::RiskEnvelope(Eigen::MatrixXd B, Eigen::VectorXd b) : B_(std::move(B)), b_(std::move(b)) {
  const auto m = B_.cols();
  if (m == 0 || B_.rows() != b_.size()) {
    throw DimensionError("RiskEnvelope: B and b have inconsistent sizes");
  }
  constexpr double kTol = 1e-9;
  auto solve = [&](const Eigen::VectorXd& c) {
    auto r = lp::linprog(c, B_, b_);
    if (r.status == lp::LpStatus::Infeasible) throw EnvelopeError("RiskEnvelope: polytope is empty");
    if (r.status != lp::LpStatus::Optimal) {
      throw EnvelopeError("RiskEnvelope: polytope is not contained in the probability simplex");
    }
    return r.objective;
  };
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::VectorXd c = Eigen::VectorXd::Zero(m);
    c(j) = 1.0;
    if (solve(c) < -kTol) throw EnvelopeError("RiskEnvelope: polytope admits negative probabilities");
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m);
  if (solve(ones) < 1.0 - kTol || -solve(-ones) > 1.0 + kTol) {
    throw EnvelopeError("RiskEnvelope: polytope leaves the probability simplex");
  }
}

bool RiskEnvelope::contains(const Eigen::VectorXd& q, double tol) const {
  if (q.size() != B_.cols()) return false;
  return ((B_ * q - b_).array() <= tol).all();
}

RiskEnvelope cvar_envelope(std::span<const double> pmf, double beta) {
  require_beta(beta, true, "cvar_envelope");
  const auto m = static_cast<Eigen::Index>(pmf.size());
  if (m == 0) throw DimensionError("cvar_envelope: empty pmf");
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(2 + 2 * m, m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2 + 2 * m);
  B.row(0).setOnes();
  b(0) = 1.0;
  B.row(1).setConstant(-1.0);
  b(1) = -1.0;
  for (Eigen::Index j = 0; j < m; ++j) {
    B(2 + j, j) = -1.0;
    B(2 + m + j, j) = 1.0;
    b(2 + m + j) = pmf[static_cast<std::size_t>(j)] / beta;
  }
  return {std::move(B), std::move(b)};
}

RiskEnvelope point_envelope(std::span<const double> pmf) { return cvar_envelope(pmf, 1.0); }

double envelope_min_expectation(const ScalarRandomVariable& rv, const RiskEnvelope& envelope) {
  if (envelope.dimension() != rv.size()) {
    throw DimensionError(fmt::format("envelope dimension {} does not match {} outcomes",
                                     envelope.dimension(), rv.size()));
  }
  Eigen::VectorXd c(static_cast<Eigen::Index>(rv.size()));
  for (std::size_t i = 0; i < rv.size(); ++i) c(static_cast<Eigen::Index>(i)) = rv.values()[i];
  auto r = lp::linprog(c, envelope.B(), envelope.b());
  if (r.status != lp::LpStatus::Optimal) {
    throw EnvelopeError(fmt::format("envelope LP ended with status {}", lp::to_string(r.status)));
  }
  return r.objective;
}

ScenarioTree::ScenarioTree(std::size_t depth, std::vector<double> edge_pmf,
                           std::vector<double> leaf_values)
    : depth_(depth), edge_pmf_(std::move(edge_pmf)), leaf_values_(std::move(leaf_values)) {
  if (edge_pmf_.empty()) throw StructuralError("ScenarioTree: empty edge distribution");
  double total = 0.0;
  for (double p : edge_pmf_) {
    if (!(p >= 0.0)) throw StructuralError("ScenarioTree: negative edge probability");
    total += p;
  }
  if (std::abs(total - 1.0) > kPmfTol) throw StructuralError("ScenarioTree: edge pmf does not sum to 1");
  std::size_t expected = 1;
  for (std::size_t t = 0; t < depth_; ++t) expected *= edge_pmf_.size();
  if (leaf_values_.size() != expected) {
    throw StructuralError(fmt::format("ScenarioTree: depth {} with branching {} needs {} leaves, got {}",
                                      depth_, edge_pmf_.size(), expected, leaf_values_.size()));
  }
}

double nested_risk(const ScenarioTree& tree, const RiskSpec& spec) {
  spec.validate();
  const std::size_t k = tree.branching();
  const std::vector<double> pmf(tree.edge_pmf().begin(), tree.edge_pmf().end());
  std::vector<double> level(tree.leaf_values().begin(), tree.leaf_values().end());
  for (std::size_t d = tree.depth(); d > 0; --d) {
    std::vector<double> parent(level.size() / k);
    for (std::size_t i = 0; i < parent.size(); ++i) {
      std::vector<double> children(level.begin() + static_cast<std::ptrdiff_t>(i * k),
                                   level.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      parent[i] = evaluate(ScalarRandomVariable(std::move(children), pmf), spec);
    }
    level = std::move(parent);
  }
  return level.front();
}

}  // namespace rcbf
