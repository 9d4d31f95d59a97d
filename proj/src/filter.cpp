#include "rcbf/filter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

#include <fmt/format.h>

#include "rcbf/errors.hpp"
#include "rcbf/qp.hpp"

namespace rcbf {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGolden = 0.6180339887498949;

using Clock = std::chrono::steady_clock;

// Outcome j takes the value min_i (a(i) + b.row(i) u).
struct Outcome {
  Eigen::VectorXd a;
  Eigen::MatrixXd b;
};

struct AffineProgram {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  Eigen::VectorXd u_des;
  std::vector<double> pmf;
  RiskSpec risk;
  double rhs = 0.0;
  std::vector<Outcome> outcomes;
  double penalty = 1e6;

  Eigen::Index m() const { return lo.size(); }
  std::size_t size() const { return outcomes.size(); }

  bool single_piece() const {
    return std::all_of(outcomes.begin(), outcomes.end(), [](const Outcome& o) { return o.a.size() == 1; });
  }

  std::vector<double> values(const Eigen::VectorXd& u) const {
    std::vector<double> v(outcomes.size());
    for (std::size_t j = 0; j < outcomes.size(); ++j) v[j] = (outcomes[j].a + outcomes[j].b * u).minCoeff();
    return v;
  }

  double risk_value(const Eigen::VectorXd& u) const {
    return evaluate(ScalarRandomVariable(values(u), pmf), risk);
  }
};

struct AffineResult {
  bool ok = false;
  bool relaxed = false;
  Eigen::VectorXd u;
  double slack = 0.0;
  int iterations = 0;
  double kkt = 0.0;
  double zeta = 0.0;
  std::string path;
};

Eigen::VectorXd clamp(const Eigen::VectorXd& u, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  return u.cwiseMax(lo).cwiseMin(hi);
}

double objective(const Eigen::VectorXd& u, const Eigen::VectorXd& u_des) { return (u - u_des).squaredNorm(); }

std::vector<double> pmf_of(const StochasticSystem& sys) { return sys.disturbance().pmf(); }

// Outcome pieces for an affine or min-of-affine barrier over a control-affine system.
std::vector<Outcome> affine_outcomes(const StochasticSystem& sys, const BarrierSpec& h, const Eigen::VectorXd& x) {
  std::vector<const AffineBarrier*> parts;
  if (const auto* a = std::get_if<AffineBarrier>(&h.variant())) {
    parts.push_back(a);
  } else if (const auto* mc = h.as_min_of_affine()) {
    for (const auto& p : mc->parts) parts.push_back(&std::get<AffineBarrier>(p.variant()));
  } else {
    throw UnsupportedError(fmt::format("barrier '{}' is not affine", h.describe()));
  }
  std::vector<Outcome> out;
  for (const auto& w : sys.disturbance().support()) {
    const AffineParts ap = sys.affine_parts(x, w);
    Outcome o{Eigen::VectorXd(parts.size()), Eigen::MatrixXd(parts.size(), sys.control_dim())};
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i]->H.size() != sys.state_dim()) throw DimensionError("affine barrier does not match the state");
      o.a(i) = parts[i]->H.dot(ap.drift) + parts[i]->l;
      o.b.row(i) = parts[i]->H * ap.input_gain;
    }
    out.push_back(std::move(o));
  }
  return out;
}

AffineProgram make_program(const FilterProblem& pr, double rhs, std::vector<Outcome> outcomes) {
  AffineProgram ap;
  ap.lo = pr.u_lo;
  ap.hi = pr.u_hi;
  ap.u_des = pr.u_des;
  ap.pmf = pmf_of(*pr.system);
  ap.risk = pr.risk;
  ap.rhs = rhs;
  ap.outcomes = std::move(outcomes);
  ap.penalty = pr.tol.slack_penalty;
  return ap;
}

// ---------------------------------------------------------------------------
// Expectation and CVaR: quadratic programs.

AffineResult solve_polytopic(const AffineProgram& pr, bool relaxed) {
  const Eigen::Index m = pr.m();
  const auto J = static_cast<Eigen::Index>(pr.size());
  const bool is_cvar = pr.risk.kind == RiskKind::CVaR;
  const bool single = pr.single_piece();
  const bool use_s = !is_cvar && !single;

  Eigen::Index n = m;
  const Eigen::Index s0 = n;
  if (use_s) n += J;
  const Eigen::Index mu = n;
  const Eigen::Index lam0 = mu + 1;
  if (is_cvar) n += 1 + J;
  const Eigen::Index r = n;
  if (relaxed) n += 1;

  std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
  auto row = [&]() { return Eigen::RowVectorXd::Zero(n).eval(); };
  for (Eigen::Index i = 0; i < m; ++i) {
    auto up = row();
    up(i) = 1.0;
    rows.emplace_back(up, pr.hi(i));
    auto down = row();
    down(i) = -1.0;
    rows.emplace_back(down, -pr.lo(i));
  }
  if (is_cvar) {
    // mu - lambda_j <= a_ij + b_ij u for every piece, and the envelope dual value >= rhs.
    for (Eigen::Index j = 0; j < J; ++j) {
      const auto& o = pr.outcomes[j];
      for (Eigen::Index i = 0; i < o.a.size(); ++i) {
        auto c = row();
        c.head(m) = -o.b.row(i);
        c(mu) = 1.0;
        c(lam0 + j) = -1.0;
        rows.emplace_back(c, o.a(i));
      }
      auto nonneg = row();
      nonneg(lam0 + j) = -1.0;
      rows.emplace_back(nonneg, 0.0);
    }
    auto c = row();
    c(mu) = -1.0;
    for (Eigen::Index j = 0; j < J; ++j) c(lam0 + j) = pr.pmf[j] / pr.risk.beta;
    if (relaxed) c(r) = -1.0;
    rows.emplace_back(c, -pr.rhs);
  } else if (single) {
    auto c = row();
    double mean_a = 0.0;
    for (Eigen::Index j = 0; j < J; ++j) {
      c.head(m) -= pr.pmf[j] * pr.outcomes[j].b.row(0);
      mean_a += pr.pmf[j] * pr.outcomes[j].a(0);
    }
    if (relaxed) c(r) = -1.0;
    rows.emplace_back(c, mean_a - pr.rhs);
  } else {
    for (Eigen::Index j = 0; j < J; ++j) {
      const auto& o = pr.outcomes[j];
      for (Eigen::Index i = 0; i < o.a.size(); ++i) {
        auto c = row();
        c.head(m) = -o.b.row(i);
        c(s0 + j) = 1.0;
        rows.emplace_back(c, o.a(i));
      }
    }
    auto c = row();
    for (Eigen::Index j = 0; j < J; ++j) c(s0 + j) = -pr.pmf[j];
    if (relaxed) c(r) = -1.0;
    rows.emplace_back(c, -pr.rhs);
  }
  if (relaxed) {
    auto c = row();
    c(r) = -1.0;
    rows.emplace_back(c, 0.0);
  }

  qp::QpProblem q;
  q.P = Eigen::MatrixXd::Zero(n, n);
  q.P.topLeftCorner(m, m).diagonal().setConstant(2.0);
  q.q = Eigen::VectorXd::Zero(n);
  q.q.head(m) = -2.0 * pr.u_des;
  if (relaxed) q.P(r, r) = 2.0 * pr.penalty;
  q.A_ub.resize(static_cast<Eigen::Index>(rows.size()), n);
  q.b_ub.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    q.A_ub.row(k) = rows[k].first;
    q.b_ub(k) = rows[k].second;
  }

  qp::QpOptions opts;
  if (relaxed) {
    // A feasible start is known: clamp(u_des), tight auxiliaries, large slack.
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd u0 = clamp(pr.u_des, pr.lo, pr.hi);
    z.head(m) = u0;
    const auto v = pr.values(u0);
    double value = 0.0;
    if (is_cvar) {
      z(mu) = *std::min_element(v.begin(), v.end());
      value = z(mu);
    } else {
      for (Eigen::Index j = 0; j < J; ++j) {
        if (use_s) z(s0 + j) = v[j];
        value += pr.pmf[j] * v[j];
      }
    }
    z(r) = std::max(0.0, pr.rhs - value) + 1.0;
    opts.x0 = z;
  }
  const auto res = qp::solve(q, opts);
  AffineResult out;
  out.path = is_cvar ? "cvar_qp" : "expectation_qp";
  out.iterations = res.iterations;
  out.kkt = res.kkt.max();
  out.relaxed = relaxed;
  if (res.status != qp::QpStatus::Optimal) return out;
  out.ok = true;
  out.u = clamp(res.x.head(m), pr.lo, pr.hi);
  if (relaxed) out.slack = std::max(0.0, res.x(r));
  return out;
}

// ---------------------------------------------------------------------------
// EVaR.

// Scalar control: the feasible set {u | EVaR(s(u)) >= rhs} is an interval
// because EVaR is concave and nondecreasing and each s_j is concave in u.
// The filter is the projection of u_des onto it, found by bisection on the
// exact EVaR evaluation.
AffineResult solve_evar_scalar(const AffineProgram& pr) {
  AffineResult out;
  out.path = "evar_scalar";
  const double lo = pr.lo(0);
  const double hi = pr.hi(0);
  auto V = [&](double u) {
    ++out.iterations;
    return pr.risk_value(Eigen::VectorXd::Constant(1, u));
  };
  const double u0 = std::clamp(pr.u_des(0), lo, hi);
  auto finish = [&](double u) {
    out.ok = true;
    out.u = Eigen::VectorXd::Constant(1, u);
    out.zeta = evar_argmax(ScalarRandomVariable(pr.values(out.u), pr.pmf), pr.risk.beta);
    return out;
  };
  if (V(u0) >= pr.rhs) return finish(u0);

  // Golden-section ascent on the concave EVaR, stopping at the first feasible point.
  double feasible = kInf;
  double a = lo, b = hi;
  double c = b - kGolden * (b - a), d = a + kGolden * (b - a);
  double fc = V(c), fd = V(d);
  for (int it = 0; it < 200 && std::isinf(feasible); ++it) {
    if (fc >= pr.rhs) feasible = c;
    else if (fd >= pr.rhs) feasible = d;
    else if (b - a <= 1e-12 * (1.0 + std::abs(a) + std::abs(b))) break;
    else if (fc < fd) {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = V(d);
    } else {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = V(c);
    }
  }
  if (std::isinf(feasible)) {
    for (double e : {lo, hi}) {
      if (V(e) >= pr.rhs) feasible = e;
    }
  }
  if (!std::isinf(feasible)) {
    double bad = u0;
    double good = feasible;
    for (int it = 0; it < 200 && std::abs(good - bad) > 1e-13 * (1.0 + std::abs(good)); ++it) {
      const double mid = 0.5 * (good + bad);
      (V(mid) >= pr.rhs ? good : bad) = mid;
    }
    return finish(good);
  }

  // Infeasible: minimize |u - u_des|^2 + penalty (rhs - EVaR)_+^2, convex in u.
  auto cost = [&](double u) {
    const double gap = std::max(0.0, pr.rhs - V(u));
    return (u - pr.u_des(0)) * (u - pr.u_des(0)) + pr.penalty * gap * gap;
  };
  a = lo;
  b = hi;
  c = b - kGolden * (b - a);
  d = a + kGolden * (b - a);
  fc = cost(c);
  fd = cost(d);
  while (b - a > 1e-12 * (1.0 + std::abs(a) + std::abs(b))) {
    if (fc > fd) {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = cost(d);
    } else {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = cost(c);
    }
  }
  double best = 0.5 * (a + b);
  for (double e : {lo, hi}) {
    if (cost(e) < cost(best)) best = e;
  }
  finish(best);
  out.relaxed = true;
  out.slack = std::max(0.0, pr.rhs - V(best));
  return out;
}

// Log-barrier interior method for a fixed multiplier zeta:
//   minimize |u - u_des|^2 (+ penalty r^2)
//   s.t. bounds, s_j <= pieces (min composites), and
//        F(z) = log sum_j p_j exp(-zeta y_j(z)) - log beta + zeta rhs <= 0,
// where y = c + D z is the outcome vector (plus r when relaxed).
class FixedZetaSolver {
 public:
  FixedZetaSolver(const AffineProgram& pr, bool relaxed) : pr_(pr), relaxed_(relaxed) {
    m_ = pr.m();
    const auto J = static_cast<Eigen::Index>(pr.size());
    single_ = pr.single_piece();
    n_ = m_ + (single_ ? 0 : J) + (relaxed ? 1 : 0);
    r_ = n_ - 1;

    std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
    for (Eigen::Index i = 0; i < m_; ++i) {
      Eigen::RowVectorXd up = Eigen::RowVectorXd::Zero(n_);
      up(i) = 1.0;
      rows.emplace_back(up, pr.hi(i));
      up(i) = -1.0;
      rows.emplace_back(up, -pr.lo(i));
    }
    c_ = Eigen::VectorXd::Zero(J);
    D_ = Eigen::MatrixXd::Zero(J, n_);
    for (Eigen::Index j = 0; j < J; ++j) {
      const auto& o = pr.outcomes[j];
      if (single_) {
        c_(j) = o.a(0);
        D_.block(j, 0, 1, m_) = o.b.row(0);
      } else {
        D_(j, m_ + j) = 1.0;
        for (Eigen::Index i = 0; i < o.a.size(); ++i) {
          Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_);
          row.head(m_) = -o.b.row(i);
          row(m_ + j) = 1.0;
          rows.emplace_back(row, o.a(i));
        }
      }
      if (relaxed) D_(j, r_) = 1.0;
    }
    if (relaxed) {
      Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(n_);
      row(r_) = -1.0;
      rows.emplace_back(row, 0.0);
    }
    G_.resize(static_cast<Eigen::Index>(rows.size()), n_);
    h_.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      G_.row(k) = rows[k].first;
      h_(k) = rows[k].second;
    }
    logp_.resize(J);
    for (Eigen::Index j = 0; j < J; ++j) logp_(j) = pr.pmf[j] > 0.0 ? std::log(pr.pmf[j]) : -kInf;
  }

  struct Result {
    bool feasible = false;
    Eigen::VectorXd u;
    double slack = 0.0;
    double cost = kInf;
    int newton = 0;
  };

  Result solve(double zeta) {
    zeta_ = zeta;
    Result res;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n_);
    z.head(m_) = 0.5 * (pr_.lo + pr_.hi);
    if (!single_) {
      const auto v = pr_.values(z.head(m_));
      for (std::size_t j = 0; j < v.size(); ++j) z(m_ + static_cast<Eigen::Index>(j)) = v[j] - 1.0;
    }
    if (relaxed_) {
      z(r_) = 0.0;
      z(r_) = std::max(1.0, F(z) / zeta_ + 1.0);
    }
    const double margin = 1e-9;
    if (F(z) >= -margin) {
      if (relaxed_ || !phase_one(z, margin, res.newton)) return res;
    }
    phase_two(z, res.newton);
    res.feasible = F(z) < 0.0;
    res.u = clamp(z.head(m_), pr_.lo, pr_.hi);
    res.slack = relaxed_ ? std::max(0.0, z(r_)) : 0.0;
    res.cost = objective(res.u, pr_.u_des) + (relaxed_ ? pr_.penalty * res.slack * res.slack : 0.0);
    return res;
  }

 private:
  double F(const Eigen::VectorXd& z, Eigen::VectorXd* grad = nullptr, Eigen::MatrixXd* hess = nullptr) const {
    const Eigen::VectorXd e = logp_ - zeta_ * (c_ + D_ * z);
    const double shift = e.maxCoeff();
    const Eigen::VectorXd w = (e.array() - shift).exp().matrix();
    const double total = w.sum();
    const double value = shift + std::log(total) - std::log(pr_.risk.beta) + zeta_ * pr_.rhs;
    if (grad != nullptr) {
      const Eigen::VectorXd pi = w / total;
      *grad = -zeta_ * D_.transpose() * pi;
      if (hess != nullptr) {
        const Eigen::MatrixXd cov = Eigen::MatrixXd(pi.asDiagonal()) - pi * pi.transpose();
        *hess = zeta_ * zeta_ * D_.transpose() * cov * D_;
      }
    }
    return value;
  }

  double f0(const Eigen::VectorXd& z) const {
    double v = objective(z.head(m_), pr_.u_des);
    if (relaxed_) v += pr_.penalty * z(r_) * z(r_);
    return v;
  }

  bool interior(const Eigen::VectorXd& z, bool with_f) const {
    if (((h_ - G_ * z).array() <= 0.0).any()) return false;
    return !with_f || F(z) < 0.0;
  }

  // psi = t obj - sum log(slack) [- log(-F)], obj = F in phase one, f0 in phase two.
  double psi(const Eigen::VectorXd& z, double t, bool phase_two) const {
    const Eigen::VectorXd s = h_ - G_ * z;
    double v = -s.array().log().sum();
    const double f = F(z);
    if (phase_two) v += t * f0(z) - std::log(-f);
    else v += t * f;
    return v;
  }

  // Damped Newton on psi; in phase one returns early once F < -margin.
  void center(Eigen::VectorXd& z, double t, bool phase_two, double margin, int& newton) const {
    for (int it = 0; it < 80; ++it) {
      ++newton;
      const Eigen::VectorXd s = h_ - G_ * z;
      const Eigen::VectorXd inv = s.cwiseInverse();
      Eigen::VectorXd gF;
      Eigen::MatrixXd HF;
      const double f = F(z, &gF, &HF);
      Eigen::VectorXd g = G_.transpose() * inv;
      Eigen::MatrixXd H = G_.transpose() * inv.cwiseAbs2().asDiagonal() * G_;
      if (phase_two) {
        Eigen::VectorXd g0 = Eigen::VectorXd::Zero(n_);
        g0.head(m_) = 2.0 * (z.head(m_) - pr_.u_des);
        Eigen::MatrixXd H0 = Eigen::MatrixXd::Zero(n_, n_);
        H0.topLeftCorner(m_, m_).diagonal().setConstant(2.0);
        if (relaxed_) {
          g0(r_) = 2.0 * pr_.penalty * z(r_);
          H0(r_, r_) = 2.0 * pr_.penalty;
        }
        g += t * g0 - gF / f;
        H += t * H0 + gF * gF.transpose() / (f * f) - HF / f;
      } else {
        g += t * gF;
        H += t * HF;
      }
      H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
      const Eigen::VectorXd dz = -H.ldlt().solve(g);
      const double decrement = -g.dot(dz);
      if (!(decrement > 1e-14)) return;
      const double base = psi(z, t, phase_two);
      double step = 1.0;
      Eigen::VectorXd next;
      bool moved = false;
      for (int k = 0; k < 60; ++k, step *= 0.5) {
        next = z + step * dz;
        if (!interior(next, phase_two)) continue;
        if (psi(next, t, phase_two) <= base - 0.25 * step * decrement) {
          moved = true;
          break;
        }
      }
      if (!moved) return;
      z = next;
      if (!phase_two && F(z) < -margin) return;
      if (decrement < 1e-12) return;
    }
  }

  bool phase_one(Eigen::VectorXd& z, double margin, int& newton) const {
    const double n_lin = static_cast<double>(h_.size());
    for (double t = 1.0; t < 1e14; t *= 20.0) {
      center(z, t, false, margin, newton);
      const double f = F(z);
      if (f < -margin) return true;
      if (f - n_lin / t > 0.0) return false;
    }
    return false;
  }

  void phase_two(Eigen::VectorXd& z, int& newton) const {
    const double n_con = static_cast<double>(h_.size()) + 1.0;
    for (double t = 1.0;; t *= 20.0) {
      center(z, t, true, 0.0, newton);
      if (n_con / t < 1e-10) break;
    }
  }

  const AffineProgram& pr_;
  bool relaxed_;
  bool single_ = true;
  Eigen::Index m_ = 0;
  Eigen::Index n_ = 0;
  Eigen::Index r_ = 0;
  double zeta_ = 1.0;
  Eigen::MatrixXd G_;
  Eigen::VectorXd h_;
  Eigen::VectorXd c_;
  Eigen::MatrixXd D_;
  Eigen::VectorXd logp_;
};

// Folds coordinates with u_lo == u_hi into the constants, so the interior
// method sees a box with a non-empty interior.
struct Folded {
  AffineProgram program;
  std::vector<Eigen::Index> free;
  Eigen::VectorXd fixed;
};

Folded fold_fixed(const AffineProgram& pr) {
  Folded f{pr, {}, pr.lo};
  for (Eigen::Index i = 0; i < pr.m(); ++i) {
    if (pr.hi(i) > pr.lo(i)) f.free.push_back(i);
  }
  const auto k = static_cast<Eigen::Index>(f.free.size());
  if (k == pr.m()) return f;
  auto& p = f.program;
  p.lo.resize(k);
  p.hi.resize(k);
  p.u_des.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    p.lo(i) = pr.lo(f.free[i]);
    p.hi(i) = pr.hi(f.free[i]);
    p.u_des(i) = pr.u_des(f.free[i]);
  }
  for (std::size_t j = 0; j < pr.size(); ++j) {
    const auto& o = pr.outcomes[j];
    Eigen::VectorXd a = o.a;
    Eigen::MatrixXd b(o.b.rows(), k);
    for (Eigen::Index i = 0, c = 0; i < pr.m(); ++i) {
      if (c < k && f.free[c] == i) b.col(c++) = o.b.col(i);
      else a += o.b.col(i) * pr.lo(i);
    }
    p.outcomes[j] = {a, b};
  }
  return f;
}

Eigen::VectorXd unfold(const Folded& f, const Eigen::VectorXd& u) {
  Eigen::VectorXd full = f.fixed;
  for (std::size_t i = 0; i < f.free.size(); ++i) full(f.free[i]) = u(static_cast<Eigen::Index>(i));
  return full;
}

AffineResult solve_evar_fixed(const AffineProgram& pr, double zeta) {
  AffineResult out;
  out.path = "evar_fixed_zeta";
  out.zeta = zeta;
  const Folded f = fold_fixed(pr);
  if (f.free.empty()) {
    out.ok = evar_at(ScalarRandomVariable(pr.values(pr.lo), pr.pmf), pr.risk.beta, zeta) >= pr.rhs;
    out.u = pr.lo;
    return out;
  }
  FixedZetaSolver solver(f.program, false);
  const auto r = solver.solve(zeta);
  out.iterations = r.newton;
  out.ok = r.feasible;
  if (r.feasible) out.u = unfold(f, r.u);
  return out;
}

// General EVaR path: log-spaced scan of zeta, then golden section in log zeta
// around the best grid point; keeps the best control seen.
AffineResult solve_evar_general(const AffineProgram& pr, bool relaxed) {
  AffineResult out;
  out.path = "evar_zeta_search";
  out.relaxed = relaxed;
  const Folded f = fold_fixed(pr);
  if (f.free.empty()) {
    const double v = pr.risk_value(pr.lo);
    out.u = pr.lo;
    out.ok = relaxed || v >= pr.rhs;
    out.slack = relaxed ? std::max(0.0, pr.rhs - v) : 0.0;
    return out;
  }
  FixedZetaSolver solver(f.program, relaxed);
  double best_cost = kInf;
  auto J = [&](double log_zeta) {
    const double zeta = std::pow(10.0, log_zeta);
    const auto r = solver.solve(zeta);
    out.iterations += r.newton;
    if (r.feasible && r.cost < best_cost) {
      best_cost = r.cost;
      out.ok = true;
      out.u = unfold(f, r.u);
      out.slack = r.slack;
      out.zeta = zeta;
    }
    return r.feasible ? r.cost : kInf;
  };
  constexpr int kGrid = 25;
  std::vector<double> grid(kGrid), cost(kGrid);
  int arg = -1;
  for (int k = 0; k < kGrid; ++k) {
    grid[k] = -6.0 + 0.5 * k;
    cost[k] = J(grid[k]);
    if (cost[k] < kInf && (arg < 0 || cost[k] < cost[arg])) arg = k;
  }
  if (arg < 0) return out;
  double a = grid[std::max(arg - 1, 0)];
  double b = grid[std::min(arg + 1, kGrid - 1)];
  double c = b - kGolden * (b - a), d = a + kGolden * (b - a);
  double fc = J(c), fd = J(d);
  while (b - a > 1e-3) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kGolden * (b - a);
      fc = J(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kGolden * (b - a);
      fd = J(d);
    }
  }
  return out;
}

AffineResult solve_evar_program(const AffineProgram& pr) {
  if (pr.m() == 1) return solve_evar_scalar(pr);
  auto res = solve_evar_general(pr, false);
  if (res.ok) return res;
  return solve_evar_general(pr, true);
}

// Strict solve first; falls back to the slack-penalized program.
AffineResult solve_affine(const AffineProgram& pr) {
  switch (pr.risk.kind) {
    case RiskKind::Expectation:
    case RiskKind::CVaR: {
      auto res = solve_polytopic(pr, false);
      if (res.ok) return res;
      auto relaxed = solve_polytopic(pr, true);
      if (!relaxed.ok) throw Error("relaxed risk program failed to solve");
      return relaxed;
    }
    case RiskKind::EVaR: {
      if (pr.risk.beta >= 1.0) {
        AffineProgram e = pr;
        e.risk = RiskSpec::expectation();
        return solve_affine(e);
      }
      return solve_evar_program(pr);
    }
    case RiskKind::VaR:
      break;
  }
  throw UnsupportedError("VaR is not coherent; no filter path is provided for it");
}

// ---------------------------------------------------------------------------
// Assembly.

double residual(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x,
                const Eigen::VectorXd& u) {
  const auto succ = pr.system->successor_set(x, u);
  std::vector<double> v(succ.size()), p(succ.size());
  for (std::size_t j = 0; j < succ.size(); ++j) {
    v[j] = h.evaluate(succ[j].state);
    p[j] = succ[j].probability;
  }
  return evaluate(ScalarRandomVariable(std::move(v), std::move(p)), pr.risk) - rhs;
}

FilterSolution finish(const FilterProblem& pr, const Eigen::VectorXd& x, const AffineResult& res,
                      FilterStatus ok_status) {
  FilterSolution sol;
  sol.u_star = res.u;
  sol.objective = objective(res.u, pr.u_des);
  sol.risk_residual = certify(pr, x, res.u);
  sol.status = res.relaxed ? FilterStatus::RelaxedInfeasible : ok_status;
  sol.diagnostics.path = res.path;
  sol.diagnostics.iterations = res.iterations;
  sol.diagnostics.kkt_residual = res.kkt;
  sol.diagnostics.slack = res.slack;
  sol.diagnostics.zeta = res.zeta;
  if (sol.certified() && sol.risk_residual < -pr.tol.constraint) {
    sol.status = FilterStatus::RelaxedInfeasible;
    sol.diagnostics.slack = -sol.risk_residual;
    sol.diagnostics.note = "certification shortfall";
  }
  return sol;
}

std::optional<FilterSolution> inactive(const FilterProblem& pr, const BarrierSpec& h, double rhs,
                                       const Eigen::VectorXd& x) {
  const Eigen::VectorXd u0 = clamp(pr.u_des, pr.u_lo, pr.u_hi);
  if (residual(pr, h, rhs, x, u0) < 0.0) return std::nullopt;
  AffineResult res;
  res.ok = true;
  res.u = u0;
  res.path = "inactive";
  return finish(pr, x, res, FilterStatus::Optimal);
}

void require_kind(const FilterProblem& pr, RiskKind kind, const char* who) {
  if (pr.risk.kind != kind) {
    throw ParameterError(fmt::format("{} called with risk {}", who, pr.risk.label()));
  }
}

struct Timer {
  Clock::time_point start = Clock::now();
  double us() const { return std::chrono::duration<double, std::micro>(Clock::now() - start).count(); }
};

FilterSolution affine_path(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x) {
  if (auto quick = inactive(pr, h, rhs, x)) return *quick;
  const auto program = make_program(pr, rhs, affine_outcomes(*pr.system, h, x));
  return finish(pr, x, solve_affine(program), FilterStatus::Optimal);
}

// Outcome pieces linearized at u_k: for each outcome and each (convex) part,
// h(x+) + grad h(x+)' g (u - u_k).
std::vector<Outcome> linearize(const FilterProblem& pr, const BarrierSpec& h, const std::vector<AffineParts>& parts,
                               const Eigen::VectorXd& u_k) {
  std::vector<const BarrierSpec*> pieces;
  if (const auto* mc = std::get_if<MinComposite>(&h.variant())) {
    for (const auto& p : mc->parts) pieces.push_back(&p);
  } else {
    pieces.push_back(&h);
  }
  std::vector<Outcome> out;
  out.reserve(parts.size());
  for (const auto& ap : parts) {
    const Eigen::VectorXd xp = ap.drift + ap.input_gain * u_k;
    Outcome o{Eigen::VectorXd(pieces.size()), Eigen::MatrixXd(pieces.size(), pr.u_lo.size())};
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const Eigen::RowVectorXd slope = pieces[i]->gradient(xp).transpose() * ap.input_gain;
      o.a(i) = pieces[i]->evaluate(xp) - slope.dot(u_k);
      o.b.row(i) = slope;
    }
    out.push_back(std::move(o));
  }
  return out;
}

struct DccpRun {
  bool ok = false;
  Eigen::VectorXd u;
  int iterations = 0;
  double zeta = 0.0;
  int tightenings = 0;
};

DccpRun dccp_from(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x,
                  const std::vector<AffineParts>& parts, const Eigen::VectorXd& start) {
  DccpRun run;
  Eigen::VectorXd u_k = clamp(start, pr.u_lo, pr.u_hi);
  bool accepted = false;
  const double accept = -1e-10 * (1.0 + std::abs(rhs));
  for (int it = 0; it < pr.tol.dccp_max_iterations; ++it) {
    ++run.iterations;
    auto program = make_program(pr, rhs, linearize(pr, h, parts, u_k));
    auto sub = [&]() -> std::optional<AffineResult> {
      if (program.risk.kind == RiskKind::EVaR && program.risk.beta < 1.0) {
        auto r = program.m() == 1 ? solve_evar_scalar(program) : solve_evar_general(program, false);
        if (!r.ok || r.relaxed) return std::nullopt;
        return r;
      }
      if (program.risk.kind == RiskKind::EVaR) program.risk = RiskSpec::expectation();
      auto r = solve_polytopic(program, false);
      if (!r.ok) return std::nullopt;
      return r;
    };
    auto res = sub();
    if (!res) break;
    Eigen::VectorXd u_new = res->u;
    double gap = residual(pr, h, rhs, x, u_new);
    // Nonconvex parts: the linearization can overestimate, so tighten the
    // right-hand side by the shortfall until the true constraint holds.
    for (int k = 0; k < 20 && gap < accept; ++k) {
      program.rhs += -gap + 1e-9 * (1.0 + std::abs(rhs));
      ++run.tightenings;
      res = sub();
      if (!res) break;
      u_new = res->u;
      gap = residual(pr, h, rhs, x, u_new);
    }
    if (gap < accept) {
      if (!accepted) return run;
      // Backtrack toward the last accepted iterate.
      bool found = false;
      for (double s = 0.5; s > 1e-6; s *= 0.5) {
        const Eigen::VectorXd trial = u_k + s * (u_new - u_k);
        if (residual(pr, h, rhs, x, trial) >= accept) {
          u_new = trial;
          found = true;
          break;
        }
      }
      if (!found) break;
    }
    const double step = (u_new - u_k).norm();
    u_k = u_new;
    run.zeta = res ? res->zeta : 0.0;
    accepted = true;
    if (step <= pr.tol.dccp_step) break;
  }
  run.ok = accepted;
  run.u = u_k;
  return run;
}

std::vector<Eigen::VectorXd> latin_hypercube(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, int count) {
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::VectorXd> pts(count, Eigen::VectorXd(lo.size()));
  for (Eigen::Index d = 0; d < lo.size(); ++d) {
    std::vector<int> perm(count);
    for (int i = 0; i < count; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < count; ++i) {
      const double frac = (perm[i] + unit(rng)) / count;
      pts[i](d) = lo(d) + frac * (hi(d) - lo(d));
    }
  }
  return pts;
}

FilterSolution dccp_path(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& u_init, bool fast_path) {
  if (fast_path) {
    if (auto quick = inactive(pr, h, rhs, x)) return *quick;
  }
  std::vector<AffineParts> parts;
  for (const auto& w : pr.system->disturbance().support()) parts.push_back(pr.system->affine_parts(x, w));

  auto best = dccp_from(pr, h, rhs, x, parts, u_init);
  int restarts = 0;
  if (!best.ok) {
    for (const auto& start : latin_hypercube(pr.u_lo, pr.u_hi, pr.tol.dccp_restarts)) {
      ++restarts;
      auto run = dccp_from(pr, h, rhs, x, parts, start);
      best.iterations += run.iterations;
      if (run.ok && (!best.ok || objective(run.u, pr.u_des) < objective(best.u, pr.u_des))) {
        const int iters = best.iterations;
        best = run;
        best.iterations = iters;
      }
    }
  }
  AffineResult res;
  res.path = "dccp";
  res.iterations = best.iterations;
  res.zeta = best.zeta;
  if (best.ok) {
    res.ok = true;
    res.u = best.u;
  } else {
    // Relaxation around clamp(u_des): the linearized program with a slack.
    const Eigen::VectorXd u0 = clamp(pr.u_des, pr.u_lo, pr.u_hi);
    auto program = make_program(pr, rhs, linearize(pr, h, parts, u0));
    res = solve_affine(program);
    res.path = "dccp";
    res.relaxed = true;
    res.slack = std::max(res.slack, -residual(pr, h, rhs, x, res.u));
  }
  auto sol = finish(pr, x, res, FilterStatus::LocallyOptimal);
  sol.diagnostics.restarts = restarts;
  if (best.tightenings > 0) sol.diagnostics.note = fmt::format("rhs tightened {} times", best.tightenings);
  return sol;
}

// One input, barrier not convex in x: the linearization in DCCP is no longer
// a minorant, so the exact residual is scanned instead. Successor drift and
// gain are formed once; each residual evaluation is then |W| axpys.
class ScalarResidual {
 public:
  ScalarResidual(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x)
      : h_(h), risk_(pr.risk), rhs_(rhs), pmf_(pmf_of(*pr.system)) {
    for (const auto& w : pr.system->disturbance().support()) {
      auto parts = pr.system->affine_parts(x, w);
      drift_.push_back(std::move(parts.drift));
      gain_.push_back(parts.input_gain.col(0));
    }
    values_.resize(pmf_.size());
  }

  double operator()(double u) {
    ++evaluations;
    for (std::size_t j = 0; j < values_.size(); ++j) values_[j] = h_.evaluate(drift_[j] + gain_[j] * u);
    return evaluate(ScalarRandomVariable(values_, pmf_), risk_) - rhs_;
  }

  int evaluations = 0;

 private:
  const BarrierSpec& h_;
  RiskSpec risk_;
  double rhs_;
  std::vector<double> pmf_;
  std::vector<Eigen::VectorXd> drift_;
  std::vector<Eigen::VectorXd> gain_;
  std::vector<double> values_;
};

FilterSolution scalar_search_path(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x) {
  if (auto quick = inactive(pr, h, rhs, x)) return *quick;
  constexpr int kGrid = 201;
  constexpr int kBisect = 60;
  ScalarResidual r(pr, h, rhs, x);
  const double lo = pr.u_lo(0);
  const double hi = pr.u_hi(0);
  const double ud = std::clamp(pr.u_des(0), lo, hi);
  std::vector<double> grid(kGrid), res(kGrid);
  for (int k = 0; k < kGrid; ++k) {
    grid[k] = k + 1 == kGrid ? hi : lo + (hi - lo) * k / (kGrid - 1);
    res[k] = r(grid[k]);
  }
  // Shrinks [bad, good] onto the feasibility boundary, returning a feasible end.
  auto boundary = [&](double bad, double good) {
    for (int it = 0; it < kBisect; ++it) {
      const double mid = 0.5 * (bad + good);
      (r(mid) >= 0.0 ? good : bad) = mid;
    }
    return good;
  };

  AffineResult out;
  out.path = "scalar_search";
  double best_obj = kInf;
  for (int k = 0; k < kGrid;) {
    if (res[k] < 0.0) {
      ++k;
      continue;
    }
    int e = k;
    while (e + 1 < kGrid && res[e + 1] >= 0.0) ++e;
    const double a = k == 0 ? grid[0] : boundary(grid[k - 1], grid[k]);
    const double b = e == kGrid - 1 ? grid[e] : boundary(grid[e + 1], grid[e]);
    // ud inside (a, b) would have been caught by the inactive check unless a
    // grid gap hides an infeasible pocket, so re-check the projection.
    double cand = std::clamp(ud, a, b);
    if (r(cand) < 0.0) cand = std::abs(a - ud) <= std::abs(b - ud) ? a : b;
    const double obj = (cand - ud) * (cand - ud);
    if (obj < best_obj) {
      best_obj = obj;
      out.u = Eigen::VectorXd::Constant(1, cand);
      out.ok = true;
    }
    k = e + 1;
  }
  if (!out.ok) {
    // Exact slack model: min (u - u_des)^2 + penalty * max(0, -residual)^2.
    auto phi = [&](double u, double rv) {
      const double s = std::max(0.0, -rv);
      return (u - pr.u_des(0)) * (u - pr.u_des(0)) + pr.tol.slack_penalty * s * s;
    };
    int kb = 0;
    for (int k = 1; k < kGrid; ++k) {
      if (phi(grid[k], res[k]) < phi(grid[kb], res[kb])) kb = k;
    }
    double a = grid[std::max(kb - 1, 0)];
    double b = grid[std::min(kb + 1, kGrid - 1)];
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = phi(c, r(c)), fd = phi(d, r(d));
    for (int it = 0; it < 80 && b - a > 1e-12; ++it) {
      if (fc <= fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - g * (b - a);
        fc = phi(c, r(c));
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + g * (b - a);
        fd = phi(d, r(d));
      }
    }
    double u = 0.5 * (a + b);
    if (phi(grid[kb], res[kb]) < phi(u, r(u))) u = grid[kb];
    out.ok = true;
    out.relaxed = true;
    out.u = Eigen::VectorXd::Constant(1, u);
    out.slack = std::max(0.0, -r(u));
  }
  out.iterations = r.evaluations;
  return finish(pr, x, out, FilterStatus::LocallyOptimal);
}

bool affine_barrier(const BarrierSpec& h) {
  return std::holds_alternative<AffineBarrier>(h.variant()) || h.as_min_of_affine() != nullptr;
}

FilterSolution dispatch(const FilterProblem& pr, const BarrierSpec& h, double rhs, const Eigen::VectorXd& x) {
  if (affine_barrier(h)) return affine_path(pr, h, rhs, x);
  if (const auto* mx = std::get_if<MaxComposite>(&h.variant())) {
    std::optional<FilterSolution> best;
    for (const auto& part : mx->parts) {
      auto sol = dispatch(pr, part, rhs, x);
      const auto rank = [](const FilterSolution& s) { return s.certified() ? 0 : 1; };
      if (!best || rank(sol) < rank(*best) ||
          (rank(sol) == rank(*best) && (sol.certified() ? sol.objective < best->objective
                                                        : sol.diagnostics.slack < best->diagnostics.slack))) {
        best = std::move(sol);
      }
    }
    best->diagnostics.path = "max_branch/" + best->diagnostics.path;
    best->diagnostics.note = "sufficient condition: one branch enforced";
    return *best;
  }
  if (pr.u_lo.size() == 1 && !h.is_convex()) return scalar_search_path(pr, h, rhs, x);
  return dccp_path(pr, h, rhs, x, clamp(pr.u_des, pr.u_lo, pr.u_hi), true);
}

void require_affine_system(const FilterProblem& pr) {
  if (pr.system->tag() == StructureTag::General) {
    throw UnsupportedError(fmt::format("system '{}' has general dynamics; the filter needs a control-affine model",
                                       pr.system->name()));
  }
  if (pr.risk.kind == RiskKind::VaR) {
    throw UnsupportedError("VaR is not coherent; no filter path is provided for it");
  }
}

}  // namespace

const char* to_string(FilterStatus status) {
  switch (status) {
    case FilterStatus::Optimal:
      return "optimal";
    case FilterStatus::LocallyOptimal:
      return "locally_optimal";
    case FilterStatus::RelaxedInfeasible:
      return "relaxed_infeasible";
    case FilterStatus::Failed:
      return "failed";
  }
  return "?";
}

void FilterProblem::validate() const {
  if (!system) throw ParameterError("filter problem has no system");
  const Eigen::Index m = system->control_dim();
  if (u_lo.size() != m || u_hi.size() != m || u_des.size() != m) {
    throw DimensionError(fmt::format("control bounds and u_des must have {} entries", m));
  }
  if ((u_lo.array() > u_hi.array()).any()) throw ParameterError("u_lo exceeds u_hi");
  if (!u_lo.allFinite() || !u_hi.allFinite() || !u_des.allFinite()) {
    throw ParameterError("control bounds and u_des must be finite");
  }
  risk.validate();
  decay.validate();
}

double FilterProblem::rhs(const Eigen::VectorXd& x) const { return decay.rhs(barrier.evaluate(x)); }

AffineOutcomeCoeffs affine_outcome_coeffs(const StochasticSystem& system, const BarrierSpec& barrier,
                                          const Eigen::VectorXd& x) {
  if (!std::holds_alternative<AffineBarrier>(barrier.variant())) {
    throw UnsupportedError(fmt::format("affine_outcome_coeffs needs an affine barrier, got '{}'", barrier.describe()));
  }
  const auto outcomes = affine_outcomes(system, barrier, x);
  AffineOutcomeCoeffs c{Eigen::VectorXd(outcomes.size()), Eigen::MatrixXd(outcomes.size(), system.control_dim())};
  for (std::size_t j = 0; j < outcomes.size(); ++j) {
    c.a(j) = outcomes[j].a(0);
    c.b.row(j) = outcomes[j].b.row(0);
  }
  return c;
}

double certify(const FilterProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
  if (u.size() != problem.u_lo.size()) throw DimensionError("certify: control has the wrong size");
  if ((u.array() < problem.u_lo.array() - 1e-9).any() || (u.array() > problem.u_hi.array() + 1e-9).any()) {
    throw PreconditionError("certify: control outside bounds");
  }
  return residual(problem, problem.barrier, problem.rhs(x), x, u);
}

FilterSolution solve_expectation_qp(const FilterProblem& problem, const Eigen::VectorXd& x) {
  Timer timer;
  problem.validate();
  require_kind(problem, RiskKind::Expectation, "solve_expectation_qp");
  require_affine_system(problem);
  auto sol = affine_path(problem, problem.barrier, problem.rhs(x), x);
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

FilterSolution solve_cvar_qp(const FilterProblem& problem, const Eigen::VectorXd& x) {
  Timer timer;
  problem.validate();
  require_kind(problem, RiskKind::CVaR, "solve_cvar_qp");
  require_affine_system(problem);
  auto sol = affine_path(problem, problem.barrier, problem.rhs(x), x);
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

FilterSolution solve_evar(const FilterProblem& problem, const Eigen::VectorXd& x) {
  Timer timer;
  problem.validate();
  require_kind(problem, RiskKind::EVaR, "solve_evar");
  require_affine_system(problem);
  auto sol = affine_path(problem, problem.barrier, problem.rhs(x), x);
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

FilterSolution solve_evar_at_zeta(const FilterProblem& problem, const Eigen::VectorXd& x, double zeta) {
  Timer timer;
  problem.validate();
  require_kind(problem, RiskKind::EVaR, "solve_evar_at_zeta");
  require_affine_system(problem);
  if (!(zeta > 0.0) || !std::isfinite(zeta)) throw ParameterError("zeta must be positive and finite");
  const auto program = make_program(problem, problem.rhs(x), affine_outcomes(*problem.system, problem.barrier, x));
  const auto res = solve_evar_fixed(program, zeta);
  FilterSolution sol;
  if (res.ok) {
    sol = finish(problem, x, res, FilterStatus::Optimal);
  } else {
    sol.u_star = clamp(problem.u_des, problem.u_lo, problem.u_hi);
    sol.objective = objective(sol.u_star, problem.u_des);
    sol.risk_residual = certify(problem, x, sol.u_star);
    sol.status = FilterStatus::Failed;
    sol.diagnostics.path = res.path;
    sol.diagnostics.iterations = res.iterations;
    sol.diagnostics.note = "no control satisfies the constraint at this zeta";
  }
  sol.diagnostics.zeta = zeta;
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

FilterSolution solve_dccp(const FilterProblem& problem, const Eigen::VectorXd& x, const Eigen::VectorXd& u_init) {
  Timer timer;
  problem.validate();
  require_affine_system(problem);
  if (u_init.size() != problem.u_lo.size()) throw DimensionError("solve_dccp: u_init has the wrong size");
  auto sol = dccp_path(problem, problem.barrier, problem.rhs(x), x, u_init, false);
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

FilterSolution solve(const FilterProblem& problem, const Eigen::VectorXd& x) {
  Timer timer;
  problem.validate();
  require_affine_system(problem);
  if (x.size() != problem.system->state_dim()) throw DimensionError("solve: state has the wrong size");
  auto sol = dispatch(problem, problem.barrier, problem.rhs(x), x);
  sol.diagnostics.wall_time_us = timer.us();
  return sol;
}

}  // namespace rcbf
