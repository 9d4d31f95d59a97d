#include "rcbf/barrier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "rcbf/errors.hpp"

namespace rcbf {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double sgn(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * std::max(1.0, std::abs(x(i)));
    probe(i) = x(i) + h;
    const double fp = f(probe);
    probe(i) = x(i) - h;
    const double fm = f(probe);
    probe(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

void check_state(const Eigen::VectorXd& x, Eigen::Index min_size, const char* who) {
  if (x.size() < min_size) {
    throw DimensionError(fmt::format("{} barrier needs a state of size >= {}, got {}", who, min_size, x.size()));
  }
}

}  // namespace

BarrierSpec::BarrierSpec(Variant v) : v_(std::move(v)) {
  std::visit(overloaded{
                 [](const AffineBarrier& a) {
                   if (a.H.size() == 0 || a.H.isZero(0.0)) throw ParameterError("affine barrier: H must be non-zero");
                 },
                 [](const MinComposite& c) {
                   if (c.parts.empty()) throw ParameterError("min composite: no parts");
                 },
                 [](const MaxComposite& c) {
                   if (c.parts.empty()) throw ParameterError("max composite: no parts");
                 },
                 [](const BrakingBarrier& b) {
                   if (!(b.a_max > 0.0)) throw ParameterError("braking barrier: a_max must be positive");
                 },
                 [](const CustomBarrier& c) {
                   if (!c.h) throw ParameterError("custom barrier: missing function");
                 },
                 [](const CartPoleAngleBarrier&) {},
             },
             v_);
}

BarrierSpec BarrierSpec::affine(Eigen::RowVectorXd H, double l) { return BarrierSpec(AffineBarrier{std::move(H), l}); }

BarrierSpec BarrierSpec::min_of(std::vector<BarrierSpec> parts) { return BarrierSpec(MinComposite{std::move(parts)}); }

BarrierSpec BarrierSpec::max_of(std::vector<BarrierSpec> parts) { return BarrierSpec(MaxComposite{std::move(parts)}); }

std::string BarrierSpec::describe() const {
  return std::visit(overloaded{
                        [](const AffineBarrier&) -> std::string { return "affine"; },
                        [](const CartPoleAngleBarrier&) -> std::string { return "cartpole_angle"; },
                        [](const BrakingBarrier&) -> std::string { return "braking"; },
                        [](const MinComposite& c) -> std::string {
                          return fmt::format("min_composite[{}]", c.parts.size());
                        },
                        [](const MaxComposite& c) -> std::string {
                          return fmt::format("max_composite[{}]", c.parts.size());
                        },
                        [](const CustomBarrier& c) -> std::string { return c.name; },
                    },
                    v_);
}

double BarrierSpec::evaluate(const Eigen::VectorXd& x) const {
  return std::visit(overloaded{
                        [&](const AffineBarrier& a) {
                          if (a.H.size() != x.size()) {
                            throw DimensionError(fmt::format("affine barrier: H has {} entries, state {}",
                                                             a.H.size(), x.size()));
                          }
                          return a.H.dot(x) + a.l;
                        },
                        [&](const CartPoleAngleBarrier& b) {
                          check_state(x, 2, "cart-pole angle");
                          const double d = x(1) - b.theta0;
                          return d * d - b.C;
                        },
                        [&](const BrakingBarrier& b) {
                          check_state(x, 3, "braking");
                          return -2.0 * b.a_max * x(0) - x(2) * x(2) * sgn(x(2));
                        },
                        [&](const MinComposite& c) {
                          double v = std::numeric_limits<double>::infinity();
                          for (const auto& part : c.parts) v = std::min(v, part.evaluate(x));
                          return v;
                        },
                        [&](const MaxComposite& c) {
                          double v = -std::numeric_limits<double>::infinity();
                          for (const auto& part : c.parts) v = std::max(v, part.evaluate(x));
                          return v;
                        },
                        [&](const CustomBarrier& c) { return c.h(x); },
                    },
                    v_);
}

Eigen::VectorXd BarrierSpec::gradient(const Eigen::VectorXd& x) const {
  return std::visit(
      overloaded{
          [&](const AffineBarrier& a) -> Eigen::VectorXd { return a.H.transpose(); },
          [&](const CartPoleAngleBarrier& b) -> Eigen::VectorXd {
            check_state(x, 2, "cart-pole angle");
            Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
            g(1) = 2.0 * (x(1) - b.theta0);
            return g;
          },
          [&](const BrakingBarrier& b) -> Eigen::VectorXd {
            check_state(x, 3, "braking");
            Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
            g(0) = -2.0 * b.a_max;
            g(2) = -2.0 * std::abs(x(2));
            return g;
          },
          // Composites: gradient of the active part (first one on ties).
          [&](const MinComposite& c) -> Eigen::VectorXd {
            std::size_t arg = 0;
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < c.parts.size(); ++i) {
              const double v = c.parts[i].evaluate(x);
              if (v < best) {
                best = v;
                arg = i;
              }
            }
            return c.parts[arg].gradient(x);
          },
          [&](const MaxComposite& c) -> Eigen::VectorXd {
            std::size_t arg = 0;
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < c.parts.size(); ++i) {
              const double v = c.parts[i].evaluate(x);
              if (v > best) {
                best = v;
                arg = i;
              }
            }
            return c.parts[arg].gradient(x);
          },
          [&](const CustomBarrier& c) -> Eigen::VectorXd {
            return c.gradient ? c.gradient(x) : central_difference(c.h, x);
          },
      },
      v_);
}

bool BarrierSpec::is_affine() const {
  if (std::holds_alternative<AffineBarrier>(v_)) return true;
  if (const auto* c = std::get_if<MinComposite>(&v_); c && c->parts.size() == 1) return c->parts[0].is_affine();
  if (const auto* c = std::get_if<MaxComposite>(&v_); c && c->parts.size() == 1) return c->parts[0].is_affine();
  return false;
}

bool BarrierSpec::is_convex() const {
  return std::visit(overloaded{
                        [](const AffineBarrier&) { return true; },
                        [](const CartPoleAngleBarrier&) { return true; },
                        [](const BrakingBarrier&) { return false; },
                        [](const MinComposite& c) { return c.parts.size() == 1 && c.parts[0].is_convex(); },
                        [](const MaxComposite& c) {
                          return std::all_of(c.parts.begin(), c.parts.end(),
                                             [](const BarrierSpec& p) { return p.is_convex(); });
                        },
                        [](const CustomBarrier& c) { return c.convex; },
                    },
                    v_);
}

const MinComposite* BarrierSpec::as_min_of_affine() const {
  const auto* c = std::get_if<MinComposite>(&v_);
  if (c == nullptr) return nullptr;
  for (const auto& part : c->parts) {
    if (!std::holds_alternative<AffineBarrier>(part.variant())) return nullptr;
  }
  return c;
}

ClassK::ClassK(double constant) : constant_(constant), name_(fmt::format("{:g}", constant)) {}

ClassK::ClassK(std::function<double(double)> fn, std::string name) : fn_(std::move(fn)), name_(std::move(name)) {
  if (!fn_) throw ParameterError("ClassK: empty function");
}

double ClassK::operator()(double r) const { return fn_ ? fn_(r) : constant_ * r; }

double DecaySpec::rhs(double h_now) const {
  if (mode == DecayMode::Safety) return alpha(h_now);
  return gamma * h_now + eps * (1.0 - gamma);
}

void DecaySpec::validate() const {
  if (mode == DecayMode::Reach) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError(fmt::format("gamma = {} is outside (0, 1)", gamma));
    if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError(fmt::format("eps = {} must be positive", eps));
    return;
  }
  if (alpha.is_constant()) {
    if (!(alpha.constant() > 0.0 && alpha.constant() < 1.0)) {
      throw ParameterError(fmt::format("constant alpha = {} is outside (0, 1)", alpha.constant()));
    }
    return;
  }
  std::vector<double> samples;
  for (int k = 0; k <= 90; ++k) samples.push_back(std::pow(10.0, -6.0 + 0.1 * k));
  verify_alpha(alpha, samples);
}

double reach_time_bound(double eps, double gamma, double h0) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ParameterError(fmt::format("eps = {} must be positive", eps));
  if (!(gamma > 0.0 && gamma < 1.0)) throw ParameterError(fmt::format("gamma = {} is outside (0, 1)", gamma));
  if (!(h0 < 0.0)) throw PreconditionError(fmt::format("h0 = {} >= 0: already inside set", h0));
  return std::log((eps - h0) / eps) / std::log(1.0 / gamma);
}

AlphaReport verify_alpha(const ClassK& alpha, std::span<const double> samples) {
  if (alpha.is_constant()) {
    const double a = alpha.constant();
    if (!(a > 0.0 && a < 1.0)) throw ParameterError(fmt::format("constant alpha = {} is outside (0, 1)", a));
    return {true, a};
  }
  AlphaReport report{true, 0.0};
  std::vector<double> bad;
  for (double r : samples) {
    if (!(r > 0.0)) throw ParameterError("verify_alpha: samples must be positive");
    const double a = alpha(r);
    if (!(a < r) || !(a >= 0.0)) bad.push_back(r);
    report.delta = std::max(report.delta, a / r);
  }
  if (std::abs(alpha(0.0)) > 1e-12) bad.push_back(0.0);
  if (!bad.empty()) {
    throw ValidationError(fmt::format("alpha '{}' violates 0 <= alpha(r) < r (alpha(0)=0) at r = {}", alpha.name(),
                                      fmt::join(bad, ", ")));
  }
  return report;
}

}  // namespace rcbf
