#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace rcbf {

class BarrierSpec;

/// h(x) = H x + l
struct AffineBarrier {
  Eigen::RowVectorXd H;
  double l = 0.0;
};

/// h(x) = (theta - theta0)^2 - C on the cart-pole state.
struct CartPoleAngleBarrier {
  double theta0 = 0.0;
  double C = 0.0;
};

/// h(x) = -2 a_max p_x - v_x^2 sgn(v_x), with sgn(0) = 0.
struct BrakingBarrier {
  double a_max = 1.0;
};

/// Conjunction of safe sets: h = min_i h_i.
struct MinComposite {
  std::vector<BarrierSpec> parts;
};

/// Disjunction of safe sets: h = max_i h_i.
struct MaxComposite {
  std::vector<BarrierSpec> parts;
};

/// User-supplied barrier. Without a gradient, central differences are used.
struct CustomBarrier {
  std::function<double(const Eigen::VectorXd&)> h;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;
  bool convex = false;
  std::string name = "custom";
};

/// A barrier function h with safe set {x | h(x) >= 0}.
class BarrierSpec {
 public:
  using Variant = std::variant<AffineBarrier, CartPoleAngleBarrier, BrakingBarrier, MinComposite,
                               MaxComposite, CustomBarrier>;

  BarrierSpec(Variant v);

  static BarrierSpec affine(Eigen::RowVectorXd H, double l);
  static BarrierSpec min_of(std::vector<BarrierSpec> parts);
  static BarrierSpec max_of(std::vector<BarrierSpec> parts);

  const Variant& variant() const { return v_; }
  std::string describe() const;

  double evaluate(const Eigen::VectorXd& x) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const;
  bool contains(const Eigen::VectorXd& x) const { return evaluate(x) >= 0.0; }

  bool is_affine() const;
  /// True when h is convex in x (affine, angle, convex custom, or a max of convex parts).
  bool is_convex() const;
  /// Non-null when this is a MinComposite whose parts are all affine.
  const MinComposite* as_min_of_affine() const;

 private:
  Variant v_;
};

/// A class-K decay rate: either a constant in (0,1) or a user function.
class ClassK {
 public:
  ClassK(double constant);
  ClassK(std::function<double(double)> fn, std::string name = "alpha");

  double operator()(double r) const;
  bool is_constant() const { return fn_ == nullptr; }
  double constant() const { return constant_; }
  const std::string& name() const { return name_; }

 private:
  double constant_ = 0.0;
  std::function<double(double)> fn_;
  std::string name_;
};

enum class DecayMode { Safety, Reach };

/// Right-hand side of the one-step barrier condition.
struct DecaySpec {
  DecayMode mode = DecayMode::Safety;
  ClassK alpha{0.9};
  double gamma = 0.9;
  double eps = 1.0;

  static DecaySpec safety(ClassK alpha) { return {DecayMode::Safety, std::move(alpha), 0.9, 1.0}; }
  static DecaySpec reach(double gamma, double eps) { return {DecayMode::Reach, ClassK{0.9}, gamma, eps}; }

  /// alpha(h) for Safety, gamma h + eps (1 - gamma) for Reach.
  double rhs(double h_now) const;
  void validate() const;
};

/// Upper bound on the first time the nested risk of h becomes nonnegative:
/// log((eps - h0) / eps) / log(1 / gamma).
double reach_time_bound(double eps, double gamma, double h0);

struct AlphaReport {
  bool passed = false;
  double delta = 0.0;  // tightest alpha(r) <= delta r over the samples
};

/// Checks alpha(r) < r on every sample; throws ValidationError listing the
/// offending samples, ParameterError for a constant outside (0,1).
AlphaReport verify_alpha(const ClassK& alpha, std::span<const double> samples);

}  // namespace rcbf
