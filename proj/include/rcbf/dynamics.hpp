#pragma once

#include <functional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace rcbf {

/// Finite disturbance support with its probability mass function.
class DisturbanceModel {
 public:
  DisturbanceModel(std::vector<Eigen::VectorXd> support, std::vector<double> pmf);

  std::size_t size() const { return support_.size(); }
  Eigen::Index dimension() const { return support_.front().size(); }
  const std::vector<Eigen::VectorXd>& support() const { return support_; }
  const std::vector<double>& pmf() const { return pmf_; }

 private:
  std::vector<Eigen::VectorXd> support_;
  std::vector<double> pmf_;
};

enum class StructureTag { General, ControlAffine, Linear };

const char* to_string(StructureTag tag);

/// x+ = A(w) x + B(w) u + G(w)
struct LinearModel {
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& w)> A;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& w)> B;
  std::function<Eigen::VectorXd(const Eigen::VectorXd& w)> G;
};

/// x+ = f(x, w) + g(x, w) u
struct ControlAffineModel {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& w)> drift;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd& x, const Eigen::VectorXd& w)> input_gain;
};

/// x+ = step(x, u, w) with no exploitable structure.
struct GeneralModel {
  std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                const Eigen::VectorXd& w)>
      step;
};

struct Successor {
  Eigen::VectorXd state;
  double probability;
};

/// Drift and input gain of a control-affine (or linear) system at one
/// disturbance outcome.
struct AffineParts {
  Eigen::VectorXd drift;
  Eigen::MatrixXd input_gain;
};

/// Discrete-time system driven by an i.i.d. finite disturbance.
///
/// Immutable once built; all member functions are safe to call concurrently.
class StochasticSystem {
 public:
  using Model = std::variant<LinearModel, ControlAffineModel, GeneralModel>;

  StochasticSystem(std::string name, Eigen::Index state_dim, Eigen::Index control_dim,
                   DisturbanceModel disturbance, Model model);

  const std::string& name() const { return name_; }
  Eigen::Index state_dim() const { return n_; }
  Eigen::Index control_dim() const { return m_; }
  const DisturbanceModel& disturbance() const { return disturbance_; }
  StructureTag tag() const;
  const Model& model() const { return model_; }

  Eigen::VectorXd step(const Eigen::VectorXd& x, const Eigen::VectorXd& u, const Eigen::VectorXd& w) const;

  /// One successor per support point, in support order.
  std::vector<Successor> successor_set(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  /// f(x, w_j) and g(x, w_j); throws UnsupportedError for General systems.
  AffineParts affine_parts(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const;

 private:
  void check_dims(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;

  std::string name_;
  Eigen::Index n_;
  Eigen::Index m_;
  DisturbanceModel disturbance_;
  Model model_;
};

/// The two-state linear benchmark with a multiplicative parameter
/// w in {-0.5, 0.5}:  A(w) = [[1, 2+w], [2, 2+w]],  B = [1; 2].
StochasticSystem make_example1();

struct CartPoleParams {
  double cart_mass = 1.0;   // kg
  double pole_mass = 0.1;   // kg
  double pole_length = 0.5; // m
  double gravity = 9.81;    // m/s^2
  double dt = 0.1;          // s

  void validate() const;
};

enum class CartPoleDisturbance {
  /// w in {-0.2, -0.1, 0, 0.1, 0.2}, uniform, added to the angular acceleration.
  AngularAccel5pt,
  /// Additive state noise on (p_x, theta, v_x, theta_dot); see make_cartpole.
  PerStateGrid,
};

CartPoleDisturbance parse_cartpole_disturbance(const std::string& text);

/// Euler-discretized cart-pole, state (p_x, theta, v_x, theta_dot), one force input.
///
/// PerStateGrid places a 5-point grid {-2s, -s, 0, s, 2s} with binomial
/// weights (1,4,6,4,1)/16 on two channel pairs, (p_x, v_x) and
/// (theta, theta_dot), each pair moving together; the product gives 25
/// outcomes. `sigma` lists the four per-state standard deviations.
StochasticSystem make_cartpole(const CartPoleParams& params, CartPoleDisturbance variant,
                               const std::vector<double>& sigma = {0.05, 0.05, 0.2, 0.2});

}  // namespace rcbf
