#include "rcbf/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "rcbf/errors.hpp"

namespace rcbf {

DisturbanceModel::DisturbanceModel(std::vector<Eigen::VectorXd> support, std::vector<double> pmf)
    : support_(std::move(support)), pmf_(std::move(pmf)) {
  if (support_.empty()) throw ParameterError("DisturbanceModel: empty support");
  if (support_.size() != pmf_.size()) throw DimensionError("DisturbanceModel: support/pmf size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (support_[i].size() != support_.front().size()) {
      throw DimensionError("DisturbanceModel: support points differ in dimension");
    }
    if (!(pmf_[i] >= 0.0)) throw ParameterError("DisturbanceModel: negative probability");
    total += pmf_[i];
    for (std::size_t j = 0; j < i; ++j) {
      if (support_[i] == support_[j]) throw ParameterError("DisturbanceModel: duplicate support point");
    }
  }
  if (std::abs(total - 1.0) > 1e-12) throw ParameterError("DisturbanceModel: pmf does not sum to 1");
}

const char* to_string(StructureTag tag) {
  switch (tag) {
    case StructureTag::General:
      return "general";
    case StructureTag::ControlAffine:
      return "control-affine";
    case StructureTag::Linear:
      return "linear";
  }
  return "?";
}

StochasticSystem::StochasticSystem(std::string name, Eigen::Index state_dim, Eigen::Index control_dim,
                                   DisturbanceModel disturbance, Model model)
    : name_(std::move(name)),
      n_(state_dim),
      m_(control_dim),
      disturbance_(std::move(disturbance)),
      model_(std::move(model)) {
  if (n_ <= 0 || m_ <= 0) throw DimensionError("StochasticSystem: dimensions must be positive");
}

StructureTag StochasticSystem::tag() const {
  if (std::holds_alternative<LinearModel>(model_)) return StructureTag::Linear;
  if (std::holds_alternative<ControlAffineModel>(model_)) return StructureTag::ControlAffine;
  return StructureTag::General;
}

void StochasticSystem::check_dims(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  if (x.size() != n_ || u.size() != m_) {
    throw DimensionError(fmt::format("{}: expected state {} / control {}, got {} / {}", name_, n_, m_,
                                     x.size(), u.size()));
  }
}

Eigen::VectorXd StochasticSystem::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                                       const Eigen::VectorXd& w) const {
  check_dims(x, u);
  return std::visit(
      [&](const auto& m) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, LinearModel>) {
          return m.A(w) * x + m.B(w) * u + m.G(w);
        } else if constexpr (std::is_same_v<T, ControlAffineModel>) {
          return m.drift(x, w) + m.input_gain(x, w) * u;
        } else {
          return m.step(x, u, w);
        }
      },
      model_);
}

std::vector<Successor> StochasticSystem::successor_set(const Eigen::VectorXd& x,
                                                       const Eigen::VectorXd& u) const {
  std::vector<Successor> out;
  out.reserve(disturbance_.size());
  for (std::size_t j = 0; j < disturbance_.size(); ++j) {
    out.push_back({step(x, u, disturbance_.support()[j]), disturbance_.pmf()[j]});
  }
  return out;
}

AffineParts StochasticSystem::affine_parts(const Eigen::VectorXd& x, const Eigen::VectorXd& w) const {
  if (x.size() != n_) throw DimensionError(fmt::format("{}: state has size {}", name_, x.size()));
  if (const auto* lin = std::get_if<LinearModel>(&model_)) {
    return {lin->A(w) * x + lin->G(w), lin->B(w)};
  }
  if (const auto* ca = std::get_if<ControlAffineModel>(&model_)) {
    return {ca->drift(x, w), ca->input_gain(x, w)};
  }
  throw UnsupportedError(fmt::format("{}: general dynamics have no control-affine decomposition", name_));
}

StochasticSystem make_example1() {
  std::vector<Eigen::VectorXd> support{Eigen::VectorXd::Constant(1, -0.5), Eigen::VectorXd::Constant(1, 0.5)};
  LinearModel model;
  model.A = [](const Eigen::VectorXd& w) {
    Eigen::MatrixXd A(2, 2);
    A << 1.0, 2.0 + w(0), 2.0, 2.0 + w(0);
    return A;
  };
  model.B = [](const Eigen::VectorXd&) {
    Eigen::MatrixXd B(2, 1);
    B << 1.0, 2.0;
    return B;
  };
  model.G = [](const Eigen::VectorXd&) { return Eigen::VectorXd::Zero(2).eval(); };
  return {"example1", 2, 1, DisturbanceModel(std::move(support), {0.5, 0.5}), std::move(model)};
}

void CartPoleParams::validate() const {
  if (!(cart_mass > 0 && pole_mass > 0 && pole_length > 0 && gravity > 0 && dt > 0)) {
    throw ParameterError("CartPoleParams: all parameters must be positive");
  }
}

CartPoleDisturbance parse_cartpole_disturbance(const std::string& text) {
  if (text == "angular_accel_5pt") return CartPoleDisturbance::AngularAccel5pt;
  if (text == "per_state_grid") return CartPoleDisturbance::PerStateGrid;
  throw ParameterError(fmt::format("unknown cart-pole disturbance variant '{}'", text));
}

namespace {

// 5-point binomial approximation of a standard normal.
constexpr double kGridNodes[5] = {-2.0, -1.0, 0.0, 1.0, 2.0};
constexpr double kGridWeights[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

DisturbanceModel per_state_grid(const std::vector<double>& sigma) {
  if (sigma.size() != 4) throw DimensionError("cart-pole sigma must have four entries");
  for (double s : sigma) {
    if (!(s >= 0.0)) throw ParameterError("cart-pole sigma must be nonnegative");
  }
  // Channel pairs (p_x, v_x) and (theta, theta_dot).
  const bool translate = sigma[0] > 0.0 || sigma[2] > 0.0;
  const bool rotate = sigma[1] > 0.0 || sigma[3] > 0.0;
  const int nt = translate ? 5 : 1;
  const int nr = rotate ? 5 : 1;
  std::vector<Eigen::VectorXd> support;
  std::vector<double> pmf;
  for (int i = 0; i < nt; ++i) {
    for (int k = 0; k < nr; ++k) {
      const double zt = translate ? kGridNodes[i] : 0.0;
      const double zr = rotate ? kGridNodes[k] : 0.0;
      Eigen::VectorXd w(4);
      w << zt * sigma[0], zr * sigma[1], zt * sigma[2], zr * sigma[3];
      support.push_back(w);
      pmf.push_back((translate ? kGridWeights[i] : 1.0) * (rotate ? kGridWeights[k] : 1.0));
    }
  }
  return {std::move(support), std::move(pmf)};
}

}  // namespace

StochasticSystem make_cartpole(const CartPoleParams& params, CartPoleDisturbance variant,
                               const std::vector<double>& sigma) {
  params.validate();
  const CartPoleParams p = params;

  // Euler step of the unforced dynamics; the force enters affinely below.
  auto drift_nominal = [p](const Eigen::VectorXd& x) {
    const double th = x(1);
    const double thd = x(3);
    const double s = std::sin(th);
    const double c = std::cos(th);
    const double den = p.cart_mass + p.pole_mass * s * s;
    const double acc_x = p.pole_mass * s * (p.pole_length * thd * thd + p.gravity * c) / den;
    const double acc_th = (-p.pole_mass * p.pole_length * thd * thd * c * s -
                           (p.cart_mass + p.pole_mass) * p.gravity * s) /
                          (p.pole_length * den);
    Eigen::VectorXd next = x;
    next(0) += p.dt * x(2);
    next(1) += p.dt * thd;
    next(2) += p.dt * acc_x;
    next(3) += p.dt * acc_th;
    return next;
  };
  auto gain = [p](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    const double s = std::sin(x(1));
    const double den = p.cart_mass + p.pole_mass * s * s;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(4, 1);
    g(2, 0) = p.dt / den;
    g(3, 0) = -p.dt * std::cos(x(1)) / (p.pole_length * den);
    return g;
  };

  ControlAffineModel model;
  model.input_gain = gain;
  if (variant == CartPoleDisturbance::AngularAccel5pt) {
    model.drift = [p, drift_nominal](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
      Eigen::VectorXd next = drift_nominal(x);
      next(3) += p.dt * w(0);
      return next;
    };
    std::vector<Eigen::VectorXd> support;
    for (double v : {-0.2, -0.1, 0.0, 0.1, 0.2}) support.push_back(Eigen::VectorXd::Constant(1, v));
    return {"cartpole", 4, 1, DisturbanceModel(std::move(support), std::vector<double>(5, 0.2)),
            std::move(model)};
  }
  model.drift = [drift_nominal](const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
    return (drift_nominal(x) + w).eval();
  };
  return {"cartpole", 4, 1, per_state_grid(sigma), std::move(model)};
}

}  // namespace rcbf
