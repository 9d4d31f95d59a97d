#include "rcbf/nominal.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "rcbf/errors.hpp"

namespace rcbf {

NominalController NominalController::zero(Eigen::Index control_dim) {
  if (control_dim < 1) throw DimensionError("nominal controller: control dimension must be positive");
  NominalController c;
  c.kind_ = Kind::Zero;
  c.m_ = control_dim;
  return c;
}

NominalController NominalController::affine(Eigen::MatrixXd K, Eigen::VectorXd k0) {
  if (K.rows() < 1 || K.rows() != k0.size()) {
    throw DimensionError(fmt::format("nominal controller: K is {}x{} but k0 has {} entries", K.rows(), K.cols(),
                                     k0.size()));
  }
  if (!K.allFinite() || !k0.allFinite()) throw ParameterError("nominal controller: non-finite gain");
  NominalController c;
  c.kind_ = Kind::Affine;
  c.m_ = K.rows();
  c.K_ = std::move(K);
  c.k0_ = std::move(k0);
  return c;
}

NominalController NominalController::scripted(std::vector<Eigen::VectorXd> sequence) {
  if (sequence.empty()) throw ParameterError("nominal controller: empty script");
  for (const auto& u : sequence) {
    if (u.size() != sequence.front().size()) throw DimensionError("nominal controller: ragged script");
    if (!u.allFinite()) throw ParameterError("nominal controller: non-finite script entry");
  }
  NominalController c;
  c.kind_ = Kind::Scripted;
  c.m_ = sequence.front().size();
  c.sequence_ = std::move(sequence);
  return c;
}

std::string NominalController::describe() const {
  switch (kind_) {
    case Kind::Zero:
      return "zero";
    case Kind::Affine:
      return "affine";
    case Kind::Scripted:
      return fmt::format("scripted[{}]", sequence_.size());
  }
  return "?";
}

Eigen::VectorXd NominalController::operator()(const Eigen::VectorXd& x, std::size_t t) const {
  switch (kind_) {
    case Kind::Zero:
      return Eigen::VectorXd::Zero(m_);
    case Kind::Affine:
      if (x.size() != K_.cols()) {
        throw DimensionError(fmt::format("nominal controller: K expects {} states, got {}", K_.cols(), x.size()));
      }
      return K_ * x + k0_;
    case Kind::Scripted:
      return sequence_[std::min(t, sequence_.size() - 1)];
  }
  return {};
}

}  // namespace rcbf
