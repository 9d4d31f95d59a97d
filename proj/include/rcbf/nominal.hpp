#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rcbf {

/// The legacy controller whose output the filter tries to preserve.
class NominalController {
 public:
  enum class Kind { Zero, Affine, Scripted };

  static NominalController zero(Eigen::Index control_dim);
  /// u = K x + k0
  static NominalController affine(Eigen::MatrixXd K, Eigen::VectorXd k0);
  /// u = sequence[t]; the last entry is held past the end.
  static NominalController scripted(std::vector<Eigen::VectorXd> sequence);

  Kind kind() const { return kind_; }
  Eigen::Index control_dim() const { return m_; }
  std::string describe() const;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x, std::size_t t) const;

 private:
  Kind kind_ = Kind::Zero;
  Eigen::Index m_ = 0;
  Eigen::MatrixXd K_;
  Eigen::VectorXd k0_;
  std::vector<Eigen::VectorXd> sequence_;
};

}  // namespace rcbf
