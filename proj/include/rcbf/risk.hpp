#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rcbf {

/// A real-valued random variable with finite support.
///
/// Outcomes are stored in the order given; probabilities must be nonnegative
/// and sum to one within 1e-12.
class ScalarRandomVariable {
 public:
  ScalarRandomVariable(std::vector<double> values, std::vector<double> pmf);

  /// Uniform distribution over `values`.
  static ScalarRandomVariable uniform(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::span<const double> pmf() const { return pmf_; }
  double min_value() const;

 private:
  std::vector<double> values_;
  std::vector<double> pmf_;
};

enum class RiskKind { Expectation, VaR, CVaR, EVaR };

const char* to_string(RiskKind kind);
RiskKind parse_risk_kind(const std::string& text);

/// Which risk measure to apply and at what confidence level.
///
/// All measures use the acceptability orientation: larger outcomes are
/// better, rho(h) <= E[h], and beta = 1 recovers the expectation.
struct RiskSpec {
  RiskKind kind = RiskKind::Expectation;
  double beta = 1.0;

  static RiskSpec expectation() { return {RiskKind::Expectation, 1.0}; }
  static RiskSpec var(double beta) { return {RiskKind::VaR, beta}; }
  static RiskSpec cvar(double beta) { return {RiskKind::CVaR, beta}; }
  static RiskSpec evar(double beta) { return {RiskKind::EVaR, beta}; }

  /// Throws ParameterError when beta is outside (0, 1].
  void validate() const;
  std::string label() const;
};

/// Polytope {q | B q <= b} over outcome probabilities.
///
/// Construction verifies by linear programming that the polytope is
/// non-empty and contained in the probability simplex.
class RiskEnvelope {
 public:
  RiskEnvelope(Eigen::MatrixXd B, Eigen::VectorXd b);

  std::size_t dimension() const { return static_cast<std::size_t>(B_.cols()); }
  const Eigen::MatrixXd& B() const { return B_; }
  const Eigen::VectorXd& b() const { return b_; }

  bool contains(const Eigen::VectorXd& q, double tol = 1e-9) const;

 private:
  Eigen::MatrixXd B_;
  Eigen::VectorXd b_;
};

double expectation(const ScalarRandomVariable& rv);

/// sup{zeta | P(h <= zeta) <= beta} over the sorted support, beta in (0,1).
double value_at_risk(const ScalarRandomVariable& rv, double beta);

/// Left-tail conditional value-at-risk by sorting: the mean of the worst
/// beta probability mass, with fractional weight on the boundary outcome.
double cvar(const ScalarRandomVariable& rv, double beta);

/// -min_zeta E[zeta + (-h - zeta)_+ / beta], evaluated exactly at the
/// breakpoints zeta in {-h_i}.
double cvar_via_rockafellar(const ScalarRandomVariable& rv, double beta);

/// Left-tail entropic value-at-risk
///   sup_{zeta>0} -(1/zeta) log( (1/beta) sum_i p_i exp(-zeta h_i) ).
double evar(const ScalarRandomVariable& rv, double beta);

/// The objective of the EVaR supremum at a fixed zeta > 0. Any single zeta
/// gives a lower bound on evar().
double evar_at(const ScalarRandomVariable& rv, double beta, double zeta);

/// Maximizing zeta for evar(); +infinity when the supremum is the limit
/// zeta -> infinity (the minimum outcome).
double evar_argmax(const ScalarRandomVariable& rv, double beta);

/// Dispatches on spec.kind.
double evaluate(const ScalarRandomVariable& rv, const RiskSpec& spec);

/// {q in simplex | 0 <= q_j <= p_j / beta}.
RiskEnvelope cvar_envelope(std::span<const double> pmf, double beta);

/// The point envelope {pmf}.
RiskEnvelope point_envelope(std::span<const double> pmf);

/// min_{q in envelope} sum_i q_i h_i, solved as a linear program.
double envelope_min_expectation(const ScalarRandomVariable& rv, const RiskEnvelope& envelope);

/// Complete |W|-ary scenario tree with a time-invariant edge distribution.
///
/// Leaves are indexed lexicographically by disturbance path: the leaf for
/// path (w_{i0}, ..., w_{i(T-1)}) sits at index sum_k i_k |W|^(T-1-k).
class ScenarioTree {
 public:
  ScenarioTree(std::size_t depth, std::vector<double> edge_pmf, std::vector<double> leaf_values);

  std::size_t depth() const { return depth_; }
  std::size_t branching() const { return edge_pmf_.size(); }
  std::span<const double> edge_pmf() const { return edge_pmf_; }
  std::span<const double> leaf_values() const { return leaf_values_; }

 private:
  std::size_t depth_;
  std::vector<double> edge_pmf_;
  std::vector<double> leaf_values_;
};

/// Backward recursion rho(rho(...rho(h(x^T)))) over the tree.
double nested_risk(const ScenarioTree& tree, const RiskSpec& spec);

}  // namespace rcbf
