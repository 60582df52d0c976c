#pragma once

// Interface for small dense smooth nonlinear programs
//
//   min f(x)  s.t.  c(x) = 0,  G x <= h,  l <= x <= u.
//
// Inequalities other than simple bounds must be linear. This is the shape of
// every optimal control problem in the library: dynamics are the only
// nonlinear constraints.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace platoon::nlp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

class SmoothProblem {
 public:
  virtual ~SmoothProblem() = default;

  [[nodiscard]] virtual int num_variables() const = 0;
  [[nodiscard]] virtual int num_equalities() const = 0;
  [[nodiscard]] virtual const VectorXd& lower_bounds() const = 0;
  [[nodiscard]] virtual const VectorXd& upper_bounds() const = 0;
  [[nodiscard]] virtual const MatrixXd& inequality_matrix() const = 0;
  [[nodiscard]] virtual const VectorXd& inequality_rhs() const = 0;

  [[nodiscard]] virtual double objective(const VectorXd& x) const = 0;
  [[nodiscard]] virtual VectorXd objective_gradient(const VectorXd& x) const = 0;
  [[nodiscard]] virtual VectorXd equalities(const VectorXd& x) const = 0;
  [[nodiscard]] virtual MatrixXd equality_jacobian(const VectorXd& x) const = 0;
  /// Hessian of f(x) + y' c(x).
  [[nodiscard]] virtual MatrixXd lagrangian_hessian(const VectorXd& x, const VectorXd& y) const = 0;

  /// Typical magnitude of each variable; the solver works on x / scaling.
  [[nodiscard]] virtual VectorXd variable_scaling() const { return VectorXd::Ones(num_variables()); }

  /// Equality rows that may be nonlinearly infeasible. The solver relaxes them
  /// with penalized elastic variables to detect infeasibility.
  [[nodiscard]] virtual std::vector<int> elastic_rows() const {
    std::vector<int> rows(static_cast<std::size_t>(num_equalities()));
    for (int i = 0; i < num_equalities(); ++i) rows[static_cast<std::size_t>(i)] = i;
    return rows;
  }
};

/// Primal-dual point in the problem's own units. Multiplier signs follow the
/// Lagrangian f + y'c + w'(Gx - h) - zl'(x - l) + zu'(x - u) with w, zl, zu >= 0.
struct PrimalDual {
  VectorXd x;
  VectorXd y;
  VectorXd w;
  VectorXd z_lower;
  VectorXd z_upper;
};

struct KktError {
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
  double dual_sign = 0.0;

  [[nodiscard]] double max() const { return std::max({stationarity, feasibility, complementarity, dual_sign}); }
};

/// First-order optimality error measured in the problem's own units.
[[nodiscard]] inline KktError kkt_error(const SmoothProblem& prob, const PrimalDual& pd) {
  KktError e;
  const VectorXd& l = prob.lower_bounds();
  const VectorXd& u = prob.upper_bounds();
  const MatrixXd& G = prob.inequality_matrix();
  const VectorXd& h = prob.inequality_rhs();
  VectorXd grad = prob.objective_gradient(pd.x);
  if (prob.num_equalities() > 0) grad += prob.equality_jacobian(pd.x).transpose() * pd.y;
  if (G.rows() > 0) grad += G.transpose() * pd.w;
  grad -= pd.z_lower;
  grad += pd.z_upper;
  e.stationarity = grad.size() ? grad.lpNorm<Eigen::Infinity>() : 0.0;

  double feas = 0.0;
  if (prob.num_equalities() > 0) feas = prob.equalities(pd.x).lpNorm<Eigen::Infinity>();
  double comp = 0.0;
  double sign = 0.0;
  if (G.rows() > 0) {
    const VectorXd slack = h - G * pd.x;
    for (int i = 0; i < slack.size(); ++i) {
      feas = std::max(feas, -slack[i]);
      comp = std::max(comp, std::abs(pd.w[i] * slack[i]));
      sign = std::max(sign, -pd.w[i]);
    }
  }
  for (int i = 0; i < pd.x.size(); ++i) {
    if (std::isfinite(l[i])) {
      feas = std::max(feas, l[i] - pd.x[i]);
      comp = std::max(comp, std::abs(pd.z_lower[i] * (pd.x[i] - l[i])));
    }
    if (std::isfinite(u[i])) {
      feas = std::max(feas, pd.x[i] - u[i]);
      comp = std::max(comp, std::abs(pd.z_upper[i] * (u[i] - pd.x[i])));
    }
    sign = std::max({sign, -pd.z_lower[i], -pd.z_upper[i]});
  }
  e.feasibility = feas;
  e.complementarity = comp;
  e.dual_sign = sign;
  return e;
}

}  // namespace platoon::nlp
