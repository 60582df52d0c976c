#pragma once

// Dense primal-dual interior-point method for SmoothProblem.
//
// Monotone barrier update, exact Hessian with inertia correction from a
// Bunch-Kaufman factorization, l1 merit line search with fraction-to-boundary
// safeguards. Linear inequalities get explicit slacks that are condensed out
// of the Newton system. Selected equality rows are relaxed with nonnegative
// elastic variables under a large linear penalty, so the barrier problem stays
// solvable and a nonzero elastic residual at convergence certifies (local)
// infeasibility.

#include <lapacke.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "platoon/nlp/problem.hpp"

namespace platoon::nlp {

struct IpmOptions {
  int max_iterations = 200;
  double tolerance = 1e-9;             // scaled KKT error for convergence
  double raw_tolerance = 1e-9;         // unscaled KKT error for convergence
  double acceptable_tolerance = 1e-7;  // accepted at the iteration limit
  double feasibility_tolerance = 1e-7;
  double elastic_penalty = 1e6;
  double mu_init = 0.1;
  double mu_min = 1e-11;
  double max_gradient = 100.0;  // objective is scaled down to this initial gradient norm
  std::ostream* trace = nullptr;
};

enum class IpmStatus { converged, infeasible, iteration_limit, numerical_failure };

inline const char* to_string(IpmStatus s) {
  switch (s) {
    case IpmStatus::converged: return "converged";
    case IpmStatus::infeasible: return "infeasible";
    case IpmStatus::iteration_limit: return "iteration_limit";
    case IpmStatus::numerical_failure: return "numerical_failure";
  }
  return "?";
}

struct IpmResult {
  IpmStatus status = IpmStatus::numerical_failure;
  PrimalDual point;
  double objective = kInf;
  double max_elastic = 0.0;
  double scaled_error = kInf;
  int iterations = 0;
};

namespace detail {

/// Symmetric indefinite factorization with inertia, lower triangle stored.
class SymmetricFactor {
 public:
  bool factor(const MatrixXd& K) {
    a_ = K;
    n_ = static_cast<int>(K.rows());
    ipiv_.assign(static_cast<std::size_t>(n_), 0);
    const lapack_int info = LAPACKE_dsytrf(LAPACK_COL_MAJOR, 'L', n_, a_.data(), n_, ipiv_.data());
    if (info < 0) return false;
    pos_ = neg_ = zero_ = 0;
    for (int k = 0; k < n_;) {
      if (ipiv_[static_cast<std::size_t>(k)] > 0) {
        classify(a_(k, k));
        ++k;
      } else {
        const double a = a_(k, k), b = a_(k + 1, k), c = a_(k + 1, k + 1);
        const double det = a * c - b * b;
        if (std::abs(det) <= 1e-300) {
          ++zero_;
          classify(a + c);
        } else if (det < 0) {
          ++pos_;
          ++neg_;
        } else if (a + c > 0) {
          pos_ += 2;
        } else {
          neg_ += 2;
        }
        k += 2;
      }
    }
    return true;
  }

  [[nodiscard]] VectorXd solve(const VectorXd& rhs) const {
    VectorXd x = rhs;
    LAPACKE_dsytrs(LAPACK_COL_MAJOR, 'L', n_, 1, a_.data(), n_, ipiv_.data(), x.data(), n_);
    return x;
  }

  [[nodiscard]] int positive() const { return pos_; }
  [[nodiscard]] int negative() const { return neg_; }
  [[nodiscard]] int zero() const { return zero_; }

 private:
  // Pivots of the Schur complement can be legitimately tiny when the
  // regularization is large, so only numerically vanishing ones count as zero.
  void classify(double d) {
    if (std::abs(d) <= 1e-30) ++zero_;
    else if (d > 0) ++pos_;
    else ++neg_;
  }

  MatrixXd a_;
  std::vector<lapack_int> ipiv_;
  int n_ = 0;
  int pos_ = 0, neg_ = 0, zero_ = 0;
};

/// Scaled problem augmented with elastic variables (e+, e-) per elastic row.
class Augmented {
 public:
  Augmented(const SmoothProblem& p, double penalty) : p_(p), rho_(penalty) {
    n_ = p.num_variables();
    m_ = p.num_equalities();
    rows_ = p.elastic_rows();
    ne_ = static_cast<int>(rows_.size());
    d_ = p.variable_scaling();
    na_ = n_ + 2 * ne_;
    l_.resize(na_);
    u_.resize(na_);
    l_.head(n_) = p.lower_bounds().cwiseQuotient(d_);
    u_.head(n_) = p.upper_bounds().cwiseQuotient(d_);
    l_.tail(2 * ne_).setZero();
    u_.tail(2 * ne_).setConstant(kInf);
    const MatrixXd& G = p.inequality_matrix();
    G_ = MatrixXd::Zero(G.rows(), na_);
    if (G.rows() > 0) G_.leftCols(n_) = G * d_.asDiagonal();
    h_ = p.inequality_rhs();
  }

  [[nodiscard]] int n() const { return na_; }
  [[nodiscard]] int n_orig() const { return n_; }
  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] int num_elastic() const { return ne_; }
  [[nodiscard]] const VectorXd& lower() const { return l_; }
  [[nodiscard]] const VectorXd& upper() const { return u_; }
  [[nodiscard]] const MatrixXd& G() const { return G_; }
  [[nodiscard]] const VectorXd& h() const { return h_; }
  [[nodiscard]] const VectorXd& scaling() const { return d_; }

  [[nodiscard]] VectorXd unscale(const VectorXd& xa) const { return xa.head(n_).cwiseProduct(d_); }

  /// Objective multiplier, chosen so the initial gradient is of moderate size.
  void set_objective_scale(double sf) { sf_ = sf; }
  [[nodiscard]] double objective_scale() const { return sf_; }

  [[nodiscard]] double objective(const VectorXd& xa) const {
    return sf_ * (p_.objective(unscale(xa)) + rho_ * xa.tail(2 * ne_).sum());
  }
  [[nodiscard]] double true_objective(const VectorXd& xa) const { return p_.objective(unscale(xa)); }

  [[nodiscard]] VectorXd gradient(const VectorXd& xa) const {
    VectorXd g(na_);
    g.head(n_) = sf_ * p_.objective_gradient(unscale(xa)).cwiseProduct(d_);
    g.tail(2 * ne_).setConstant(sf_ * rho_);
    return g;
  }

  [[nodiscard]] VectorXd constraints(const VectorXd& xa) const {
    VectorXd c = p_.equalities(unscale(xa));
    for (int k = 0; k < ne_; ++k) c[rows_[static_cast<std::size_t>(k)]] += xa[n_ + k] - xa[n_ + ne_ + k];
    return c;
  }

  [[nodiscard]] MatrixXd jacobian(const VectorXd& xa) const {
    MatrixXd J = MatrixXd::Zero(m_, na_);
    if (m_ > 0) J.leftCols(n_) = p_.equality_jacobian(unscale(xa)) * d_.asDiagonal();
    for (int k = 0; k < ne_; ++k) {
      J(rows_[static_cast<std::size_t>(k)], n_ + k) = 1.0;
      J(rows_[static_cast<std::size_t>(k)], n_ + ne_ + k) = -1.0;
    }
    return J;
  }

  [[nodiscard]] MatrixXd hessian(const VectorXd& xa, const VectorXd& y) const {
    MatrixXd H = MatrixXd::Zero(na_, na_);
    H.topLeftCorner(n_, n_) = sf_ * (d_.asDiagonal() * p_.lagrangian_hessian(unscale(xa), y / sf_) * d_.asDiagonal());
    return H;
  }

  [[nodiscard]] double max_elastic(const VectorXd& xa) const {
    return ne_ ? xa.tail(2 * ne_).cwiseAbs().maxCoeff() : 0.0;
  }

  /// Elastic values that make the relaxed equalities hold at the given x.
  void init_elastic(VectorXd& xa) const {
    const VectorXd c = p_.equalities(unscale(xa));
    for (int k = 0; k < ne_; ++k) {
      const double r = c[rows_[static_cast<std::size_t>(k)]];
      xa[n_ + k] = std::max(-r, 0.0) + 1e-2;
      xa[n_ + ne_ + k] = std::max(r, 0.0) + 1e-2;
    }
  }

 private:
  const SmoothProblem& p_;
  double rho_;
  double sf_ = 1.0;
  int n_ = 0, m_ = 0, ne_ = 0, na_ = 0;
  std::vector<int> rows_;
  VectorXd d_, l_, u_, h_;
  MatrixXd G_;
};

}  // namespace detail

/// Solves the problem from the primal guess x0 (problem units).
[[nodiscard]] inline IpmResult solve_interior_point(const SmoothProblem& prob, const VectorXd& x0,
                                                    const IpmOptions& opt = {}) {
  using detail::Augmented;
  Augmented A(prob, opt.elastic_penalty);
  const int n = A.n();
  const int m = A.m();
  const int mi = static_cast<int>(A.G().rows());
  const VectorXd& l = A.lower();
  const VectorXd& u = A.upper();
  const MatrixXd& G = A.G();
  const VectorXd& h = A.h();

  IpmResult res;
  for (int i = 0; i < n; ++i) {
    if (l[i] > u[i]) {
      res.status = IpmStatus::infeasible;
      return res;
    }
  }

  std::vector<int> il, iu;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(l[i])) il.push_back(i);
    if (std::isfinite(u[i])) iu.push_back(i);
  }

  // Initial point: guess pushed strictly inside the bounds.
  VectorXd x = VectorXd::Zero(n);
  x.head(A.n_orig()) = x0.cwiseQuotient(A.scaling());
  A.init_elastic(x);
  constexpr double kPush = 1e-2;
  for (int i = 0; i < n; ++i) {
    const bool fl = std::isfinite(l[i]), fu = std::isfinite(u[i]);
    if (fl && fu) {
      const double width = u[i] - l[i];
      const double push = std::min(kPush * std::max(1.0, std::abs(l[i])), 0.5 * kPush * width);
      const double pushu = std::min(kPush * std::max(1.0, std::abs(u[i])), 0.5 * kPush * width);
      if (width <= 0) {
        x[i] = l[i];
      } else {
        x[i] = std::clamp(x[i], l[i] + push, u[i] - pushu);
      }
    } else if (fl) {
      x[i] = std::max(x[i], l[i] + kPush * std::max(1.0, std::abs(l[i])));
    } else if (fu) {
      x[i] = std::min(x[i], u[i] - kPush * std::max(1.0, std::abs(u[i])));
    }
  }
  {
    const VectorXd g0 = prob.objective_gradient(A.unscale(x)).cwiseProduct(A.scaling());
    const double gmax = g0.size() ? g0.lpNorm<Eigen::Infinity>() : 0.0;
    if (std::isfinite(gmax) && gmax > opt.max_gradient) A.set_objective_scale(opt.max_gradient / gmax);
  }
  // Degenerate fixed bounds cannot be handled by a barrier; widen them slightly.
  VectorXd lo = l, hi = u;
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(lo[i]) && std::isfinite(hi[i]) && hi[i] - lo[i] < 1e-12) {
      lo[i] -= 1e-10;
      hi[i] += 1e-10;
    }
  }

  double mu = opt.mu_init;
  VectorXd s = VectorXd::Zero(mi);
  if (mi > 0) {
    s = h - G * x;
    for (int i = 0; i < mi; ++i) s[i] = std::max(s[i], kPush * std::max(1.0, std::abs(h[i])));
  }
  VectorXd zl = VectorXd::Zero(n), zu = VectorXd::Zero(n);
  for (int i : il) zl[i] = mu / (x[i] - lo[i]);
  for (int i : iu) zu[i] = mu / (hi[i] - x[i]);
  VectorXd w = VectorXd::Zero(mi);
  for (int i = 0; i < mi; ++i) w[i] = mu / s[i];
  VectorXd y = VectorXd::Zero(m);

  double nu = 1.0;  // merit penalty
  double delta_w_last = 0.0;
  detail::SymmetricFactor fac;

  auto barrier_merit = [&](const VectorXd& xx, const VectorXd& ss, double mu_, double nu_) {
    double phi = A.objective(xx);
    for (int i : il) phi -= mu_ * std::log(xx[i] - lo[i]);
    for (int i : iu) phi -= mu_ * std::log(hi[i] - xx[i]);
    for (int i = 0; i < mi; ++i) phi -= mu_ * std::log(ss[i]);
    double infeas = A.constraints(xx).lpNorm<1>();
    if (mi > 0) infeas += (G * xx + ss - h).lpNorm<1>();
    return phi + nu_ * infeas;
  };

  struct Errors {
    double scaled;
    double raw;
  };
  auto errors = [&](const VectorXd& g, const MatrixXd& J, const VectorXd& c, double mu_) {
    VectorXd rd = g - zl + zu;
    if (m > 0) rd += J.transpose() * y;
    if (mi > 0) rd += G.transpose() * w;
    // Dual and complementarity errors are measured relative to the average
    // multiplier size, which is large whenever an elastic variable is active.
    constexpr double kSMax = 100.0;
    const double bound_mult = zl.lpNorm<1>() + zu.lpNorm<1>() + w.lpNorm<1>();
    const auto nb = static_cast<double>(il.size() + iu.size() + static_cast<std::size_t>(mi));
    const double s_d = std::max(kSMax, (y.lpNorm<1>() + bound_mult) / std::max(1.0, nb + m)) / kSMax;
    const double s_c = std::max(kSMax, bound_mult / std::max(1.0, nb)) / kSMax;
    const double dual = rd.size() ? rd.lpNorm<Eigen::Infinity>() : 0.0;
    double e = 0.0;
    if (m > 0) e = std::max(e, c.lpNorm<Eigen::Infinity>());
    if (mi > 0) e = std::max(e, (G * x + s - h).lpNorm<Eigen::Infinity>());
    double comp = 0.0;
    for (int i : il) comp = std::max(comp, std::abs((x[i] - lo[i]) * zl[i] - mu_));
    for (int i : iu) comp = std::max(comp, std::abs((hi[i] - x[i]) * zu[i] - mu_));
    for (int i = 0; i < mi; ++i) comp = std::max(comp, std::abs(s[i] * w[i] - mu_));
    return Errors{std::max({e, dual / s_d, comp / s_c}), std::max({e, dual, comp})};
  };

  auto finish = [&](IpmStatus st, int iters, double err) {
    res.status = st;
    res.iterations = iters;
    res.scaled_error = err;
    res.max_elastic = A.max_elastic(x);
    if (st == IpmStatus::converged && res.max_elastic > opt.feasibility_tolerance) res.status = IpmStatus::infeasible;
    res.point.x = A.unscale(x);
    const double sf = A.objective_scale();
    res.point.y = y / sf;
    res.point.w = w / sf;
    const int n0 = A.n_orig();
    res.point.z_lower = zl.head(n0).cwiseQuotient(A.scaling()) / sf;
    res.point.z_upper = zu.head(n0).cwiseQuotient(A.scaling()) / sf;
    for (int i = 0; i < n0; ++i) {
      if (!std::isfinite(prob.lower_bounds()[i])) res.point.z_lower[i] = 0.0;
      if (!std::isfinite(prob.upper_bounds()[i])) res.point.z_upper[i] = 0.0;
    }
    res.objective = res.status == IpmStatus::converged ? A.true_objective(x) : kInf;
    return res;
  };

  if (opt.trace) *opt.trace << "iter        objective        error        mu   alpha  delta_w\n";

  constexpr double kKappaEps = 10.0;
  constexpr double kKappaMu = 0.2;
  constexpr double kThetaMu = 1.5;
  constexpr double kKappaSigma = 1e10;

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    const VectorXd g = A.gradient(x);
    const VectorXd c = A.constraints(x);
    const MatrixXd J = A.jacobian(x);

    const Errors e0 = errors(g, J, c, 0.0);
    const double err0 = e0.scaled;
    // The unscaled test is skipped once elastic variables carry the
    // infeasibility; their multipliers are of the order of the penalty.
    const bool elastic_active = A.max_elastic(x) > opt.feasibility_tolerance;
    if (err0 <= opt.tolerance && (e0.raw <= opt.raw_tolerance || elastic_active))
      return finish(IpmStatus::converged, iter, err0);

    double err_mu = errors(g, J, c, mu).scaled;
    while (err_mu <= kKappaEps * mu && mu > opt.mu_min) {
      mu = std::max(opt.mu_min, std::min(kKappaMu * mu, std::pow(mu, kThetaMu)));
      err_mu = errors(g, J, c, mu).scaled;
    }

    // Condensed Newton system.
    MatrixXd Hbar = A.hessian(x, y);
    VectorXd rhs_x = -g;
    for (int i : il) {
      Hbar(i, i) += zl[i] / (x[i] - lo[i]);
      rhs_x[i] += mu / (x[i] - lo[i]);
    }
    for (int i : iu) {
      Hbar(i, i) += zu[i] / (hi[i] - x[i]);
      rhs_x[i] -= mu / (hi[i] - x[i]);
    }
    VectorXd ri = VectorXd::Zero(mi);
    if (mi > 0) {
      ri = G * x + s - h;
      const VectorXd sig = w.cwiseQuotient(s);
      Hbar.noalias() += G.transpose() * sig.asDiagonal() * G;
      VectorXd t(mi);
      for (int i = 0; i < mi; ++i) t[i] = mu / s[i] + sig[i] * ri[i];
      rhs_x.noalias() -= G.transpose() * t;
    }

    MatrixXd K = MatrixXd::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = Hbar;
    if (m > 0) {
      K.bottomLeftCorner(m, n) = J;
      K.topRightCorner(n, m) = J.transpose();
    }
    VectorXd rhs(n + m);
    rhs.head(n) = rhs_x;
    rhs.tail(m) = -c;

    double delta_w = 0.0, delta_c = 0.0;
    bool factored = false;
    for (int attempt = 0; attempt < 60; ++attempt) {
      MatrixXd Kr = K;
      Kr.topLeftCorner(n, n).diagonal().array() += delta_w;
      if (m > 0) Kr.bottomRightCorner(m, m).diagonal().array() -= delta_c;
      if (!fac.factor(Kr)) break;
      if (fac.positive() == n && fac.negative() == m && fac.zero() == 0) {
        factored = true;
        break;
      }
      if (fac.zero() > 0 && delta_c == 0.0) delta_c = 1e-8 * std::pow(mu, 0.25);
      if (delta_w == 0.0) {
        delta_w = delta_w_last == 0.0 ? 1e-4 : std::max(1e-20, delta_w_last / 3.0);
      } else {
        delta_w *= delta_w_last == 0.0 ? 100.0 : 8.0;
      }
      if (delta_w > 1e40) break;
    }
    if (!factored) return finish(IpmStatus::numerical_failure, iter, err0);
    if (delta_w > 0) delta_w_last = delta_w;

    const VectorXd sol = fac.solve(rhs);
    const VectorXd dx = sol.head(n);
    const VectorXd y_new = sol.tail(m);
    VectorXd ds(mi), w_new(mi);
    if (mi > 0) {
      ds = -ri - G * dx;
      for (int i = 0; i < mi; ++i) w_new[i] = mu / s[i] + w[i] / s[i] * (ri[i] + (G.row(i) * dx)(0));
    }
    VectorXd dzl = VectorXd::Zero(n), dzu = VectorXd::Zero(n);
    for (int i : il) dzl[i] = mu / (x[i] - lo[i]) - zl[i] - zl[i] / (x[i] - lo[i]) * dx[i];
    for (int i : iu) dzu[i] = mu / (hi[i] - x[i]) - zu[i] + zu[i] / (hi[i] - x[i]) * dx[i];
    const VectorXd dw = w_new - w;

    // Fraction to the boundary.
    const double tau = std::max(0.99, 1.0 - mu);
    double a_p = 1.0, a_d = 1.0;
    for (int i : il)
      if (dx[i] < 0) a_p = std::min(a_p, -tau * (x[i] - lo[i]) / dx[i]);
    for (int i : iu)
      if (dx[i] > 0) a_p = std::min(a_p, tau * (hi[i] - x[i]) / dx[i]);
    for (int i = 0; i < mi; ++i)
      if (ds[i] < 0) a_p = std::min(a_p, -tau * s[i] / ds[i]);
    for (int i : il)
      if (dzl[i] < 0) a_d = std::min(a_d, -tau * zl[i] / dzl[i]);
    for (int i : iu)
      if (dzu[i] < 0) a_d = std::min(a_d, -tau * zu[i] / dzu[i]);
    for (int i = 0; i < mi; ++i)
      if (dw[i] < 0) a_d = std::min(a_d, -tau * w[i] / dw[i]);

    // Merit penalty large enough for a descent direction.
    double infeas = c.lpNorm<1>() + (mi > 0 ? ri.lpNorm<1>() : 0.0);
    VectorXd gphi_x = g;
    for (int i : il) gphi_x[i] -= mu / (x[i] - lo[i]);
    for (int i : iu) gphi_x[i] += mu / (hi[i] - x[i]);
    double dphi = gphi_x.dot(dx);
    for (int i = 0; i < mi; ++i) dphi -= mu / s[i] * ds[i];
    if (infeas > 1e-14) {
      const double curv = std::max(0.0, dx.dot((Hbar + delta_w * MatrixXd::Identity(n, n)) * dx));
      const double nu_req = (dphi + 0.5 * curv) / (0.9 * infeas);
      double mult = 0.0;
      if (m > 0) mult = y_new.lpNorm<Eigen::Infinity>();
      if (mi > 0) mult = std::max(mult, w_new.lpNorm<Eigen::Infinity>());
      nu = std::max({nu, nu_req + 1.0, mult + 1.0});
    }
    const double D = dphi - nu * infeas;
    const double phi0 = barrier_merit(x, s, mu, nu);

    double alpha = a_p;
    VectorXd x_try, s_try;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_try = x + alpha * dx;
      s_try = mi > 0 ? VectorXd(s + alpha * ds) : s;
      const double phi = barrier_merit(x_try, s_try, mu, nu);
      if (std::isfinite(phi) && phi <= phi0 + 1e-4 * alpha * std::min(D, 0.0) + 1e-13 * std::abs(phi0)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      // Take a small step anyway; the barrier keeps iterates interior.
      alpha = std::min(a_p, 1e-8);
      x_try = x + alpha * dx;
      s_try = mi > 0 ? VectorXd(s + alpha * ds) : s;
    }

    x = x_try;
    s = s_try;
    y += alpha * (y_new - y);
    zl += a_d * dzl;
    zu += a_d * dzu;
    w += a_d * dw;
    for (int i : il) {
      const double d = x[i] - lo[i];
      zl[i] = std::clamp(zl[i], mu / (kKappaSigma * d), kKappaSigma * mu / d);
    }
    for (int i : iu) {
      const double d = hi[i] - x[i];
      zu[i] = std::clamp(zu[i], mu / (kKappaSigma * d), kKappaSigma * mu / d);
    }
    for (int i = 0; i < mi; ++i) w[i] = std::clamp(w[i], mu / (kKappaSigma * s[i]), kKappaSigma * mu / s[i]);

    if (opt.trace) {
      *opt.trace << std::setw(4) << iter << ' ' << std::setw(16) << std::setprecision(9) << A.objective(x) << ' '
                 << std::setw(12) << std::setprecision(3) << err0 << ' ' << std::setw(9) << mu << ' ' << std::setw(7)
                 << alpha << ' ' << std::setw(8) << delta_w << '\n';
    }
  }

  const VectorXd g = A.gradient(x);
  const double err = errors(g, A.jacobian(x), A.constraints(x), 0.0).scaled;
  if (err <= opt.acceptable_tolerance) return finish(IpmStatus::converged, opt.max_iterations, err);
  return finish(IpmStatus::iteration_limit, opt.max_iterations, err);
}

}  // namespace platoon::nlp
