#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "mitram/basis.hpp"

namespace mitram {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Central finite-difference gradient with per-coordinate relative steps.
// An infinite value on one side (the objective returns +inf outside its
// domain) falls back to the one-sided quotient through f(x).
inline Eigen::VectorXd fd_gradient(const ObjectiveFn& f, const Eigen::VectorXd& x,
                                   double rel_step = 1e-6) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd g(n), xp = x;
  double f0 = std::numeric_limits<double>::quiet_NaN();
  for (int j = 0; j < n; ++j) {
    const double h = rel_step * std::max(1.0, std::fabs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    if (std::isfinite(fp) && std::isfinite(fm)) {
      g[j] = (fp - fm) / (2.0 * h);
    } else {
      if (std::isnan(f0)) f0 = f(x);
      if (std::isfinite(fp)) {
        g[j] = (fp - f0) / h;
      } else if (std::isfinite(fm)) {
        g[j] = (f0 - fm) / h;
      } else {
        g[j] = 0.0;
      }
    }
  }
  return g;
}

struct BfgsOptions {
  int max_iter = 200;
  double grad_tol = 1e-6;  // scaled: ||g|| <= grad_tol * (1 + |f|)
  int max_backtracks = 60;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
};

// Quasi-Newton minimizer maintaining the inverse Hessian approximation.
// The line search is plain Armijo backtracking; a non-finite trial value just
// shrinks the step, which is how infeasible parameter regions are walked
// around.  Updates that fail the curvature condition are skipped.
inline BfgsResult bfgs_minimize(const ObjectiveFn& f, const GradientFn& grad,
                                const Eigen::VectorXd& x0, const BfgsOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  BfgsResult res;
  res.x = x0;
  res.f = f(x0);
  if (!std::isfinite(res.f)) {
    res.grad = Eigen::VectorXd::Zero(n);
    return res;  // nothing to do from an infeasible start
  }
  res.grad = grad(res.x);

  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(n, n);
  bool scaled = false;
  constexpr double c1 = 1e-4;

  for (res.iterations = 0; res.iterations < opts.max_iter; ++res.iterations) {
    if (res.grad.norm() <= opts.grad_tol * (1.0 + std::fabs(res.f))) {
      res.converged = true;
      return res;
    }
    Eigen::VectorXd d = -(H * res.grad);
    double slope = res.grad.dot(d);
    if (!(slope < 0.0)) {  // approximation lost descent; restart from identity
      H.setIdentity();
      scaled = false;
      d = -res.grad;
      slope = res.grad.dot(d);
      if (!(slope < 0.0)) {
        res.converged = true;  // gradient is numerically zero
        return res;
      }
    }

    double t = 1.0;
    double ft = std::numeric_limits<double>::infinity();
    Eigen::VectorXd xt;
    int bt = 0;
    for (; bt <= opts.max_backtracks; ++bt) {
      xt = res.x + t * d;
      ft = f(xt);
      if (std::isfinite(ft) && ft <= res.f + c1 * t * slope) break;
      t *= 0.5;
    }
    if (bt > opts.max_backtracks) {
      // no acceptable step along d; treat the current point as stationary if
      // the scaled gradient is small, otherwise report non-convergence
      res.converged = res.grad.norm() <= 10.0 * opts.grad_tol * (1.0 + std::fabs(res.f));
      return res;
    }

    const Eigen::VectorXd gt = grad(xt);
    const Eigen::VectorXd s = xt - res.x;
    const Eigen::VectorXd y = gt - res.grad;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {  // size the initial metric off the first curvature pair
        H = (sy / y.squaredNorm()) * Eigen::MatrixXd::Identity(n, n);
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd Hy = H * y;
      H -= rho * (Hy * s.transpose() + s * Hy.transpose());
      H += rho * rho * (y.dot(Hy)) * (s * s.transpose()) + rho * (s * s.transpose());
    }
    res.x = xt;
    res.f = ft;
    res.grad = gt;
  }
  res.converged = res.grad.norm() <= opts.grad_tol * (1.0 + std::fabs(res.f));
  return res;
}

struct AuglagOptions {
  BfgsOptions inner;
  int max_outer = 25;
  double constraint_tol = 1e-8;
  double mu0 = 10.0;
  double mu_growth = 10.0;
};

struct AuglagResult {
  Eigen::VectorXd x;
  double f = 0.0;           // raw objective at x
  double grad_norm = 0.0;   // stationarity of the final subproblem
  double max_violation = 0.0;
  Eigen::VectorXd multipliers;
  int outer_iterations = 0;
  int inner_iterations = 0;
  bool converged = false;
  // merit value of each subproblem before/after its inner solve; the inner
  // solver guarantees end <= start
  std::vector<std::pair<double, double>> merit_path;
};

// Powell-Hestenes-Rockafellar augmented Lagrangian for
//   minimize f(x)  subject to  C x >= b.
// Each outer round minimizes f plus the shifted quadratic penalty
//   psi(c) = -l*c + mu*c^2/2 for c <= l/mu, else -l^2/(2*mu),
// then updates multipliers l <- max(0, l - mu*c) and inflates mu when the
// worst violation has not dropped by a factor of four.
inline AuglagResult auglag_minimize(const ObjectiveFn& f, const GradientFn& grad,
                                    const ConstraintSystem& cons, const Eigen::VectorXd& x0,
                                    const AuglagOptions& opts = {}) {
  const int m = cons.rows();
  AuglagResult res;
  if (m == 0) {
    const BfgsResult b = bfgs_minimize(f, grad, x0, opts.inner);
    res.x = b.x;
    res.f = b.f;
    res.grad_norm = b.grad.norm();
    res.outer_iterations = 1;
    res.inner_iterations = b.iterations;
    res.converged = b.converged;
    res.merit_path.push_back({b.f, b.f});
    return res;
  }

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(m);
  double mu = opts.mu0;
  Eigen::VectorXd x = x0;
  double prev_viol = std::numeric_limits<double>::infinity();

  auto violation = [&](const Eigen::VectorXd& xx) {
    const Eigen::VectorXd c = cons.coef * xx - cons.bound;
    return (-c).cwiseMax(0.0).maxCoeff();
  };

  BfgsResult inner;
  for (res.outer_iterations = 1; res.outer_iterations <= opts.max_outer;
       ++res.outer_iterations) {
    auto merit = [&](const Eigen::VectorXd& xx) {
      const double fx = f(xx);
      if (!std::isfinite(fx)) return fx;
      const Eigen::VectorXd c = cons.coef * xx - cons.bound;
      double pen = 0.0;
      for (int j = 0; j < m; ++j) {
        if (c[j] <= lambda[j] / mu)
          pen += -lambda[j] * c[j] + 0.5 * mu * c[j] * c[j];
        else
          pen += -0.5 * lambda[j] * lambda[j] / mu;
      }
      return fx + pen;
    };
    auto merit_grad = [&](const Eigen::VectorXd& xx) {
      Eigen::VectorXd g = grad(xx);
      const Eigen::VectorXd c = cons.coef * xx - cons.bound;
      for (int j = 0; j < m; ++j) {
        const double mult = std::max(0.0, lambda[j] - mu * c[j]);
        if (mult > 0.0) g -= mult * cons.coef.row(j).transpose();
      }
      return g;
    };

    const double merit_before = merit(x);
    inner = bfgs_minimize(merit, merit_grad, x, opts.inner);
    x = inner.x;
    res.merit_path.push_back({merit_before, inner.f});
    res.inner_iterations += inner.iterations;

    const double viol = violation(x);
    const Eigen::VectorXd c = cons.coef * x - cons.bound;
    if (viol < opts.constraint_tol && inner.converged) {
      res.converged = true;
      break;
    }
    lambda = (lambda - mu * c).cwiseMax(0.0);
    if (viol > 0.25 * prev_viol) mu *= opts.mu_growth;
    prev_viol = viol;
  }

  res.x = x;
  res.f = f(x);
  res.grad_norm = inner.grad.size() ? inner.grad.norm() : 0.0;
  res.max_violation = violation(x);
  res.multipliers = lambda;
  return res;
}

}  // namespace mitram
