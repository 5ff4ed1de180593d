#pragma once

// Test-side reference implementations, written independently of the library
// code they check: naive dense algebra, textbook formulas, plain finite
// differences.  Clarity over speed throughout.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <random>

namespace oracle {

// log N(z; 0, Sigma) through an explicit inverse and determinant.
inline double dense_mvn_logpdf(const Eigen::VectorXd& z, const Eigen::MatrixXd& sigma) {
  const int n = static_cast<int>(z.size());
  const Eigen::MatrixXd inv = sigma.inverse();
  const double logdet = std::log(sigma.determinant());
  return -0.5 * n * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * z.dot(inv * z);
}

inline double binom_coeff(int n, int k) {
  double r = 1.0;
  for (int j = 1; j <= k; ++j) r *= static_cast<double>(n - k + j) / j;
  return r;
}

// Bernstein polynomial by the binomial formula.
inline double bernstein_poly(int k, int p, double t) {
  return binom_coeff(p, k) * std::pow(t, k) * std::pow(1.0 - t, p - k);
}

// Polynomial in Bernstein form evaluated by de Casteljau's algorithm.
inline double de_casteljau(Eigen::VectorXd coef, double t) {
  const int p = static_cast<int>(coef.size()) - 1;
  for (int r = 1; r <= p; ++r)
    for (int k = 0; k <= p - r; ++k) coef[k] = (1.0 - t) * coef[k] + t * coef[k + 1];
  return coef[0];
}

// Central finite-difference gradient of a scalar function.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double rel_step = 1e-6) {
  Eigen::VectorXd g(x.size()), xp = x;
  for (long j = 0; j < x.size(); ++j) {
    const double h = rel_step * std::max(1.0, std::fabs(x[j]));
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_diff(double a, double b) {
  return std::fabs(a - b) / std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
}

// Worst relative component difference, scaled like rel_diff.
inline double rel_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double worst = 0.0;
  for (long i = 0; i < a.size(); ++i) worst = std::max(worst, rel_diff(a[i], b[i]));
  return worst;
}

}  // namespace oracle
