#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include "mitram/data.hpp"
#include "mitram/fit.hpp"
#include "mitram/normal.hpp"
#include "mitram/util.hpp"

namespace mitram {

// Covariate configuration a marginal curve is requested at.
struct MarginalQuery {
  Eigen::VectorXd x;
  Eigen::VectorXd u;
  int stratum = 0;
};

// sqrt(u' Lambda Lambda' u + 1): the factor by which integrating the random
// effects attenuates the linear predictor.  Never below one.
inline double marginal_effect_scale(const Eigen::VectorXd& gamma, int R,
                                    const Eigen::VectorXd& u) {
  const Eigen::MatrixXd lambda = pack_lower_triangle(gamma, R);
  return std::sqrt(1.0 + (lambda.transpose() * u).squaredNorm());
}

// Population-level cdf P(Y <= y | x, u) after the cluster effects are
// integrated out.  Identity scaling keeps the probit shape with an inflated
// denominator; the diagonal scaling keeps the shape of F itself:
//   identity: Phi( Phi^-1(F(h(y) - x'b)) / s )
//   diagonal: F( (h(y) - x'b) / s )
// with s the marginal effect scale at u.  For ordinal models y is a category
// and the cdf is evaluated at its upper cutpoint.
inline double marginal_cdf(const ModelSpec& spec, const ParameterVector& params,
                           const MarginalQuery& query, double y) {
  if (query.x.size() != params.beta.size())
    throw std::invalid_argument("query fixed-covariate length mismatch");
  if (query.stratum < 0 || query.stratum >= spec.n_strata)
    throw std::invalid_argument("query stratum out of range");
  const double s = marginal_effect_scale(params.gamma, spec.R, query.u);

  double eta;
  if (spec.basis.kind() == BasisKind::OrdinalThresholds) {
    const int K = spec.basis.n_categories();
    const long c = std::lround(y);
    if (c < 1) return 0.0;
    if (c >= K) return 1.0;
    eta = spec.basis.eval(static_cast<double>(c))
              .dot(params.theta_block(query.stratum, spec.basis.dim())) -
          query.x.dot(params.beta);
  } else if (std::isinf(y)) {
    return y > 0 ? 1.0 : 0.0;
  } else if (spec.basis.kind() == BasisKind::LogLinear && y <= 0.0) {
    return 0.0;
  } else {
    eta = spec.basis.eval(y).dot(params.theta_block(query.stratum, spec.basis.dim())) -
          query.x.dot(params.beta);
  }

  if (spec.identity_scaling()) {
    if (spec.link.kind() == LinkKind::Probit) return norm_cdf(eta / s);
    return norm_cdf(norm_quantile(spec.link.cdf(eta)) / s);
  }
  return spec.link.cdf(eta / s);
}

inline Eigen::VectorXd marginal_cdf(const ModelSpec& spec, const ParameterVector& params,
                                    const MarginalQuery& query,
                                    const Eigen::VectorXd& y_grid) {
  Eigen::VectorXd out(y_grid.size());
  for (long i = 0; i < y_grid.size(); ++i)
    out[i] = marginal_cdf(spec, params, query, y_grid[i]);
  return out;
}

struct EffectInterval {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

namespace detail {

// linear-interpolation quantile of an already sorted sample
inline double sorted_quantile(const std::vector<double>& v, double q) {
  const double h = q * (static_cast<double>(v.size()) - 1.0);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

// Equal-tailed interval for a smooth scalar function of a parameter subset:
// draws the subset from its estimated Gaussian (sub-block of the fitted
// covariance, eigenvalue-floored to stay proper), pushes each draw through
// `fn`, and reads off percentile endpoints.  Deterministic in `seed`.
inline EffectInterval effect_ci_simulate(const FitResult& fit, const std::vector<int>& indices,
                                         const std::function<double(const Eigen::VectorXd&)>& fn,
                                         long n_draws = 100000, std::uint64_t seed = 1,
                                         double level = 0.95) {
  const int k = static_cast<int>(indices.size());
  if (k == 0) throw std::invalid_argument("effect interval needs at least one parameter");
  const Eigen::VectorXd flat = fit.params.flat();
  Eigen::VectorXd mean(k);
  Eigen::MatrixXd cov(k, k);
  for (int a = 0; a < k; ++a) {
    if (indices[a] < 0 || indices[a] >= flat.size())
      throw std::invalid_argument("effect parameter index out of range");
    mean[a] = flat[indices[a]];
    for (int b = 0; b < k; ++b) cov(a, b) = fit.vcov(indices[a], indices[b]);
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd A = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();

  EffectInterval out;
  out.point = fn(mean);
  std::vector<double> values(static_cast<std::size_t>(n_draws));
  Eigen::VectorXd z(k);
  // hash the seed into the counter base so adjacent seeds draw disjoint
  // streams instead of the same stream shifted by one
  std::uint64_t ctr = splitmix64(seed ^ 0x7a2c853f19bd04e1ULL);
  constexpr double scale = 1.0 / 18446744073709551616.0;  // 2^-64
  for (long d = 0; d < n_draws; ++d) {
    for (int a = 0; a < k; ++a)
      z[a] = norm_quantile((static_cast<double>(splitmix64(ctr++)) + 0.5) * scale);
    values[static_cast<std::size_t>(d)] = fn(mean + A * z);
  }
  std::sort(values.begin(), values.end());
  const double tail = 0.5 * (1.0 - level);
  out.lower = detail::sorted_quantile(values, tail);
  out.upper = detail::sorted_quantile(values, 1.0 - tail);
  return out;
}

}  // namespace mitram
