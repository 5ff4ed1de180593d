#pragma once

// Shared randomized fixtures for likelihood-level tests: small clusters with
// well-conditioned designs and parameters comfortably inside the constraint
// region.

#include <random>

#include "mitram/data.hpp"

namespace fixtures {

using namespace mitram;

inline ClusterData make_cluster(int n, int n_fixed, int R, std::mt19937& rng,
                                bool intercept_random = true) {
  std::normal_distribution<double> nd;
  ClusterData c;
  c.id = "c";
  c.lo.resize(n);
  c.hi.resize(n);
  c.X.resize(n, n_fixed);
  c.U.resize(n, R);
  for (int i = 0; i < n; ++i) {
    const double y = nd(rng);
    c.lo[i] = y;
    c.hi[i] = y;
    for (int j = 0; j < n_fixed; ++j) c.X(i, j) = nd(rng);
    for (int j = 0; j < R; ++j) c.U(i, j) = (j == 0 && intercept_random) ? 1.0 : nd(rng);
  }
  return c;
}

inline Eigen::VectorXd random_gamma(int R, std::mt19937& rng) {
  std::normal_distribution<double> nd(0.0, 0.4);
  Eigen::VectorXd g(lambda_param_count(R));
  for (long i = 0; i < g.size(); ++i) g[i] = nd(rng);
  for (int pos : lambda_diagonal_positions(R)) g[pos] = std::fabs(g[pos]) + 0.2;
  return g;
}

// Parameters valid for the given spec: increasing transformation, moderate
// effects, positive-diagonal factor.
inline ParameterVector random_params(const ModelSpec& spec, int n_fixed, std::mt19937& rng) {
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ud(0.3, 1.4);
  ParameterVector p;
  const int P = spec.basis.dim();
  p.theta.resize(spec.theta_dim());
  for (int s = 0; s < spec.n_strata; ++s) {
    Eigen::VectorXd block(P);
    switch (spec.basis.kind()) {
      case BasisKind::Linear:
        block << ud(rng), nd(rng);
        break;
      case BasisKind::LogLinear:
        block << nd(rng), ud(rng);
        break;
      default: {
        block[0] = -2.0 + 0.3 * nd(rng);
        for (int k = 1; k < P; ++k) block[k] = block[k - 1] + ud(rng);
        break;
      }
    }
    p.theta.segment(static_cast<long>(s) * P, P) = block;
  }
  p.beta.resize(n_fixed);
  for (int j = 0; j < n_fixed; ++j) p.beta[j] = 0.5 * nd(rng);
  p.gamma = random_gamma(spec.R, rng);
  return p;
}

}  // namespace fixtures
