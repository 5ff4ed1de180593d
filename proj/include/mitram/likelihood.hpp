#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mitram/covariance.hpp"
#include "mitram/cubature.hpp"
#include "mitram/data.hpp"
#include "mitram/normal.hpp"
#include "mitram/util.hpp"

namespace mitram {

// Parameter values for which the model density does not exist (non-monotone
// transformation region, Jacobian <= 0).  The fitter treats this as an
// objective value of -infinity rather than a hard failure.
struct InvalidParameterError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EvalDiagnostics {
  long clamp_count = 0;  // cluster probabilities floored at 1e-300 before log
};

inline constexpr double kProbFloor = 1e-300;
// F(eta) is pinned away from {0,1} before the normal quantile so censoring
// bounds in deep tails stay finite; |Phi^-1| caps near 8.2.
inline constexpr double kCdfClampLo = 1e-16;
inline constexpr double kCdfClampHi = 1.0 - 1e-16;

namespace detail {

inline double clamped_norm_quantile(double p) {
  return norm_quantile(std::min(kCdfClampHi, std::max(kCdfClampLo, p)));
}

// Linear predictor h(y) - x'beta for one observation; +/-infinite y (or an
// out-of-range ordinal cut index) passes straight through as an infinite
// predictor since h is increasing.
inline double linear_predictor(const ModelSpec& spec, const ParameterVector& params,
                               const ClusterData& cluster, int i, double y) {
  if (spec.basis.kind() == BasisKind::OrdinalThresholds) {
    const int K = spec.basis.n_categories();
    if (y < 0.5) return -std::numeric_limits<double>::infinity();
    if (y > K - 0.5) return std::numeric_limits<double>::infinity();
  } else if (std::isinf(y)) {
    return y;
  } else if (spec.basis.kind() == BasisKind::LogLinear && y <= 0.0) {
    // a censoring bound at zero is the left edge of the positive support
    return -std::numeric_limits<double>::infinity();
  }
  const int P = spec.basis.dim();
  const Eigen::VectorXd a = spec.basis.eval(y);
  return a.dot(params.theta_block(cluster.stratum_of(i), P)) -
         cluster.X.row(i).dot(params.beta);
}

}  // namespace detail

// Latent standardized responses z_i = D Phi^-1(F(D^-1 (h(y) - x'beta))).
// `values` holds one bound per observation; +/-infinity maps to +/-infinity.
// For ordinal models the values are cut indices: k in 1..K-1 selects
// cutpoint k, anything at or beyond the ends is an infinite bound.
inline Eigen::VectorXd z_transform(const ModelSpec& spec, const ParameterVector& params,
                                   const ClusterData& cluster,
                                   const Eigen::VectorXd& values) {
  const int n = cluster.size();
  if (values.size() != n) throw std::invalid_argument("bound vector length mismatch");
  const bool identity = spec.identity_scaling();
  const bool probit = spec.link.kind() == LinkKind::Probit;
  Eigen::VectorXd scale;
  if (!identity) {
    const Eigen::MatrixXd B = cluster.U * pack_lower_triangle(params.gamma, spec.R);
    scale = (B.rowwise().squaredNorm().array() + 1.0).sqrt().matrix();
  }
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) {
    const double eta = detail::linear_predictor(spec, params, cluster, i, values[i]);
    if (std::isinf(eta)) {
      z[i] = eta;
      continue;
    }
    if (probit) {
      z[i] = eta;  // Phi^-1 of Phi cancels at any scaling
      continue;
    }
    const double d = identity ? 1.0 : scale[i];
    z[i] = d * detail::clamped_norm_quantile(spec.link.cdf(eta / d));
  }
  return z;
}

// Expands a cluster's responses into censoring bounds on the response scale:
// stored bounds for interval data, (c-1, c] cut indices for ordinal
// categories, degenerate [y, y] pairs for exact data.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> censoring_bounds(
    const ModelSpec& spec, const ClusterData& cluster) {
  if (spec.basis.kind() == BasisKind::OrdinalThresholds) {
    const int K = spec.basis.n_categories();
    Eigen::VectorXd lo(cluster.size()), hi(cluster.size());
    for (int i = 0; i < cluster.size(); ++i) {
      const long c = std::lround(cluster.lo[i]);
      if (cluster.lo[i] != cluster.hi[i] || c < 1 || c > K)
        throw std::invalid_argument("ordinal responses must be exact categories in 1..K");
      lo[i] = static_cast<double>(c - 1);
      hi[i] = static_cast<double>(c);
    }
    return {lo, hi};
  }
  return {cluster.lo, cluster.hi};
}

// Log density of one exactly observed cluster:
//   -log|Sigma|/2 - z'Sigma^-1 z/2 + sum z_i^2/(2 d_i^2) + sum log f(D^-1 eta)
//   + sum log(a'(y)'theta)
// where the third term is the change of variables through the marginal
// normal (d_i = 1 under identity scaling, so it reduces to ||z||^2/2).  The
// quadratic pair is evaluated through the structured Gaussian kernel, so no
// inverse is ever formed.
inline double loglik_continuous(const ModelSpec& spec, const ParameterVector& params,
                                const ClusterData& cluster) {
  if (!cluster.exact || spec.basis.kind() == BasisKind::OrdinalThresholds)
    throw std::logic_error("continuous likelihood needs exact continuous responses");
  const int n = cluster.size();
  const int P = spec.basis.dim();
  const bool identity = spec.identity_scaling();
  const bool probit = spec.link.kind() == LinkKind::Probit;
  const Eigen::MatrixXd lambda = pack_lower_triangle(params.gamma, spec.R);

  Eigen::VectorXd scale;
  if (!identity) {
    const Eigen::MatrixXd B = cluster.U * lambda;
    scale = (B.rowwise().squaredNorm().array() + 1.0).sqrt().matrix();
  }

  Eigen::VectorXd z(n);
  double dens_terms = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = cluster.lo[i];
    const double jac = spec.basis.deriv(y).dot(params.theta_block(cluster.stratum_of(i), P));
    if (!(jac > 0.0))
      throw InvalidParameterError("transformation is non-increasing at an observed response");
    const double eta = detail::linear_predictor(spec, params, cluster, i, y);
    const double d = identity ? 1.0 : scale[i];
    z[i] = probit ? eta : d * detail::clamped_norm_quantile(spec.link.cdf(eta / d));
    dens_terms += spec.link.logpdf(eta / d) + std::log(jac) + 0.5 * (z[i] / d) * (z[i] / d);
  }

  const ClusterGaussian g(lambda, cluster.U);
  return -0.5 * g.log_det() - 0.5 * g.quad_form(z) + dens_terms;
}

// Analytic gradient of loglik_continuous in the probit family, where
// z = A theta - X beta is linear in (theta, beta):
//   d/dtheta = -A' Sigma^-1 z + Jacobian correction
//   d/dbeta  = +X' Sigma^-1 z
//   d/dgamma_(r,c) = -(S Lambda)_(r,c) + T_r (Lambda' T)_c,
// with S = U' Sigma^-1 U and T = U' Sigma^-1 z.
inline ParameterVector score_continuous(const ModelSpec& spec, const ParameterVector& params,
                                        const ClusterData& cluster) {
  if (spec.link.kind() != LinkKind::Probit)
    throw std::logic_error("analytic scores cover the probit family; use finite differences otherwise");
  if (!cluster.exact || spec.basis.kind() == BasisKind::OrdinalThresholds)
    throw std::logic_error("analytic scores need exact continuous responses");

  const int n = cluster.size();
  const int P = spec.basis.dim();
  const Eigen::MatrixXd lambda = pack_lower_triangle(params.gamma, spec.R);

  ParameterVector score;
  score.theta = Eigen::VectorXd::Zero(params.theta.size());
  score.beta = Eigen::VectorXd::Zero(params.beta.size());
  score.gamma = Eigen::VectorXd::Zero(params.gamma.size());

  Eigen::VectorXd z(n);
  std::vector<Eigen::VectorXd> arows(n);
  for (int i = 0; i < n; ++i) {
    const double y = cluster.lo[i];
    arows[i] = spec.basis.eval(y);
    const int s = cluster.stratum_of(i);
    const Eigen::VectorXd ad = spec.basis.deriv(y);
    const double jac = ad.dot(params.theta_block(s, P));
    if (!(jac > 0.0))
      throw InvalidParameterError("transformation is non-increasing at an observed response");
    z[i] = arows[i].dot(params.theta_block(s, P)) - cluster.X.row(i).dot(params.beta);
    score.theta.segment(static_cast<long>(s) * P, P) += ad / jac;
  }

  const ClusterGaussian g(lambda, cluster.U);
  const Eigen::VectorXd sz = g.solve(z);
  for (int i = 0; i < n; ++i)
    score.theta.segment(static_cast<long>(cluster.stratum_of(i)) * P, P) -= arows[i] * sz[i];
  score.beta = cluster.X.transpose() * sz;

  if (params.gamma.size()) {
    const Eigen::MatrixXd W = g.solve(Eigen::MatrixXd(cluster.U));  // Sigma^-1 U
    const Eigen::MatrixXd S = cluster.U.transpose() * W;
    const Eigen::VectorXd T = W.transpose() * z;
    const Eigen::MatrixXd SL = S * lambda;
    const Eigen::VectorXd LtT = lambda.transpose() * T;
    int m = 0;
    for (int r = 0; r < spec.R; ++r)
      for (int c = 0; c <= r; ++c) score.gamma[m++] = -SL(r, c) + T[r] * LtT[c];
  }
  return score;
}

namespace detail {

// Interval mass of one cluster given precomputed standard-normal factor draws
// zq (n_nodes x R) with weights w: the R-dimensional mixing integral
//   integral over factors of prod_i [Phi(zhi_i - v_i'w) - Phi(zlo_i - v_i'w)]
// with v = U Lambda.  Clusters of size one are answered in closed form.
inline double interval_mass(const ModelSpec& spec, const ParameterVector& params,
                            const ClusterData& cluster, const Eigen::MatrixXd& zq,
                            const Eigen::VectorXd& w) {
  const auto [blo, bhi] = censoring_bounds(spec, cluster);
  const Eigen::VectorXd zlo = z_transform(spec, params, cluster, blo);
  const Eigen::VectorXd zhi = z_transform(spec, params, cluster, bhi);
  for (int i = 0; i < cluster.size(); ++i)
    if (!(zlo[i] < zhi[i]))
      throw std::domain_error("censoring interval collapsed to zero width on the latent scale");

  const Eigen::MatrixXd B = cluster.U * pack_lower_triangle(params.gamma, spec.R);

  if (cluster.size() == 1) {
    const double s = std::sqrt(1.0 + B.row(0).squaredNorm());
    const double up = std::isinf(zhi[0]) ? (zhi[0] > 0 ? 1.0 : 0.0) : norm_cdf(zhi[0] / s);
    const double dn = std::isinf(zlo[0]) ? (zlo[0] > 0 ? 1.0 : 0.0) : norm_cdf(zlo[0] / s);
    return up - dn;
  }

  const long nq = zq.rows();
  const Eigen::MatrixXd shifts = zq * B.transpose();  // n_nodes x N
  double acc = 0.0;
  for (long k = 0; k < nq; ++k) {
    double prod = w[k];
    for (int i = 0; i < cluster.size() && prod != 0.0; ++i) {
      const double m = shifts(k, i);
      const double up = std::isinf(zhi[i]) ? (zhi[i] > 0 ? 1.0 : 0.0) : norm_cdf(zhi[i] - m);
      const double dn = std::isinf(zlo[i]) ? (zlo[i] > 0 ? 1.0 : 0.0) : norm_cdf(zlo[i] - m);
      prod *= up - dn;
    }
    acc += prod;
  }
  return acc;
}

inline Eigen::MatrixXd normal_factor_nodes(const CubatureNodes& nodes) {
  Eigen::MatrixXd zq(nodes.q.rows(), nodes.q.cols());
  for (long i = 0; i < nodes.q.rows(); ++i)
    for (long j = 0; j < nodes.q.cols(); ++j) zq(i, j) = norm_quantile(nodes.q(i, j));
  return zq;
}

// dz/deta for one bound under identity scaling: 1 in the probit family,
// f(eta)/phi(z) otherwise, 0 once the bound is pinned by the tail clamp or
// infinite (the discretized objective is flat there).
inline double dz_deta_identity(const LinkFamily& link, double eta, double z) {
  if (std::isinf(eta)) return 0.0;
  if (link.kind() == LinkKind::Probit) return 1.0;
  const double p = link.cdf(eta);
  if (p <= kCdfClampLo || p >= kCdfClampHi) return 0.0;
  return std::exp(link.logpdf(eta) - norm_logpdf(z));
}

}  // namespace detail

// Log interval probability of one censored (or ordinal) cluster, the factor
// representation evaluated with precomputed nodes.  Estimates at or below the
// floor are clamped and counted; persistent clamping at a solution is
// surfaced by the fitter.
inline double loglik_censored(const ModelSpec& spec, const ParameterVector& params,
                              const ClusterData& cluster, const Eigen::MatrixXd& zq,
                              const Eigen::VectorXd& w, EvalDiagnostics* diag = nullptr) {
  double p = detail::interval_mass(spec, params, cluster, zq, w);
  if (!(p > kProbFloor)) {
    p = kProbFloor;
    if (diag) ++diag->clamp_count;
  }
  return std::log(p);
}

inline double loglik_censored(const ModelSpec& spec, const ParameterVector& params,
                              const ClusterData& cluster, const CubatureRule& rule,
                              EvalDiagnostics* diag = nullptr) {
  const CubatureNodes nodes = make_nodes(spec.R, rule);
  return loglik_censored(spec, params, cluster, detail::normal_factor_nodes(nodes), nodes.w,
                         diag);
}

// Exact gradient of loglik_censored as discretized, available whenever the
// scaling matrix is the identity (probit with either marginalization, or M1
// with any link): there z depends only on (theta, beta) and the factor
// loadings enter only through the node shifts.  Differentiating the node sum
// itself keeps the gradient consistent with the objective the optimizer sees.
inline ParameterVector score_censored(const ModelSpec& spec, const ParameterVector& params,
                                      const ClusterData& cluster, const Eigen::MatrixXd& zq,
                                      const Eigen::VectorXd& w) {
  if (!spec.identity_scaling())
    throw std::logic_error("censored score requires identity scaling; use finite differences");
  const int n = cluster.size();
  const int P = spec.basis.dim();
  const bool ordinal = spec.basis.kind() == BasisKind::OrdinalThresholds;

  const auto [blo, bhi] = censoring_bounds(spec, cluster);
  const Eigen::VectorXd zlo = z_transform(spec, params, cluster, blo);
  const Eigen::VectorXd zhi = z_transform(spec, params, cluster, bhi);
  for (int i = 0; i < n; ++i)
    if (!(zlo[i] < zhi[i]))
      throw std::domain_error("censoring interval collapsed to zero width on the latent scale");

  // eta and basis rows per bound; infinite bounds contribute nothing
  auto bound_eta = [&](int i, double v) {
    return detail::linear_predictor(spec, params, cluster, i, v);
  };
  auto bound_row = [&](int i, double v) -> Eigen::VectorXd {
    (void)i;
    if (ordinal) {
      const int K = spec.basis.n_categories();
      if (v < 0.5 || v > K - 0.5) return Eigen::VectorXd::Zero(P);
    } else if (std::isinf(v) ||
               (spec.basis.kind() == BasisKind::LogLinear && v <= 0.0)) {
      return Eigen::VectorXd::Zero(P);
    }
    return spec.basis.eval(v);
  };

  Eigen::VectorXd dzhi(n), dzlo(n);
  for (int i = 0; i < n; ++i) {
    dzhi[i] = detail::dz_deta_identity(spec.link, bound_eta(i, bhi[i]), zhi[i]);
    dzlo[i] = detail::dz_deta_identity(spec.link, bound_eta(i, blo[i]), zlo[i]);
  }

  const Eigen::MatrixXd B = cluster.U * pack_lower_triangle(params.gamma, spec.R);

  // dp/dzhi, dp/dzlo per observation, dp/dLambda via node-wise outer products
  Eigen::VectorXd p_hi = Eigen::VectorXd::Zero(n), p_lo = Eigen::VectorXd::Zero(n);
  Eigen::MatrixXd p_lam = Eigen::MatrixXd::Zero(spec.R, spec.R);
  double p = 0.0;

  if (n == 1) {
    const double s = std::sqrt(1.0 + B.row(0).squaredNorm());
    const double uphi = std::isinf(zhi[0]) ? 0.0 : norm_pdf(zhi[0] / s);
    const double dnphi = std::isinf(zlo[0]) ? 0.0 : norm_pdf(zlo[0] / s);
    const double up = std::isinf(zhi[0]) ? (zhi[0] > 0 ? 1.0 : 0.0) : norm_cdf(zhi[0] / s);
    const double dn = std::isinf(zlo[0]) ? (zlo[0] > 0 ? 1.0 : 0.0) : norm_cdf(zlo[0] / s);
    p = up - dn;
    p_hi[0] = uphi / s;
    p_lo[0] = -dnphi / s;
    const double dp_ds = (std::isinf(zlo[0]) ? 0.0 : zlo[0] * dnphi / (s * s)) -
                         (std::isinf(zhi[0]) ? 0.0 : zhi[0] * uphi / (s * s));
    // ds/dLambda(r,c) = U(0,r) B(0,c) / s
    for (int r = 0; r < spec.R; ++r)
      for (int c = 0; c <= r; ++c)
        p_lam(r, c) = dp_ds * cluster.U(0, r) * B(0, c) / s;
  } else {
    const long nq = zq.rows();
    const Eigen::MatrixXd shifts = zq * B.transpose();
    Eigen::VectorXd g(n), fup(n), fdn(n), ratio(n);
    for (long k = 0; k < nq; ++k) {
      double prod = 1.0;
      for (int i = 0; i < n; ++i) {
        const double m = shifts(k, i);
        const double up = std::isinf(zhi[i]) ? (zhi[i] > 0 ? 1.0 : 0.0) : norm_cdf(zhi[i] - m);
        const double dn = std::isinf(zlo[i]) ? (zlo[i] > 0 ? 1.0 : 0.0) : norm_cdf(zlo[i] - m);
        fup[i] = std::isinf(zhi[i]) ? 0.0 : norm_pdf(zhi[i] - m);
        fdn[i] = std::isinf(zlo[i]) ? 0.0 : norm_pdf(zlo[i] - m);
        g[i] = up - dn;
        prod *= g[i];
      }
      p += w[k] * prod;
      for (int i = 0; i < n; ++i) {
        double excl;
        if (g[i] > 1e-100) {
          excl = prod / g[i];
        } else {
          excl = 1.0;
          for (int j = 0; j < n; ++j)
            if (j != i) excl *= g[j];
        }
        ratio[i] = w[k] * excl;
        p_hi[i] += ratio[i] * fup[i];
        p_lo[i] -= ratio[i] * fdn[i];
      }
      // d shift(k,i)/dLambda(r,c) = U(i,r) zq(k,c); dg/dshift = fdn - fup
      const Eigen::VectorXd t =
          cluster.U.transpose() * (ratio.array() * (fdn - fup).array()).matrix();
      p_lam += t * zq.row(k);
    }
  }

  ParameterVector score;
  score.theta = Eigen::VectorXd::Zero(params.theta.size());
  score.beta = Eigen::VectorXd::Zero(params.beta.size());
  score.gamma = Eigen::VectorXd::Zero(params.gamma.size());
  if (!(p > kProbFloor)) return score;  // clamped region: objective is flat

  for (int i = 0; i < n; ++i) {
    const int s = cluster.stratum_of(i);
    const Eigen::VectorXd row =
        bound_row(i, bhi[i]) * (p_hi[i] * dzhi[i]) + bound_row(i, blo[i]) * (p_lo[i] * dzlo[i]);
    score.theta.segment(static_cast<long>(s) * P, P) += row / p;
    score.beta -= cluster.X.row(i).transpose() * ((p_hi[i] * dzhi[i] + p_lo[i] * dzlo[i]) / p);
  }
  int m = 0;
  for (int r = 0; r < spec.R; ++r)
    for (int c = 0; c <= r; ++c) score.gamma[m++] = p_lam(r, c) / p;
  return score;
}

// Shared node set reused across clusters and evaluations; freezing it makes
// the objective a smooth deterministic function during optimization.
struct LikelihoodContext {
  Eigen::MatrixXd zq;
  Eigen::VectorXd w;
  long n_nodes = 0;

  LikelihoodContext() = default;

  LikelihoodContext(const ModelSpec& spec, const CubatureRule& rule) {
    const CubatureNodes nodes = make_nodes(spec.R, rule);
    zq = detail::normal_factor_nodes(nodes);
    w = nodes.w;
    n_nodes = zq.rows();
  }
};

inline bool needs_cubature(const ModelSpec& spec, const Dataset& data) {
  return !data.exact || spec.basis.kind() == BasisKind::OrdinalThresholds;
}

// Total log likelihood over clusters.  Per-cluster values are computed (in
// parallel when available), stored by index, and combined with a fixed-shape
// pairwise sum, so the total is bit-reproducible run to run.
inline double total_loglik(const ModelSpec& spec, const ParameterVector& params,
                           const Dataset& data, const LikelihoodContext& ctx,
                           EvalDiagnostics* diag = nullptr, unsigned threads = 0) {
  const bool censored = needs_cubature(spec, data);
  std::vector<double> parts(data.clusters.size(), 0.0);
  std::vector<long> clamps(censored ? data.clusters.size() : 0, 0);
  parallel_for(
      data.clusters.size(),
      [&](std::size_t i) {
        if (censored) {
          EvalDiagnostics local;
          parts[i] = loglik_censored(spec, params, data.clusters[i], ctx.zq, ctx.w, &local);
          clamps[i] = local.clamp_count;
        } else {
          parts[i] = loglik_continuous(spec, params, data.clusters[i]);
        }
      },
      threads);
  if (diag)
    for (long c : clamps) diag->clamp_count += c;
  return pairwise_sum(parts);
}

inline double total_loglik(const ModelSpec& spec, const ParameterVector& params,
                           const Dataset& data, const CubatureRule& rule,
                           EvalDiagnostics* diag = nullptr, unsigned threads = 0) {
  LikelihoodContext ctx;
  if (needs_cubature(spec, data)) ctx = LikelihoodContext(spec, rule);
  return total_loglik(spec, params, data, ctx, diag, threads);
}

// Total analytic score (probit, exact responses); same reduction contract as
// total_loglik.
inline ParameterVector total_score(const ModelSpec& spec, const ParameterVector& params,
                                   const Dataset& data, unsigned threads = 0) {
  std::vector<ParameterVector> parts(data.clusters.size());
  parallel_for(
      data.clusters.size(),
      [&](std::size_t i) { parts[i] = score_continuous(spec, params, data.clusters[i]); },
      threads);
  ParameterVector total;
  total.theta = Eigen::VectorXd::Zero(params.theta.size());
  total.beta = Eigen::VectorXd::Zero(params.beta.size());
  total.gamma = Eigen::VectorXd::Zero(params.gamma.size());
  for (const auto& p : parts) {
    total.theta += p.theta;
    total.beta += p.beta;
    total.gamma += p.gamma;
  }
  return total;
}

}  // namespace mitram
