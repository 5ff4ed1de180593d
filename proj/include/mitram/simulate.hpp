#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitram/covariance.hpp"
#include "mitram/data.hpp"
#include "mitram/normal.hpp"
#include "mitram/util.hpp"

namespace mitram {

namespace detail {

// Counter-based uniform/normal stream: every cluster gets its own counter
// offset, so simulation is reproducible independent of evaluation order.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : ctr_(seed) {}

  double uniform() {
    constexpr double scale = 1.0 / 18446744073709551616.0;  // 2^-64
    return (static_cast<double>(splitmix64(ctr_++)) + 0.5) * scale;
  }

  double normal() { return norm_quantile(uniform()); }

 private:
  std::uint64_t ctr_;
};

}  // namespace detail

struct CovariateSpec {
  enum class Kind { Normal, Bernoulli, Uniform, Seq };
  std::string name;
  Kind kind = Kind::Normal;
  double a = 0.0;  // mean / probability / lower endpoint
  double b = 1.0;  // sd / upper endpoint
};

// Generative description of a dataset: the model and true parameters, cluster
// count and size range, per-observation covariate generators, and which
// columns (by name, or the literal "1") enter the fixed and random designs.
// interval_width > 0 coarsens continuous responses onto that grid, and
// responses beyond right_censor are reported as right-open intervals.
struct SimulationDesign {
  ModelSpec model;
  ParameterVector truth;
  int n_clusters = 100;
  int size_lo = 1;
  int size_hi = 1;
  std::uint64_t seed = 1;
  std::vector<CovariateSpec> covariates;
  std::vector<std::string> fixed_cols;
  std::vector<std::string> random_cols;
  double interval_width = 0.0;
  double right_censor = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double covariate_value(const CovariateSpec& cs, int obs_index, RandomStream& rng) {
  switch (cs.kind) {
    case CovariateSpec::Kind::Normal: return cs.a + cs.b * rng.normal();
    case CovariateSpec::Kind::Bernoulli: return rng.uniform() < cs.a ? 1.0 : 0.0;
    case CovariateSpec::Kind::Uniform: return cs.a + (cs.b - cs.a) * rng.uniform();
    case CovariateSpec::Kind::Seq: return static_cast<double>(obs_index);
  }
  return 0.0;
}

// h^{-1}(t) for the continuous bases; Bernstein inverts by bisection and
// reports targets beyond the achievable range as boundary hits.
inline double invert_transformation(const TransformationBasis& basis,
                                    const Eigen::VectorXd& theta, double t, bool* boundary) {
  switch (basis.kind()) {
    case BasisKind::Linear:
      return (t + theta[1]) / theta[0];
    case BasisKind::LogLinear:
      return std::exp((t - theta[0]) / theta[1]);
    case BasisKind::Bernstein: {
      double lo = basis.support_lo(), hi = basis.support_hi();
      const double hlo = basis.eval(lo).dot(theta), hhi = basis.eval(hi).dot(theta);
      if (t <= hlo) {
        *boundary = true;
        return lo;
      }
      if (t >= hhi) {
        *boundary = true;
        return hi;
      }
      for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::fabs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (basis.eval(mid).dot(theta) < t ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    case BasisKind::OrdinalThresholds:
      throw std::logic_error("ordinal responses are generated by thresholding, not inversion");
  }
  return 0.0;
}

}  // namespace detail

struct SimulationInfo {
  long boundary_hits = 0;  // continuous targets outside the invertible range
};

// Draws a dataset from the model: per cluster, R standard normal factors and
// unit noise give the latent vector z; the response solves
// h(y) = x'beta + d * F^{-1}(Phi(z/d)) with d the scheme's per-observation
// scale (identically one under identity scaling).  Ordinal responses bin the
// same target against the cutpoints.
inline Dataset simulate(const SimulationDesign& design, SimulationInfo* info = nullptr) {
  const ModelSpec& spec = design.model;
  if (spec.n_strata != 1)
    throw std::invalid_argument("simulation covers single-stratum models");
  if (design.size_lo < 1 || design.size_hi < design.size_lo)
    throw std::invalid_argument("cluster size range is empty");
  const bool ordinal = spec.basis.kind() == BasisKind::OrdinalThresholds;
  const bool censor =
      design.interval_width > 0.0 || std::isfinite(design.right_censor);
  if (ordinal && censor)
    throw std::invalid_argument("interval coarsening applies to continuous responses only");

  // column tokens resolve against the generated covariates or the constant 1
  auto find_cov = [&](const std::string& tok) -> int {
    if (tok == "1") return -1;
    for (std::size_t j = 0; j < design.covariates.size(); ++j)
      if (design.covariates[j].name == tok) return static_cast<int>(j);
    throw std::invalid_argument("design column references unknown covariate: " + tok);
  };
  std::vector<int> fixed_src, random_src;
  for (const auto& tok : design.fixed_cols) fixed_src.push_back(find_cov(tok));
  for (const auto& tok : design.random_cols) random_src.push_back(find_cov(tok));

  const Eigen::MatrixXd lambda = pack_lower_triangle(design.truth.gamma, spec.R);
  const Eigen::VectorXd& theta = design.truth.theta;
  const bool identity = spec.identity_scaling();
  const bool probit = spec.link.kind() == LinkKind::Probit;

  Dataset data;
  data.exact = !censor;  // ordinal categories are stored as exact codes
  data.fixed_names = design.fixed_cols;
  data.random_names = design.random_cols;
  data.clusters.resize(static_cast<std::size_t>(design.n_clusters));
  SimulationInfo local;

  for (int ci = 0; ci < design.n_clusters; ++ci) {
    detail::RandomStream rng(splitmix64(design.seed) + (static_cast<std::uint64_t>(ci) << 32));
    ClusterData& cl = data.clusters[static_cast<std::size_t>(ci)];
    cl.id = "c" + std::to_string(ci + 1);
    const int n =
        design.size_lo +
        static_cast<int>(rng.uniform() * static_cast<double>(design.size_hi - design.size_lo + 1));

    Eigen::MatrixXd cov(n, static_cast<long>(design.covariates.size()));
    for (int i = 0; i < n; ++i)
      for (std::size_t j = 0; j < design.covariates.size(); ++j)
        cov(i, static_cast<long>(j)) = detail::covariate_value(design.covariates[j], i, rng);

    cl.X.resize(n, static_cast<long>(fixed_src.size()));
    cl.U.resize(n, static_cast<long>(random_src.size()));
    for (int i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < fixed_src.size(); ++j)
        cl.X(i, static_cast<long>(j)) = fixed_src[j] < 0 ? 1.0 : cov(i, fixed_src[j]);
      for (std::size_t j = 0; j < random_src.size(); ++j)
        cl.U(i, static_cast<long>(j)) = random_src[j] < 0 ? 1.0 : cov(i, random_src[j]);
    }

    Eigen::VectorXd w(spec.R);
    for (int r = 0; r < spec.R; ++r) w[r] = rng.normal();
    const Eigen::MatrixXd B = cl.U * lambda;

    cl.lo.resize(n);
    cl.hi.resize(n);
    cl.exact = data.exact;
    for (int i = 0; i < n; ++i) {
      const double z = B.row(i).dot(w) + rng.normal();
      const double d = identity ? 1.0 : std::sqrt(1.0 + B.row(i).squaredNorm());
      const double t =
          cl.X.row(i).dot(design.truth.beta) + (probit ? z : d * spec.link.quantile(norm_cdf(z / d)));
      if (ordinal) {
        int c = 1;
        for (int k = 0; k < theta.size() && theta[k] < t; ++k) ++c;
        cl.lo[i] = cl.hi[i] = static_cast<double>(c);
        continue;
      }
      bool boundary = false;
      const double y = detail::invert_transformation(spec.basis, theta, t, &boundary);
      if (boundary) ++local.boundary_hits;
      if (!censor) {
        cl.lo[i] = cl.hi[i] = y;
      } else if (y > design.right_censor) {
        cl.lo[i] = design.right_censor;
        cl.hi[i] = std::numeric_limits<double>::infinity();
      } else if (design.interval_width > 0.0) {
        const double k = std::floor(y / design.interval_width);
        cl.lo[i] = k * design.interval_width;
        cl.hi[i] = (k + 1.0) * design.interval_width;
      } else {
        cl.lo[i] = cl.hi[i] = y;
      }
    }
  }
  if (info) *info = local;
  data.validate();
  return data;
}

struct MvnProbEstimate {
  double prob = 0.0;
  double ci99_halfwidth = 0.0;
  long n_draws = 0;
};

// Plain Monte Carlo estimate of P(lo < Z <= hi) for Z ~ N(0, Sigma), with a
// 99% binomial confidence half-width.  Deliberately independent of the
// cubature machinery: dense Cholesky, raw normal draws, nothing shared.
inline MvnProbEstimate mvn_prob_oracle(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                       const Eigen::MatrixXd& sigma, long n_draws,
                                       std::uint64_t seed) {
  const int n = static_cast<int>(lo.size());
  if (hi.size() != n || sigma.rows() != n || sigma.cols() != n)
    throw std::invalid_argument("oracle dimensions disagree");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("oracle covariance is not positive definite");
  const Eigen::MatrixXd L = llt.matrixL();

  detail::RandomStream rng(splitmix64(seed ^ 0xACC0FFEEULL));
  Eigen::VectorXd g(n);
  long hits = 0;
  for (long d = 0; d < n_draws; ++d) {
    for (int i = 0; i < n; ++i) g[i] = rng.normal();
    bool inside = true;
    for (int i = 0; i < n && inside; ++i) {
      const double acc = L.row(i).head(i + 1).dot(g.head(i + 1));
      inside = acc > lo[i] && acc <= hi[i];
    }
    if (inside) ++hits;
  }
  MvnProbEstimate est;
  est.n_draws = n_draws;
  est.prob = static_cast<double>(hits) / static_cast<double>(n_draws);
  const double se = std::sqrt(std::max(est.prob * (1.0 - est.prob), 1e-12) /
                              static_cast<double>(n_draws));
  est.ci99_halfwidth = 2.5758293035489004 * se;
  return est;
}

}  // namespace mitram
