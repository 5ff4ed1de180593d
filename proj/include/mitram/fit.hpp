#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mitram/likelihood.hpp"
#include "mitram/optim.hpp"

namespace mitram {

struct FitOptions {
  CubatureRule rule;
  int max_outer = 25;
  int max_inner = 200;
  double grad_tol = 1e-6;
  double constraint_tol = 1e-8;
  std::optional<Eigen::VectorXd> fix_gamma;
  unsigned threads = 0;
  bool compute_vcov = true;
  bool refine_check = true;
};

struct ConvergenceRecord {
  bool converged = false;
  int outer_iterations = 0;
  int inner_iterations = 0;
  double grad_norm = 0.0;
  double max_violation = 0.0;
  std::vector<int> active_constraints;  // row indices of the full system
  std::vector<std::pair<double, double>> merit_path;
};

struct FitResult {
  ModelSpec spec;
  ParameterVector params;
  double loglik = 0.0;
  Eigen::MatrixXd vcov;
  ConvergenceRecord convergence;
  std::vector<std::string> warnings;
  std::vector<std::string> names;
  long n_nodes = 0;
};

// Stable parameter names in flat order: transformation block(s), fixed
// effects by column name, then the packed factor entries.
inline std::vector<std::string> parameter_names(const ModelSpec& spec, const Dataset& data) {
  std::vector<std::string> names;
  const int P = spec.basis.dim();
  for (int s = 0; s < spec.n_strata; ++s)
    for (int k = 0; k < P; ++k) {
      std::ostringstream os;
      os << "theta_";
      if (spec.n_strata > 1) os << "s" << (s + 1) << "_";
      os << (k + 1);
      names.push_back(os.str());
    }
  for (const auto& f : data.fixed_names) names.push_back("beta_" + f);
  for (int r = 0; r < spec.R; ++r)
    for (int c = 0; c <= r; ++c) {
      std::ostringstream os;
      os << "gamma_" << (r + 1) << "_" << (c + 1);
      names.push_back(os.str());
    }
  return names;
}

// Linear inequalities on the flat parameter vector: the basis monotonicity
// rows repeated per stratum plus nonnegativity of the factor diagonal.
inline ConstraintSystem assemble_constraints(const ModelSpec& spec, int n_beta) {
  const ConstraintSystem base = spec.basis.constraints();
  const int P = spec.basis.dim();
  const int n = spec.n_strata * P + n_beta + spec.gamma_dim();
  const int rows = base.rows() * spec.n_strata + spec.R;
  ConstraintSystem cons;
  cons.coef = Eigen::MatrixXd::Zero(rows, n);
  cons.bound = Eigen::VectorXd::Zero(rows);
  int row = 0;
  for (int s = 0; s < spec.n_strata; ++s)
    for (int j = 0; j < base.rows(); ++j, ++row) {
      cons.coef.block(row, s * P, 1, P) = base.coef.row(j);
      cons.bound[row] = base.bound[j];
    }
  const int gamma_off = spec.n_strata * P + n_beta;
  for (int pos : lambda_diagonal_positions(spec.R)) {
    cons.coef(row, gamma_off + pos) = 1.0;
    cons.bound[row] = 0.0;
    ++row;
  }
  return cons;
}

namespace detail {

// Restriction of a constraint system to the free coordinates; rows that only
// touch fixed coordinates drop out, the rest absorb the fixed part into the
// bound.
inline ConstraintSystem restrict_constraints(const ConstraintSystem& cons,
                                             const std::vector<int>& free_idx,
                                             const Eigen::VectorXd& x_full) {
  if (static_cast<int>(free_idx.size()) == x_full.size()) return cons;
  std::vector<int> keep;
  for (int j = 0; j < cons.rows(); ++j) {
    for (int i : free_idx)
      if (cons.coef(j, i) != 0.0) {
        keep.push_back(j);
        break;
      }
  }
  ConstraintSystem out;
  out.coef = Eigen::MatrixXd::Zero(static_cast<int>(keep.size()), static_cast<int>(free_idx.size()));
  out.bound = Eigen::VectorXd::Zero(static_cast<int>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const int j = keep[r];
    double shift = cons.bound[j];
    shift -= cons.coef.row(j).dot(x_full);  // remove full contribution...
    for (std::size_t c = 0; c < free_idx.size(); ++c) {
      out.coef(static_cast<int>(r), static_cast<int>(c)) = cons.coef(j, free_idx[c]);
      shift += cons.coef(j, free_idx[c]) * x_full[free_idx[c]];  // ...and add back the free part
    }
    out.bound[static_cast<int>(r)] = shift;
  }
  return out;
}

enum class GradientPath { AnalyticContinuous, AnalyticCensored, FiniteDifference };

inline GradientPath gradient_path(const ModelSpec& spec, const Dataset& data) {
  if (needs_cubature(spec, data))
    return spec.identity_scaling() ? GradientPath::AnalyticCensored
                                   : GradientPath::FiniteDifference;
  return spec.link.kind() == LinkKind::Probit ? GradientPath::AnalyticContinuous
                                              : GradientPath::FiniteDifference;
}

}  // namespace detail

// Analytic total score when one exists (flat layout), dispatching between the
// exact-response and censored routes.
inline Eigen::VectorXd total_score_flat(const ModelSpec& spec, const ParameterVector& params,
                                        const Dataset& data, const LikelihoodContext& ctx,
                                        unsigned threads = 0) {
  const bool censored = needs_cubature(spec, data);
  std::vector<ParameterVector> parts(data.clusters.size());
  parallel_for(
      data.clusters.size(),
      [&](std::size_t i) {
        parts[i] = censored
                       ? score_censored(spec, params, data.clusters[i], ctx.zq, ctx.w)
                       : score_continuous(spec, params, data.clusters[i]);
      },
      threads);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(params.size());
  for (const auto& p : parts) g += p.flat();
  return g;
}

// Negated numerical Hessian of the total log likelihood at `params`.
// With an analytic score the Hessian comes from central differences of the
// score (step 1e-5); otherwise from second differences of the log likelihood
// itself (step 1e-4).  Symmetrized either way.
inline Eigen::MatrixXd observed_information(const ModelSpec& spec, const Dataset& data,
                                            const ParameterVector& params,
                                            const CubatureRule& rule, unsigned threads = 0) {
  const int n_theta = static_cast<int>(params.theta.size());
  const int n_beta = static_cast<int>(params.beta.size());
  const int n_gamma = static_cast<int>(params.gamma.size());
  const int n = n_theta + n_beta + n_gamma;
  const Eigen::VectorXd x = params.flat();

  LikelihoodContext ctx;
  if (needs_cubature(spec, data)) ctx = LikelihoodContext(spec, rule);

  const auto path = detail::gradient_path(spec, data);
  Eigen::MatrixXd H(n, n);
  if (path != detail::GradientPath::FiniteDifference) {
    auto score_at = [&](const Eigen::VectorXd& xx) {
      return total_score_flat(spec, ParameterVector::unflatten(xx, n_theta, n_beta, n_gamma),
                              data, ctx, threads);
    };
    Eigen::VectorXd xp = x;
    for (int j = 0; j < n; ++j) {
      const double h = 1e-5 * std::max(1.0, std::fabs(x[j]));
      xp[j] = x[j] + h;
      const Eigen::VectorXd gp = score_at(xp);
      xp[j] = x[j] - h;
      const Eigen::VectorXd gm = score_at(xp);
      xp[j] = x[j];
      H.col(j) = (gp - gm) / (2.0 * h);
    }
  } else {
    auto ll = [&](const Eigen::VectorXd& xx) {
      return total_loglik(spec, ParameterVector::unflatten(xx, n_theta, n_beta, n_gamma),
                          data, ctx, nullptr, threads);
    };
    const double f0 = ll(x);
    Eigen::VectorXd xp = x;
    Eigen::VectorXd hs(n);
    for (int j = 0; j < n; ++j) hs[j] = 1e-4 * std::max(1.0, std::fabs(x[j]));
    for (int j = 0; j < n; ++j) {
      xp[j] = x[j] + hs[j];
      const double fp = ll(xp);
      xp[j] = x[j] - hs[j];
      const double fm = ll(xp);
      xp[j] = x[j];
      H(j, j) = (fp - 2.0 * f0 + fm) / (hs[j] * hs[j]);
    }
    for (int j = 0; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        xp[j] = x[j] + hs[j]; xp[k] = x[k] + hs[k];
        const double fpp = ll(xp);
        xp[k] = x[k] - hs[k];
        const double fpm = ll(xp);
        xp[j] = x[j] - hs[j]; xp[k] = x[k] + hs[k];
        const double fmp = ll(xp);
        xp[k] = x[k] - hs[k];
        const double fmm = ll(xp);
        xp[j] = x[j]; xp[k] = x[k];
        H(j, k) = H(k, j) = (fpp - fpm - fmp + fmm) / (4.0 * hs[j] * hs[k]);
      }
  }
  Eigen::MatrixXd info = -0.5 * (H + H.transpose());
  return info;
}

// Pseudo-inverse through the eigendecomposition; flags when the information
// was singular or indefinite so callers can attach a warning to the fit.
inline Eigen::MatrixXd invert_information(const Eigen::MatrixXd& info, bool* degenerate) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  bool degen = false;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev[i] > tol)
      inv[i] = 1.0 / ev[i];
    else
      degen = true;
  }
  if (degenerate) *degenerate = degen;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// Empirical starting values: rank-based transformation plus least squares for
// the regression part, cutpoints at link-transformed cumulative proportions
// for ordinal responses, then a short independence prefit before the factor
// diagonal is opened at 0.1.
inline FitResult maximize(const ModelSpec& spec, const Dataset& data,
                          const ParameterVector& init, const FitOptions& options);

namespace detail {

inline double column_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

inline ParameterVector initial_params(const ModelSpec& spec, const Dataset& data,
                                      const CubatureRule& rule = {}, unsigned threads = 0) {
  data.validate();
  if (spec.n_strata != data.n_strata())
    throw std::invalid_argument("model strata count does not match the data");
  const int P = spec.basis.dim();
  const int S = spec.n_strata;
  const int n_beta = data.n_fixed();

  ParameterVector p;
  p.beta = Eigen::VectorXd::Zero(n_beta);
  p.gamma = Eigen::VectorXd::Zero(spec.gamma_dim());

  if (spec.basis.kind() == BasisKind::OrdinalThresholds) {
    const int K = spec.basis.n_categories();
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
    long n = 0;
    for (const auto& cl : data.clusters)
      for (int i = 0; i < cl.size(); ++i) {
        const long c = std::lround(cl.lo[i]);
        if (c < 1 || c > K)
          throw std::invalid_argument("ordinal response outside 1..K in cluster " + cl.id);
        counts[c - 1] += 1.0;
        ++n;
      }
    if (n == 0) throw std::invalid_argument("dataset is empty");
    Eigen::VectorXd theta0(K - 1);
    double cum = 0.0;
    for (int k = 0; k < K - 1; ++k) {
      cum += counts[k];
      const double prop =
          std::min(1.0 - 1.0 / (n + 1.0), std::max(1.0 / (n + 1.0), cum / n));
      theta0[k] = spec.link.quantile(prop);
      if (k > 0 && theta0[k] <= theta0[k - 1] + kMonotoneSlack)
        theta0[k] = theta0[k - 1] + 1e-3;
    }
    p.theta = theta0.replicate(S, 1);
  } else {
    // pseudo-responses: exact values, interval midpoints, or the finite bound
    std::vector<std::vector<double>> pseudo(S);
    std::vector<std::pair<int, double>> per_obs;  // (stratum, pseudo) in data order
    for (const auto& cl : data.clusters)
      for (int i = 0; i < cl.size(); ++i) {
        double v;
        if (cl.exact) {
          v = cl.lo[i];
        } else {
          const bool flo = std::isfinite(cl.lo[i]), fhi = std::isfinite(cl.hi[i]);
          if (flo && fhi)
            v = 0.5 * (cl.lo[i] + cl.hi[i]);
          else if (flo)
            v = cl.lo[i];
          else if (fhi)
            v = cl.hi[i];
          else
            throw std::invalid_argument("observation censored on both sides carries no information");
        }
        const int s = cl.stratum_of(i);
        pseudo[s].push_back(v);
        per_obs.emplace_back(s, v);
      }

    // per-stratum mid-ranks mapped through the link quantile
    std::vector<std::vector<double>> sorted = pseudo;
    for (auto& v : sorted) {
      if (v.size() < 2 || detail::column_sd(v) == 0.0)
        throw std::invalid_argument("responses are constant within a stratum; model is degenerate");
      std::sort(v.begin(), v.end());
    }
    const long n_obs = static_cast<long>(per_obs.size());
    Eigen::VectorXd t(n_obs);
    Eigen::MatrixXd design(n_obs, static_cast<long>(S) * P + n_beta);
    long row = 0;
    for (const auto& cl : data.clusters)
      for (int i = 0; i < cl.size(); ++i, ++row) {
        const auto [s, v] = per_obs[static_cast<std::size_t>(row)];
        const auto& vs = sorted[s];
        const auto lo_it = std::lower_bound(vs.begin(), vs.end(), v);
        const auto hi_it = std::upper_bound(vs.begin(), vs.end(), v);
        const double rank = 0.5 * static_cast<double>((lo_it - vs.begin()) + (hi_it - vs.begin()) + 1);
        t[row] = spec.link.quantile((rank - 0.5) / static_cast<double>(vs.size()));
        design.row(row).setZero();
        design.block(row, static_cast<long>(s) * P, 1, P) = spec.basis.eval(v).transpose();
        design.block(row, static_cast<long>(S) * P, 1, n_beta) = -cl.X.row(i);
      }
    const Eigen::VectorXd sol = design.colPivHouseholderQr().solve(t);
    p.theta = sol.head(static_cast<long>(S) * P);
    p.beta = sol.tail(n_beta);

    // repair any stratum block that violates monotonicity
    const ConstraintSystem base = spec.basis.constraints();
    for (int s = 0; s < S; ++s) {
      Eigen::VectorXd block = p.theta.segment(static_cast<long>(s) * P, P);
      if (base.satisfied(block)) continue;
      switch (spec.basis.kind()) {
        case BasisKind::Linear: {
          const double sd = detail::column_sd(pseudo[s]);
          block[0] = 1.0 / sd;
          double mean = 0.0;
          for (double v : pseudo[s]) mean += v;
          mean /= static_cast<double>(pseudo[s].size());
          block[1] = mean / sd;
          break;
        }
        case BasisKind::LogLinear: {
          std::vector<double> lg;
          lg.reserve(pseudo[s].size());
          for (double v : pseudo[s]) {
            if (v <= 0.0) throw std::invalid_argument("loglinear basis requires positive responses");
            lg.push_back(std::log(v));
          }
          const double sd = detail::column_sd(lg);
          if (sd == 0.0) throw std::invalid_argument("responses are constant within a stratum; model is degenerate");
          double mean = 0.0;
          for (double v : lg) mean += v;
          mean /= static_cast<double>(lg.size());
          block[1] = 1.0 / sd;
          block[0] = -mean / sd;
          break;
        }
        default: {  // isotonic forward pass
          const double span = block.maxCoeff() - block.minCoeff();
          const double step = std::max(1e-4, 1e-2 * span / std::max(1, P - 1));
          for (int k = 1; k < P; ++k)
            block[k] = std::max(block[k], block[k - 1] + step);
          break;
        }
      }
      p.theta.segment(static_cast<long>(s) * P, P) = block;
    }
  }

  // independence prefit sharpens (theta, beta) with the factor switched off
  FitOptions pre;
  pre.rule = rule;
  pre.fix_gamma = Eigen::VectorXd::Zero(spec.gamma_dim());
  pre.max_inner = 150;
  pre.max_outer = 12;
  pre.compute_vcov = false;
  pre.refine_check = false;
  pre.threads = threads;
  const FitResult f = maximize(spec, data, p, pre);
  p.theta = f.params.theta;
  p.beta = f.params.beta;

  for (int pos : lambda_diagonal_positions(spec.R)) p.gamma[pos] = 0.1;
  return p;
}

inline FitResult maximize(const ModelSpec& spec, const Dataset& data,
                          const ParameterVector& init, const FitOptions& options) {
  data.validate();
  if (spec.n_strata != data.n_strata())
    throw std::invalid_argument("model strata count does not match the data");
  const int n_theta = spec.theta_dim();
  const int n_beta = data.n_fixed();
  const int n_gamma = spec.gamma_dim();
  const int n = n_theta + n_beta + n_gamma;
  if (init.theta.size() != n_theta || init.beta.size() != n_beta ||
      init.gamma.size() != n_gamma)
    throw std::invalid_argument("initial parameter blocks do not match the model layout");

  LikelihoodContext ctx;
  const bool censored = needs_cubature(spec, data);
  if (censored) ctx = LikelihoodContext(spec, options.rule);

  Eigen::VectorXd x_full = init.flat();
  std::vector<int> free_idx;
  if (options.fix_gamma) {
    if (options.fix_gamma->size() != n_gamma)
      throw std::invalid_argument("fixed gamma length does not match R(R+1)/2");
    x_full.tail(n_gamma) = *options.fix_gamma;
    for (int j = 0; j < n_theta + n_beta; ++j) free_idx.push_back(j);
  } else {
    for (int j = 0; j < n; ++j) free_idx.push_back(j);
  }

  auto embed = [&](const Eigen::VectorXd& xf) {
    Eigen::VectorXd x = x_full;
    for (std::size_t j = 0; j < free_idx.size(); ++j) x[free_idx[j]] = xf[j];
    return x;
  };
  auto objective = [&](const Eigen::VectorXd& xf) {
    try {
      const ParameterVector p =
          ParameterVector::unflatten(embed(xf), n_theta, n_beta, n_gamma);
      return -total_loglik(spec, p, data, ctx, nullptr, options.threads);
    } catch (const InvalidParameterError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const std::domain_error&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  const auto path = detail::gradient_path(spec, data);
  GradientFn gradient;
  if (path == detail::GradientPath::FiniteDifference) {
    gradient = [&](const Eigen::VectorXd& xf) { return fd_gradient(objective, xf, 1e-6); };
  } else {
    gradient = [&](const Eigen::VectorXd& xf) {
      const ParameterVector p =
          ParameterVector::unflatten(embed(xf), n_theta, n_beta, n_gamma);
      const Eigen::VectorXd g = total_score_flat(spec, p, data, ctx, options.threads);
      Eigen::VectorXd gf(free_idx.size());
      for (std::size_t j = 0; j < free_idx.size(); ++j) gf[j] = -g[free_idx[j]];
      return gf;
    };
  }

  const ConstraintSystem cons_full = assemble_constraints(spec, n_beta);
  const ConstraintSystem cons = detail::restrict_constraints(cons_full, free_idx, x_full);

  AuglagOptions aopts;
  aopts.inner.max_iter = options.max_inner;
  aopts.inner.grad_tol = options.grad_tol;
  aopts.max_outer = options.max_outer;
  aopts.constraint_tol = options.constraint_tol;
  Eigen::VectorXd x0f(free_idx.size());
  for (std::size_t j = 0; j < free_idx.size(); ++j) x0f[j] = x_full[free_idx[j]];
  const AuglagResult opt = auglag_minimize(objective, gradient, cons, x0f, aopts);

  FitResult res;
  res.spec = spec;
  res.names = parameter_names(spec, data);
  res.n_nodes = censored ? ctx.n_nodes : 0;
  x_full = embed(opt.x);
  res.params = ParameterVector::unflatten(x_full, n_theta, n_beta, n_gamma);

  EvalDiagnostics diag;
  res.loglik = total_loglik(spec, res.params, data, ctx, &diag, options.threads);
  res.convergence.converged = opt.converged;
  res.convergence.outer_iterations = opt.outer_iterations;
  res.convergence.inner_iterations = opt.inner_iterations;
  res.convergence.grad_norm = opt.grad_norm;
  res.convergence.max_violation = opt.max_violation;
  res.convergence.merit_path = opt.merit_path;
  const Eigen::VectorXd slack = cons_full.coef * x_full - cons_full.bound;
  for (int j = 0; j < cons_full.rows(); ++j)
    if (slack[j] < 1e-6) res.convergence.active_constraints.push_back(j);

  if (diag.clamp_count > 0) {
    res.convergence.converged = false;
    std::ostringstream os;
    os << diag.clamp_count
       << " cluster probabilities still underflow at the solution; estimates are unreliable";
    res.warnings.push_back(os.str());
  }
  if (!opt.converged)
    res.warnings.push_back("optimizer did not meet the convergence tolerances");

  if (censored && options.refine_check) {
    CubatureRule finer = options.rule;
    if (finer.kind == CubatureKind::QuasiMonteCarlo)
      finer.n = 2 * (finer.n > 0 ? detail::round_up_pow2(finer.n) : default_qmc_nodes(spec.R));
    else
      finer.n = (finer.n > 0 ? finer.n : default_sparse_level(spec.R)) + 1;
    const double ll2 = total_loglik(spec, res.params, data, finer, nullptr, options.threads);
    if (std::fabs(ll2 - res.loglik) > 0.01) {
      std::ostringstream os;
      os << "doubling the integration nodes moved the log likelihood by "
         << (ll2 - res.loglik) << "; increase --nodes";
      res.warnings.push_back(os.str());
    }
  }

  if (options.compute_vcov) {
    const Eigen::MatrixXd info =
        observed_information(spec, data, res.params, options.rule, options.threads);
    bool degen = false;
    if (options.fix_gamma) {
      // conditional covariance of the free block only
      const int nf = static_cast<int>(free_idx.size());
      Eigen::MatrixXd sub(nf, nf);
      for (int a = 0; a < nf; ++a)
        for (int b = 0; b < nf; ++b) sub(a, b) = info(free_idx[a], free_idx[b]);
      const Eigen::MatrixXd vsub = invert_information(sub, &degen);
      res.vcov = Eigen::MatrixXd::Zero(n, n);
      for (int a = 0; a < nf; ++a)
        for (int b = 0; b < nf; ++b) res.vcov(free_idx[a], free_idx[b]) = vsub(a, b);
    } else {
      res.vcov = invert_information(info, &degen);
    }
    if (degen)
      res.warnings.push_back(
          "observed information is singular or indefinite; covariance is a pseudo-inverse");
  } else {
    res.vcov = Eigen::MatrixXd::Zero(n, n);
  }
  return res;
}

}  // namespace mitram
