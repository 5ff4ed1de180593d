#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "mitram/basis.hpp"
#include "mitram/covariance.hpp"
#include "mitram/link.hpp"

namespace mitram {

// Which scaling matrix D_i standardizes the latent vector before F is
// applied: the identity (marginal cdf passes through an extra normal
// quantile) or the square root of diag(Sigma_i) (marginal cdf keeps the
// shape of F itself).  For the probit family the two coincide as joint
// models, and the code canonicalizes that case to the identity.
enum class Marginalization { M1, M2 };

// One cluster: response bounds, fixed- and random-effects design rows, and a
// per-observation stratum index selecting the transformation block.
// Exact observations carry lo == hi; censored ones carry lo < hi with
// +/-infinity allowed on either side.  Ordinal responses are stored as exact
// category codes 1..K and expanded to bounds inside the likelihood.
struct ClusterData {
  std::string id;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  Eigen::MatrixXd X;
  Eigen::MatrixXd U;
  Eigen::VectorXi stratum;  // 0-based; empty means a single stratum
  bool exact = true;

  int size() const { return static_cast<int>(lo.size()); }

  int stratum_of(int i) const { return stratum.size() ? stratum[i] : 0; }

  void validate() const {
    const int n = size();
    if (hi.size() != n || X.rows() != n || U.rows() != n)
      throw std::invalid_argument("cluster " + id + ": ragged row counts");
    if (stratum.size() && stratum.size() != n)
      throw std::invalid_argument("cluster " + id + ": ragged stratum column");
    for (int i = 0; i < n; ++i) {
      if (exact) {
        if (lo[i] != hi[i] || !std::isfinite(lo[i]))
          throw std::invalid_argument("cluster " + id + ": exact responses must be finite with lo == hi");
      } else if (!(lo[i] < hi[i])) {
        throw std::invalid_argument("cluster " + id + ": censoring bounds must satisfy lo < hi");
      }
    }
  }
};

struct Dataset {
  std::vector<ClusterData> clusters;
  std::vector<std::string> fixed_names;
  std::vector<std::string> random_names;
  std::vector<std::string> strata_labels;  // size n_strata; single unnamed stratum if empty
  bool exact = true;

  int n_clusters() const { return static_cast<int>(clusters.size()); }

  int n_obs() const {
    int n = 0;
    for (const auto& c : clusters) n += c.size();
    return n;
  }

  int n_strata() const { return strata_labels.empty() ? 1 : static_cast<int>(strata_labels.size()); }

  int n_fixed() const { return static_cast<int>(fixed_names.size()); }
  int n_random() const { return static_cast<int>(random_names.size()); }

  void validate() const {
    for (const auto& c : clusters) {
      c.validate();
      if (c.exact != exact) throw std::invalid_argument("mixed exact/censored clusters");
      if (c.X.cols() != n_fixed() || c.U.cols() != n_random())
        throw std::invalid_argument("cluster " + c.id + ": design width mismatch");
    }
  }
};

// Everything that fixes the model family apart from the parameter values.
struct ModelSpec {
  TransformationBasis basis;
  int n_strata = 1;  // one transformation block per stratum
  LinkFamily link;
  Marginalization marg = Marginalization::M1;
  int R = 1;

  int theta_dim() const { return n_strata * basis.dim(); }
  int gamma_dim() const { return lambda_param_count(R); }

  // The standardization drops out of the probit family entirely, so treat it
  // as the identity there and skip two quantile round trips per observation.
  bool identity_scaling() const {
    return marg == Marginalization::M1 || link.kind() == LinkKind::Probit;
  }
};

// Packed parameters: transformation coefficients theta (one block per
// stratum), fixed effects beta, covariance factor entries gamma (row-major
// lower triangle of Lambda).  Flat order is [theta; beta; gamma].
struct ParameterVector {
  Eigen::VectorXd theta;
  Eigen::VectorXd beta;
  Eigen::VectorXd gamma;

  int size() const {
    return static_cast<int>(theta.size() + beta.size() + gamma.size());
  }

  Eigen::VectorXd flat() const {
    Eigen::VectorXd x(size());
    x << theta, beta, gamma;
    return x;
  }

  static ParameterVector unflatten(const Eigen::VectorXd& x, int n_theta, int n_beta,
                                   int n_gamma) {
    if (x.size() != n_theta + n_beta + n_gamma)
      throw std::invalid_argument("flat parameter length mismatch");
    ParameterVector p;
    p.theta = x.segment(0, n_theta);
    p.beta = x.segment(n_theta, n_beta);
    p.gamma = x.segment(n_theta + n_beta, n_gamma);
    return p;
  }

  // theta block for one stratum.
  Eigen::VectorXd theta_block(int stratum, int P) const {
    return theta.segment(static_cast<long>(stratum) * P, P);
  }
};

}  // namespace mitram
