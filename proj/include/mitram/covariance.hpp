#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mitram {

inline int lambda_param_count(int R) { return R * (R + 1) / 2; }

// Unpacks gamma into the lower-triangular R x R factor Lambda, row-major over
// the triangle: (1,1), (2,1), (2,2), (3,1), ...  No sign validation; the
// optimizer is allowed to probe slightly negative diagonals while the
// constraint handler pushes them back.
inline Eigen::MatrixXd pack_lower_triangle(const Eigen::VectorXd& gamma, int R) {
  if (gamma.size() != lambda_param_count(R))
    throw std::invalid_argument("gamma length does not match R(R+1)/2");
  Eigen::MatrixXd lambda = Eigen::MatrixXd::Zero(R, R);
  int m = 0;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c <= r; ++c) lambda(r, c) = gamma[m++];
  return lambda;
}

// Flat positions of the diagonal entries of Lambda inside gamma.
inline std::vector<int> lambda_diagonal_positions(int R) {
  std::vector<int> pos;
  pos.reserve(R);
  int m = 0;
  for (int r = 0; r < R; ++r) {
    m += r;           // skip the off-diagonal entries of row r
    pos.push_back(m); // (r, r)
    ++m;
  }
  return pos;
}

// Validating variant: the identified parameterization requires a nonnegative
// diagonal (column sign flips leave Lambda*Lambda' unchanged).
inline Eigen::MatrixXd build_lambda(const Eigen::VectorXd& gamma, int R) {
  Eigen::MatrixXd lambda = pack_lower_triangle(gamma, R);
  for (int r = 0; r < R; ++r)
    if (lambda(r, r) < 0.0)
      throw std::invalid_argument("lambda diagonal entry is negative");
  return lambda;
}

inline Eigen::VectorXd unpack_lower_triangle(const Eigen::MatrixXd& lambda) {
  const int R = static_cast<int>(lambda.rows());
  Eigen::VectorXd gamma(lambda_param_count(R));
  int m = 0;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c <= r; ++c) gamma[m++] = lambda(r, c);
  return gamma;
}

// Sigma_i = U Lambda Lambda' U' + I, the implied covariance of the latent
// cluster vector.  Always symmetric positive definite, any Lambda.
inline Eigen::MatrixXd sigma_cluster(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& U) {
  if (U.cols() != lambda.rows())
    throw std::invalid_argument("random-effects design width does not match Lambda");
  const Eigen::MatrixXd B = U * lambda;
  Eigen::MatrixXd sigma = B * B.transpose();
  sigma.diagonal().array() += 1.0;
  return sigma;
}

namespace detail {

// chol(L L' + b b') in place, O(N^2): the textbook sequence of Givens-style
// updates column by column.
inline void cholesky_rank1_update(Eigen::MatrixXd& L, Eigen::VectorXd b) {
  const int n = static_cast<int>(L.rows());
  for (int k = 0; k < n; ++k) {
    const double r = std::hypot(L(k, k), b[k]);
    const double c = r / L(k, k);
    const double s = b[k] / L(k, k);
    L(k, k) = r;
    if (k + 1 < n) {
      L.col(k).tail(n - k - 1) = (L.col(k).tail(n - k - 1) + s * b.tail(n - k - 1)) / c;
      b.tail(n - k - 1) = c * b.tail(n - k - 1) - s * L.col(k).tail(n - k - 1);
    }
  }
}

}  // namespace detail

// Lower Cholesky factor of a dense SPD matrix; throws if the factorization
// breaks down.
inline Eigen::MatrixXd cholesky_cluster(const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("cluster covariance is not positive definite");
  return llt.matrixL();
}

// Lower Cholesky factor of U Lambda Lambda' U' + I built by R rank-one
// updates of the identity: O(R N^2) instead of O(N^3), which is what makes
// large clusters affordable.
inline Eigen::MatrixXd cholesky_cluster(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& U) {
  const int n = static_cast<int>(U.rows());
  const Eigen::MatrixXd B = U * lambda;
  Eigen::MatrixXd L = Eigen::MatrixXd::Identity(n, n);
  for (int j = 0; j < B.cols(); ++j) detail::cholesky_rank1_update(L, B.col(j));
  return L;
}

// Factors of the conditional representation behind the low-dimensional
// integral: given the R standard-normal factors w, the latent vector is
// V w + sqrt(d) .* iid noise.  Unstandardized (V = U Lambda, d = 1) or
// standardized so the implied correlation matrix has unit diagonal.
struct ReductionFactors {
  Eigen::MatrixXd V;
  Eigen::VectorXd d;
};

inline ReductionFactors reduction_factors(const Eigen::MatrixXd& lambda,
                                          const Eigen::MatrixXd& U, bool standardize) {
  ReductionFactors f;
  f.V = U * lambda;
  f.d = Eigen::VectorXd::Ones(U.rows());
  if (standardize) {
    const Eigen::VectorXd s =
        (f.V.rowwise().squaredNorm().array() + 1.0).sqrt().matrix();
    f.V.array().colwise() /= s.array();
    f.d = s.array().square().inverse().matrix();
  }
  return f;
}

// Gaussian kernel operations on Sigma = B B' + I with B = U Lambda.  Small
// clusters factor Sigma densely; past the crossover the R x R capacitance
// matrix K = I + B'B carries everything:
//   log|Sigma|     = log|K|
//   Sigma^{-1} x   = x - B K^{-1} B' x
class ClusterGaussian {
 public:
  static constexpr int kLowRankCrossover = 50;

  ClusterGaussian(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& U) {
    const int n = static_cast<int>(U.rows());
    B_ = U * lambda;
    lowrank_ = n > kLowRankCrossover;
    if (lowrank_) {
      Eigen::MatrixXd K = B_.transpose() * B_;
      K.diagonal().array() += 1.0;
      small_.compute(K);
      if (small_.info() != Eigen::Success)
        throw std::runtime_error("capacitance matrix is not positive definite");
      const Eigen::MatrixXd& Lk = small_.matrixLLT();
      logdet_ = 2.0 * Lk.diagonal().array().log().sum();
    } else {
      Eigen::MatrixXd sigma = B_ * B_.transpose();
      sigma.diagonal().array() += 1.0;
      dense_.compute(sigma);
      if (dense_.info() != Eigen::Success)
        throw std::runtime_error("cluster covariance is not positive definite");
      const Eigen::MatrixXd& L = dense_.matrixLLT();
      logdet_ = 2.0 * L.diagonal().array().log().sum();
    }
  }

  double log_det() const { return logdet_; }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& X) const {
    if (!lowrank_) return dense_.solve(X);
    return X - B_ * small_.solve(B_.transpose() * X);
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& x) const {
    if (!lowrank_) return dense_.solve(x);
    return x - B_ * small_.solve(B_.transpose() * x);
  }

  double quad_form(const Eigen::VectorXd& x) const {
    if (!lowrank_) return x.dot(dense_.solve(x));
    const Eigen::VectorXd t = B_.transpose() * x;
    return x.squaredNorm() - t.dot(small_.solve(t));
  }

 private:
  bool lowrank_ = false;
  Eigen::MatrixXd B_;
  Eigen::LLT<Eigen::MatrixXd> dense_;
  Eigen::LLT<Eigen::MatrixXd> small_;
  double logdet_ = 0.0;
};

}  // namespace mitram
