#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mitram {

enum class BasisKind { Linear, LogLinear, Bernstein, OrdinalThresholds };

// Linear inequalities coef * theta >= bound, one row per constraint.  The
// monotonicity restrictions on every basis are expressible this way, which is
// what lets the fitter treat them uniformly.
struct ConstraintSystem {
  Eigen::MatrixXd coef;
  Eigen::VectorXd bound;

  int rows() const { return static_cast<int>(coef.rows()); }

  bool satisfied(const Eigen::VectorXd& theta, double tol = 0.0) const {
    if (rows() == 0) return true;
    return ((coef * theta - bound).array() >= -tol).all();
  }
};

// Slack used in place of strict inequalities: coefficient differences and
// leading slopes must clear this margin so the reparameterized density's
// Jacobian term stays bounded away from log(0).
inline constexpr double kMonotoneSlack = 1e-8;

// Finite-dimensional basis a(y) for the monotone transformation
// h(y) = a(y)' theta, together with its derivative and the linear constraint
// system that makes h increasing.
//
//   linear      a(y) = (y, -1)            6 h(y) = theta1*y - theta2
//   loglinear   a(y) = (1, log y)         6 h(y) = theta1 + theta2*log y
//   bernstein   degree-p polynomials on a closed support interval
//   ordinal     K-1 cutpoints for categories 1..K (no derivative; the
//               category response carries no density)
//
// Bernstein evaluation outside the support clamps to the nearest endpoint
// (constant extension, zero derivative) unless clamping is disabled, in which
// case it is a domain error.
class TransformationBasis {
 public:
  TransformationBasis() = default;

  static TransformationBasis linear() { return TransformationBasis(BasisKind::Linear, 2); }

  static TransformationBasis log_linear() {
    return TransformationBasis(BasisKind::LogLinear, 2);
  }

  static TransformationBasis bernstein(int order, double lo, double hi, bool clamp = true) {
    if (order < 1) throw std::invalid_argument("bernstein order must be >= 1");
    if (!(lo < hi)) throw std::invalid_argument("bernstein support must have lo < hi");
    TransformationBasis b(BasisKind::Bernstein, order + 1);
    b.order_ = order;
    b.lo_ = lo;
    b.hi_ = hi;
    b.clamp_ = clamp;
    return b;
  }

  static TransformationBasis ordinal(int n_categories) {
    if (n_categories < 2) throw std::invalid_argument("ordinal basis needs >= 2 categories");
    TransformationBasis b(BasisKind::OrdinalThresholds, n_categories - 1);
    b.order_ = n_categories;
    return b;
  }

  BasisKind kind() const { return kind_; }
  int dim() const { return dim_; }
  int order() const { return order_; }
  int n_categories() const { return order_; }
  double support_lo() const { return lo_; }
  double support_hi() const { return hi_; }
  bool clamps() const { return clamp_; }

  Eigen::VectorXd eval(double y) const {
    Eigen::VectorXd a(dim_);
    switch (kind_) {
      case BasisKind::Linear:
        require_finite(y);
        a << y, -1.0;
        return a;
      case BasisKind::LogLinear:
        require_finite(y);
        if (y <= 0.0) throw std::domain_error("loglinear basis requires y > 0");
        a << 1.0, std::log(y);
        return a;
      case BasisKind::Bernstein: {
        require_finite(y);
        bernstein_row(map_unit(y), order_, a);
        return a;
      }
      case BasisKind::OrdinalThresholds: {
        const long c = std::lround(y);
        if (c < 1 || c > order_ - 1)
          throw std::domain_error("ordinal basis evaluated outside cutpoint range");
        a.setZero();
        a[c - 1] = 1.0;
        return a;
      }
    }
    throw std::logic_error("unknown basis kind");
  }

  Eigen::VectorXd deriv(double y) const {
    Eigen::VectorXd d(dim_);
    switch (kind_) {
      case BasisKind::Linear:
        require_finite(y);
        d << 1.0, 0.0;
        return d;
      case BasisKind::LogLinear:
        require_finite(y);
        if (y <= 0.0) throw std::domain_error("loglinear basis requires y > 0");
        d << 0.0, 1.0 / y;
        return d;
      case BasisKind::Bernstein: {
        require_finite(y);
        if (y < lo_ || y > hi_) {
          if (!clamp_) throw std::domain_error("bernstein basis evaluated outside support");
          d.setZero();  // constant extension beyond the support
          return d;
        }
        const double t = map_unit(y);
        Eigen::VectorXd low(order_);
        bernstein_row(t, order_ - 1, low);
        const double scale = order_ / (hi_ - lo_);
        for (int k = 0; k <= order_; ++k) {
          const double left = (k >= 1) ? low[k - 1] : 0.0;
          const double right = (k <= order_ - 1) ? low[k] : 0.0;
          d[k] = scale * (left - right);
        }
        return d;
      }
      case BasisKind::OrdinalThresholds:
        throw std::logic_error("ordinal basis has no derivative");
    }
    throw std::logic_error("unknown basis kind");
  }

  // Monotonicity of h as linear inequalities on theta.
  ConstraintSystem constraints() const {
    ConstraintSystem c;
    switch (kind_) {
      case BasisKind::Linear:
        c.coef = Eigen::MatrixXd::Zero(1, 2);
        c.coef(0, 0) = 1.0;
        break;
      case BasisKind::LogLinear:
        c.coef = Eigen::MatrixXd::Zero(1, 2);
        c.coef(0, 1) = 1.0;
        break;
      case BasisKind::Bernstein:
      case BasisKind::OrdinalThresholds:
        c.coef = Eigen::MatrixXd::Zero(dim_ - 1, dim_);
        for (int j = 0; j + 1 < dim_; ++j) {
          c.coef(j, j) = -1.0;
          c.coef(j, j + 1) = 1.0;
        }
        break;
    }
    c.bound = Eigen::VectorXd::Constant(c.coef.rows(), kMonotoneSlack);
    return c;
  }

  std::string name() const {
    switch (kind_) {
      case BasisKind::Linear: return "linear";
      case BasisKind::LogLinear: return "loglinear";
      case BasisKind::Bernstein: return "bernstein";
      case BasisKind::OrdinalThresholds: return "ordinal";
    }
    return "";
  }

 private:
  TransformationBasis(BasisKind kind, int dim) : kind_(kind), dim_(dim) {}

  static void require_finite(double y) {
    if (!std::isfinite(y)) throw std::domain_error("basis evaluated at non-finite y");
  }

  double map_unit(double y) const {
    double t = (y - lo_) / (hi_ - lo_);
    if (t < 0.0 || t > 1.0) {
      if (!clamp_) throw std::domain_error("bernstein basis evaluated outside support");
      t = std::min(1.0, std::max(0.0, t));
    }
    return t;
  }

  // All degree-p Bernstein polynomials at t via the stable degree-raising
  // recurrence; out writes B_{0..p,p}(t).
  static void bernstein_row(double t, int p, Eigen::VectorXd& out) {
    out.setZero();
    out[0] = 1.0;
    const double s = 1.0 - t;
    for (int j = 1; j <= p; ++j) {
      double prev = out[0];
      out[0] = s * prev;
      for (int k = 1; k < j; ++k) {
        const double cur = out[k];
        out[k] = t * prev + s * cur;
        prev = cur;
      }
      out[j] = t * prev;
    }
  }

  BasisKind kind_ = BasisKind::Linear;
  int dim_ = 2;
  int order_ = 1;       // polynomial degree, or K for ordinal
  double lo_ = 0.0;     // bernstein support
  double hi_ = 1.0;
  bool clamp_ = true;
};

}  // namespace mitram
