#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "mitram/basis.hpp"
#include "oracles.hpp"

using mitram::TransformationBasis;

TEST(Basis, LinearEvalAndDeriv) {
  auto basis = TransformationBasis::linear();
  ASSERT_EQ(basis.dim(), 2);
  Eigen::Vector2d a = basis.eval(3.5);
  EXPECT_DOUBLE_EQ(a[0], 3.5);
  EXPECT_DOUBLE_EQ(a[1], -1.0);
  Eigen::Vector2d d = basis.deriv(3.5);
  EXPECT_DOUBLE_EQ(d[0], 1.0);
  EXPECT_DOUBLE_EQ(d[1], 0.0);

  // h(y) = theta1*y - theta2 with slope constrained positive.
  Eigen::Vector2d theta(2.0, 1.0);
  EXPECT_DOUBLE_EQ(basis.eval(1.0).dot(theta), 1.0);
  auto cs = basis.constraints();
  ASSERT_EQ(cs.rows(), 1);
  EXPECT_TRUE(cs.satisfied(theta));
  EXPECT_FALSE(cs.satisfied(Eigen::Vector2d(-1.0, 0.0)));
}

TEST(Basis, LogLinearDomain) {
  auto basis = TransformationBasis::log_linear();
  Eigen::Vector2d a = basis.eval(2.0);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], std::log(2.0));
  Eigen::Vector2d d = basis.deriv(2.0);
  EXPECT_DOUBLE_EQ(d[0], 0.0);
  EXPECT_DOUBLE_EQ(d[1], 0.5);
  EXPECT_THROW(basis.eval(0.0), std::domain_error);
  EXPECT_THROW(basis.eval(-1.0), std::domain_error);
  auto cs = basis.constraints();
  EXPECT_TRUE(cs.satisfied(Eigen::Vector2d(-3.0, 0.5)));
  EXPECT_FALSE(cs.satisfied(Eigen::Vector2d(0.0, -0.5)));
}

TEST(Basis, BernsteinMatchesBinomialFormula) {
  for (int order = 1; order <= 8; ++order) {
    auto basis = TransformationBasis::bernstein(order, -2.0, 3.0);
    ASSERT_EQ(basis.dim(), order + 1);
    for (double y = -2.0; y <= 3.0; y += 0.23) {
      const double t = (y + 2.0) / 5.0;
      Eigen::VectorXd a = basis.eval(y);
      for (int k = 0; k <= order; ++k)
        EXPECT_NEAR(a[k], oracle::bernstein_poly(k, order, t), 1e-12)
            << "order " << order << " k " << k << " y " << y;
    }
  }
}

TEST(Basis, BernsteinPartitionOfUnity) {
  auto basis = TransformationBasis::bernstein(6, 0.0, 1.0);
  for (double y = 0.0; y <= 1.0; y += 0.07)
    EXPECT_NEAR(basis.eval(y).sum(), 1.0, 1e-12);
}

TEST(Basis, BernsteinMatchesDeCasteljau) {
  auto basis = TransformationBasis::bernstein(5, 1.0, 4.0);
  Eigen::VectorXd theta(6);
  theta << -2.0, -1.5, -0.2, 0.4, 1.1, 3.0;
  for (double y = 1.0; y <= 4.0; y += 0.19) {
    const double t = (y - 1.0) / 3.0;
    EXPECT_NEAR(basis.eval(y).dot(theta), oracle::de_casteljau(theta, t), 1e-12);
  }
}

TEST(Basis, BernsteinDerivMatchesFiniteDifference) {
  auto basis = TransformationBasis::bernstein(4, -1.0, 2.0);
  Eigen::VectorXd theta(5);
  theta << -1.0, -0.3, 0.1, 0.8, 2.2;
  for (double y = -0.9; y <= 1.9; y += 0.17) {
    const double h = 1e-6;
    const double fd = (basis.eval(y + h).dot(theta) - basis.eval(y - h).dot(theta)) / (2 * h);
    EXPECT_NEAR(basis.deriv(y).dot(theta), fd, 1e-6) << "y=" << y;
  }
}

TEST(Basis, BernsteinConstantExtension) {
  auto basis = TransformationBasis::bernstein(3, 0.0, 1.0);
  // Outside the support the transformation continues flat: the basis clamps
  // and reports zero slope.
  EXPECT_TRUE(basis.eval(-5.0).isApprox(basis.eval(0.0), 1e-15));
  EXPECT_TRUE(basis.eval(9.0).isApprox(basis.eval(1.0), 1e-15));
  EXPECT_DOUBLE_EQ(basis.deriv(-5.0).norm(), 0.0);
  EXPECT_DOUBLE_EQ(basis.deriv(9.0).norm(), 0.0);
}

TEST(Basis, BernsteinMonotoneConstraints) {
  auto basis = TransformationBasis::bernstein(3, 0.0, 1.0);
  auto cs = basis.constraints();
  ASSERT_EQ(cs.rows(), 3);
  Eigen::VectorXd inc(4), dec(4);
  inc << -1.0, 0.0, 0.5, 2.0;
  dec << -1.0, 0.5, 0.0, 2.0;
  EXPECT_TRUE(cs.satisfied(inc));
  EXPECT_FALSE(cs.satisfied(dec));
  // Increasing coefficients give an increasing polynomial.
  double prev = -1e300;
  for (double y = 0.0; y <= 1.0; y += 0.04) {
    const double h = basis.eval(y).dot(inc);
    EXPECT_GE(h, prev);
    prev = h;
  }
}

TEST(Basis, BernsteinBadArgs) {
  EXPECT_THROW(TransformationBasis::bernstein(0, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(TransformationBasis::bernstein(3, 1.0, 1.0), std::invalid_argument);
  EXPECT_THROW(TransformationBasis::bernstein(3, 2.0, 1.0), std::invalid_argument);
}

TEST(Basis, OrdinalSelectsCutpoint) {
  auto basis = TransformationBasis::ordinal(4);  // categories 1..4, 3 cutpoints
  ASSERT_EQ(basis.dim(), 3);
  Eigen::VectorXd a = basis.eval(2.0);
  EXPECT_DOUBLE_EQ(a[0], 0.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  EXPECT_DOUBLE_EQ(a[2], 0.0);
  EXPECT_THROW(basis.eval(4.0), std::domain_error);  // top category has no cutpoint
  EXPECT_THROW(basis.eval(0.0), std::domain_error);
  EXPECT_THROW(basis.deriv(2.0), std::logic_error);
}

TEST(Basis, OrdinalConstraints) {
  auto basis = TransformationBasis::ordinal(4);
  auto cs = basis.constraints();
  ASSERT_EQ(cs.rows(), 2);  // increasing cutpoints
  Eigen::Vector3d ok(-1.0, 0.0, 2.0), bad(-1.0, 2.0, 0.0);
  EXPECT_TRUE(cs.satisfied(ok));
  EXPECT_FALSE(cs.satisfied(bad));
  EXPECT_THROW(TransformationBasis::ordinal(1), std::invalid_argument);
}

TEST(Basis, NamesRoundTrip) {
  EXPECT_EQ(TransformationBasis::linear().name(), "linear");
  EXPECT_EQ(TransformationBasis::log_linear().name(), "loglinear");
  EXPECT_EQ(TransformationBasis::bernstein(3, 0, 1).name(), "bernstein");
  EXPECT_EQ(TransformationBasis::ordinal(3).name(), "ordinal");
}
