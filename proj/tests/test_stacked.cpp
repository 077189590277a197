#include <gtest/gtest.h>

#include "ijkit/linalg.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/stacked.hpp"
#include "oracles.hpp"
#include "pipelines.hpp"

namespace ijkit {
namespace {

TEST(StackEquations, IndependentStagesGiveBlockDiagonalJacobian) {
  const Vector x = Vector::LinSpaced(6, 0, 5);
  auto first = make_model(ModelKind::mean, oracle::mean_data({0, 1, 2, 3, 4, 5}));
  auto coupling = std::make_shared<FunctionCoupling>(
      1, [x](std::size_t n, const Vector&) { return Vector::Constant(1, 2 * x[Eigen::Index(n)]); },
      [](std::size_t, const Vector&) { return Matrix::Zero(1, 1); });
  auto second = std::make_shared<FunctionStage>(
      6, 1, 1, [](std::size_t, const Vector& c, const Vector& t) { return Vector(t - c); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Identity(1, 1); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Constant(1, 1, -1.0); });
  const auto eq = stack_equations(first, second, coupling);
  for (std::size_t n = 0; n < 6; ++n) {
    const Matrix h = eq->eval_h(n, Vector::Constant(2, 0.3));
    EXPECT_EQ(h(0, 1), 0.0);
    EXPECT_EQ(h(1, 0), 0.0);
  }
}

TEST(StackEquations, MeanShiftJacobianMatchesFiniteDifferences) {
  Rng rng(1);
  const auto p = testing::mean_shift_pipeline(rng.normal_vector(10), rng.normal_vector(10));
  EXPECT_EQ(p.stacked->dim(), 2u);
  for (std::size_t n = 0; n < 10; ++n) {
    const Vector theta = rng.normal_vector(2);
    const Matrix h = p.stacked->eval_h(n, theta);
    EXPECT_LT((h - oracle::fd_jacobian(*p.stacked, n, theta)).cwiseAbs().maxCoeff(), 1e-8);
    // [[1, 0], [1, 1]]: the cross block is d(theta2 - (y - theta1))/d theta1 = 1
    EXPECT_DOUBLE_EQ(h(1, 0), 1.0);
  }
  EXPECT_LE(finite_diff_check(*p.stacked, rng.normal_vector(2), 1e-5), 1e-6);
}

TEST(StackEquations, ResidualVarianceJacobian) {
  const Dataset d = generate_synthetic(desk_preset(ModelKind::linear, 25, 2, 3));
  const auto p = testing::residual_variance_pipeline(d);
  EXPECT_EQ(p.stacked->dim(), 4u);
  Rng rng(2);
  for (int t = 0; t < 10; ++t)
    EXPECT_LE(finite_diff_check(*p.stacked, rng.normal_vector(4), 1e-5), 1e-6);
}

TEST(StackEquations, RootEqualsSequentialFit) {
  SolverOptions opts;
  {
    Rng rng(3);
    const Vector x = rng.normal_vector(30), y = rng.normal_vector(30);
    const auto p = testing::mean_shift_pipeline(x, y);
    const FitResult joint = solve(*p.stacked, WeightVector::ones(30), Parameter::Zero(2), opts);
    ASSERT_TRUE(joint.converged);
    EXPECT_NEAR(joint.theta[0], x.mean(), 1e-12);
    EXPECT_NEAR(joint.theta[1], y.mean() - x.mean(), 1e-12);
  }
  const Dataset d = generate_synthetic(desk_preset(ModelKind::linear, 80, 3, 4));
  const auto p = testing::residual_variance_pipeline(d);
  const FitResult joint = solve(*p.stacked, WeightVector::ones(80), Parameter::Zero(5), opts);
  ASSERT_TRUE(joint.converged);
  const FitResult s1 = solve(*p.first, WeightVector::ones(80), Parameter::Zero(4), opts);
  ASSERT_TRUE(s1.converged);
  const FrozenSecondStage frozen(p.second, p.coupling, s1.theta);
  const FitResult s2 = solve(frozen, WeightVector::ones(80), Parameter::Zero(1), opts);
  ASSERT_TRUE(s2.converged);
  EXPECT_LT((joint.theta.head(4) - s1.theta).norm(), 10 * opts.grad_tol);
  EXPECT_LT(std::abs(joint.theta[4] - s2.theta[0]), 10 * opts.grad_tol);
}

TEST(StackEquations, JacobianIsAsymmetricSoLuIsUsed) {
  Rng rng(4);
  const auto p = testing::mean_shift_pipeline(rng.normal_vector(8), rng.normal_vector(8));
  const Matrix h = eval_H(*p.stacked, Parameter::Zero(2), WeightVector::ones(8));
  EXPECT_EQ(DenseFactorization(h).kind(), DenseFactorization::Kind::lu);
}

TEST(StackEquations, MismatchedSizesRejected) {
  auto first = make_model(ModelKind::mean, oracle::mean_data({1, 2, 3}));
  auto coupling = std::make_shared<FunctionCoupling>(
      1, [](std::size_t, const Vector&) { return Vector::Zero(1); },
      [](std::size_t, const Vector&) { return Matrix::Zero(1, 1); });
  auto second = std::make_shared<FunctionStage>(
      4, 1, 1, [](std::size_t, const Vector&, const Vector& t) { return t; },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Identity(1, 1); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Zero(1, 1); });
  EXPECT_THROW(stack_equations(first, second, coupling), InputError);
}

}  // namespace
}  // namespace ijkit
