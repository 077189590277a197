#include <cmath>

#include <gtest/gtest.h>

#include "ijkit/ij.hpp"
#include "ijkit/models.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/weights.hpp"
#include "oracles.hpp"
#include "pipelines.hpp"

namespace ijkit {
namespace {

struct Fitted {
  std::shared_ptr<GlmModel> model;
  FitResult base;
};

Fitted fit(ModelKind kind, const Dataset& d) {
  Fitted f{make_model(kind, d), {}};
  f.base = solve(*f.model, WeightVector::ones(d.size()), Vector::Zero(Eigen::Index(f.model->dim())));
  EXPECT_TRUE(f.base.converged);
  return f;
}

Fitted fit_synthetic(ModelKind kind, std::size_t n, std::size_t p, std::uint64_t seed) {
  return fit(kind, generate_synthetic(desk_preset(kind, n, p, seed)));
}

TEST(BuildHandle, MeanModel) {
  const auto f = fit(ModelKind::mean, oracle::mean_data({1, 2, 3, 6}));
  const IJHandle ij = build_handle(*f.model, f.base);
  ASSERT_EQ(ij.handle.h1().rows(), 1);
  EXPECT_EQ(ij.handle.h1()(0, 0), 1.0);
  EXPECT_EQ(ij.handle.solve(Vector::Constant(1, 0.7))[0], 0.7);
  EXPECT_NEAR(ij.handle.min_eig_estimate(), 1.0, 1e-12);
}

TEST(BuildHandle, LinearHessianIsGramMatrix) {
  const Dataset d = generate_synthetic(desk_preset(ModelKind::linear, 50, 4, 2));
  const auto f = fit(ModelKind::linear, d);
  const IJHandle ij = build_handle(*f.model, f.base);
  const Matrix x = oracle::design_rows(d);
  EXPECT_LE((ij.handle.h1() - x.transpose() * x / 50.0).norm(), 1e-12);
  EXPECT_EQ(ij.handle.factorization_kind(), DenseFactorization::Kind::cholesky);
  Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    const Vector b = rng.normal_vector(5);
    EXPECT_LE((ij.handle.h1() * ij.handle.solve(b) - b).norm(), 1e-8 * b.norm());
  }
  // the cached gradients average to the base-fit residual
  EXPECT_LE(Vector(ij.cache.g_at_base.colwise().mean().transpose()).norm(), 1e-10);
}

TEST(BuildHandle, SingularHessianRejected) {
  const auto f = fit(ModelKind::mean, oracle::mean_data({1, 2}));
  // a base fit whose Hessian has a null direction: duplicate column
  Dataset d;
  d.features = Matrix(4, 2);
  d.features << 1, 1, 2, 2, 3, 3, 4, 4;
  d.response = Vector::LinSpaced(4, 0, 3);
  d.has_bias = false;
  const auto m = make_model(ModelKind::linear, d);
  FitResult fake;
  fake.theta = Vector::Zero(2);
  fake.converged = true;
  EXPECT_THROW(build_handle(*m, fake), SingularityError);
  EXPECT_THROW(build_handle(*m, fake, HessianMode::matrix_free), SingularityError);
  FitResult bad = f.base;
  bad.converged = false;
  EXPECT_THROW(build_handle(*f.model, bad), InputError);
}

TEST(IjPredict, MeanModelLeaveOutOutlier) {
  const auto f = fit(ModelKind::mean, oracle::mean_data({1, 2, 3, 6}));
  const IJHandle ij = build_handle(*f.model, f.base);
  const WeightVector w = WeightVector::leave_out(4, {3});
  EXPECT_NEAR(ij_predict(ij, w)[0], 2.25, 1e-12);
  EXPECT_NEAR(solve(*f.model, w, f.base.theta).theta[0], 2.0, 1e-12);
}

TEST(IjPredict, OnesReturnsBaseBitwise) {
  const auto f = fit_synthetic(ModelKind::logistic, 100, 3, 4);
  const IJHandle ij = build_handle(*f.model, f.base);
  const Vector p = ij_predict(ij, WeightVector::ones(100));
  EXPECT_TRUE((p.array() == f.base.theta.array()).all());
  EXPECT_THROW(ij_predict(ij, WeightVector::ones(99)), InputError);
  for (const auto& q : ij_batch(ij, {WeightVector::ones(100), WeightVector::ones(100)}))
    EXPECT_TRUE((q.array() == f.base.theta.array()).all());
}

TEST(IjPredict, LeaveOneOutIdentity) {
  const auto f = fit_synthetic(ModelKind::linear, 40, 3, 5);
  const IJHandle ij = build_handle(*f.model, f.base);
  const Matrix h1inv = ij.handle.h1().inverse();
  for (std::size_t m = 0; m < 40; ++m) {
    const Vector offset = ij_predict(ij, WeightVector::leave_out(40, {m})) - f.base.theta;
    const Vector expect = h1inv * f.model->eval_g(m, f.base.theta) / 40.0;
    EXPECT_LE((offset - expect).norm(), 1e-12 * (1 + expect.norm()));
  }
}

TEST(IjPredict, LinearInWeightPerturbation) {
  const auto f = fit_synthetic(ModelKind::poisson, 60, 3, 6);
  const IJHandle ij = build_handle(*f.model, f.base);
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    const Vector d1 = rng.normal_vector(60), d2 = rng.normal_vector(60);
    const Vector ones = Vector::Ones(60);
    auto off = [&](const Vector& delta) {
      return Vector(ij_predict(ij, WeightVector::from_dense(ones + delta)) - f.base.theta);
    };
    const Vector lhs = off(d1 + d2), rhs = off(d1) + off(d2);
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * (1 + lhs.norm()));
  }
}

TEST(IjBatch, MatchesElementwisePredict) {
  const auto f = fit_synthetic(ModelKind::logistic, 120, 4, 7);
  const IJHandle ij = build_handle(*f.model, f.base);
  const auto loo = leave_k_out(120, 1);
  const auto boots = bootstrap(120, 100, 3);
  for (const auto* set : {&loo, &boots}) {
    const auto batch = ij_batch(ij, *set, 3);
    ASSERT_EQ(batch.size(), set->size());
    for (std::size_t i = 0; i < set->size(); ++i)
      EXPECT_TRUE((batch[i].array() == ij_predict(ij, (*set)[i]).array()).all());
  }
  // distinct leave-one-out parameters
  const auto batch = ij_batch(ij, loo);
  for (std::size_t i = 1; i < batch.size(); ++i) EXPECT_NE((batch[i] - batch[0]).norm(), 0.0);
}

TEST(DthetaDw, Examples) {
  const auto f = fit(ModelKind::mean, oracle::mean_data({1, 2, 3, 6}));
  const IJHandle ij = build_handle(*f.model, f.base);
  EXPECT_NEAR(dtheta_dw_action(ij.handle, ij.cache, Vector::Ones(4))[0], 0.0, 1e-15);
  const double xs[] = {1, 2, 3, 6};
  for (Eigen::Index m = 0; m < 4; ++m) {
    Vector e = Vector::Zero(4);
    e[m] = 1.0;
    EXPECT_NEAR(dtheta_dw_action(ij.handle, ij.cache, e)[0], -(3.0 - xs[m]) / 4.0, 1e-14);
  }
  EXPECT_THROW(dtheta_dw_action(ij.handle, ij.cache, Vector::Ones(3)), InputError);
}

TEST(DthetaDw, MatchesRefitDifferenceQuotient) {
  const auto f = fit_synthetic(ModelKind::logistic, 200, 3, 8);
  const IJHandle ij = build_handle(*f.model, f.base);
  SolverOptions tight;
  tight.grad_tol = 1e-14;
  const FitResult base = solve(*f.model, WeightVector::ones(200), f.base.theta, tight);
  Rng rng(4);
  for (int t = 0; t < 5; ++t) {
    const Vector a = rng.normal_vector(200);
    const double eps = 1e-6;
    const Vector w = Vector::Ones(200) + eps * a;
    const FitResult r = solve(*f.model, WeightVector::from_dense(w), base.theta, tight);
    ASSERT_TRUE(r.converged);
    const Vector fd = (r.theta - base.theta) / eps;
    const Vector an = dtheta_dw_action(ij.handle, ij.cache, a);
    EXPECT_LE((fd - an).norm(), 1e-5 * an.norm());
  }
}

TEST(IntegratedHessian, Identities) {
  const auto lin = fit_synthetic(ModelKind::linear, 30, 2, 9);
  const auto w = WeightVector::from_dense(Vector::LinSpaced(30, 0.1, 2.0));
  const Matrix hl = eval_H(*lin.model, lin.base.theta, w);
  EXPECT_LE((integrated_hessian(*lin.model, lin.base.theta, Vector::Constant(3, 5.0), w) - hl).norm(),
            1e-12);

  const auto f = fit_synthetic(ModelKind::logistic, 100, 3, 10);
  const auto wl = WeightVector::from_dense(Vector::LinSpaced(100, 0.1, 2.0));
  EXPECT_LE((integrated_hessian(*f.model, f.base.theta, f.base.theta, wl) -
             eval_H(*f.model, f.base.theta, wl))
                .norm(),
            1e-13);
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const Vector theta = f.base.theta + rng.normal_vector(4);
    const Vector lhs = eval_G(*f.model, theta, wl) - eval_G(*f.model, f.base.theta, wl);
    const Vector rhs = integrated_hessian(*f.model, f.base.theta, theta, wl) * (theta - f.base.theta);
    EXPECT_LE((lhs - rhs).norm(), 1e-6);
  }
  EXPECT_THROW(integrated_hessian(*f.model, f.base.theta, f.base.theta, wl, 1), InputError);
}

TEST(MatrixFree, AgreesWithDense) {
  const auto f = fit_synthetic(ModelKind::logistic, 150, 5, 11);
  const IJHandle dense = build_handle(*f.model, f.base, HessianMode::dense);
  const IJHandle mf = build_handle(*f.model, f.base, HessianMode::matrix_free);
  EXPECT_EQ(mf.handle.h1().size(), 0);
  EXPECT_FALSE(mf.handle.factorization_kind().has_value());
  EXPECT_NEAR(mf.handle.min_eig_estimate(), dense.handle.min_eig_estimate(),
              1e-7 * dense.handle.min_eig_estimate());
  const auto weights = leave_k_out(150, 2, 30, 1);
  const auto a = ij_batch(dense, weights), b = ij_batch(mf, weights);
  for (std::size_t i = 0; i < weights.size(); ++i) EXPECT_LE((a[i] - b[i]).norm(), 1e-7);
  const Vector dir = Vector::LinSpaced(150, -1, 1);
  EXPECT_LE((dtheta_dw_action(dense.handle, dense.cache, dir) - dtheta_dw_action(mf.handle, mf.cache, dir))
                .norm(),
            1e-7);
  EXPECT_TRUE((ij_predict(mf, WeightVector::ones(150)).array() == f.base.theta.array()).all());
}

TEST(StackedHandle, AsymmetricJacobianUsesLu) {
  Rng rng(6);
  Vector x(40), y(40);
  for (Eigen::Index i = 0; i < 40; ++i) {
    x[i] = rng.normal();
    y[i] = 2.0 + rng.normal();
  }
  const testing::TwoStage p = testing::mean_shift_pipeline(x, y);
  const FitResult base = solve(*p.stacked, WeightVector::ones(40), Vector::Zero(2));
  ASSERT_TRUE(base.converged);
  const IJHandle ij = build_handle(*p.stacked, base);
  EXPECT_EQ(ij.handle.factorization_kind(), DenseFactorization::Kind::lu);
  EXPECT_THROW(build_handle(*p.stacked, base, HessianMode::matrix_free), InputError);
  const Vector b = rng.normal_vector(2);
  EXPECT_LE((ij.handle.h1() * ij.handle.solve(b) - b).norm(), 1e-8 * b.norm());
  const WeightVector w = WeightVector::leave_out(40, {5});
  const Vector expect = base.theta - ij.handle.h1().inverse() *
                                         (-p.stacked->eval_g(5, base.theta) / 40.0);
  EXPECT_LE((ij_predict(ij, w) - expect).norm(), 1e-12);
}

}  // namespace
}  // namespace ijkit
