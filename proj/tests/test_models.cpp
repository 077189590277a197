#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "ijkit/core.hpp"
#include "ijkit/models.hpp"
#include "oracles.hpp"

namespace ijkit {
namespace {

Dataset identity_linear() {
  Dataset d;
  d.features = Matrix::Identity(2, 2);
  d.response = Vector(2);
  d.response << 1, 2;
  d.has_bias = false;
  return d;
}

TEST(MakeModel, LinearExactInterpolation) {
  const auto m = make_model(ModelKind::linear, identity_linear());
  EXPECT_EQ(m->dim(), 2u);
  const Vector g = eval_G(*m, Vector((Vector(2) << 1, 2).finished()), WeightVector::ones(2));
  EXPECT_TRUE(g.isZero(0.0));
}

TEST(MakeModel, LogisticAtZero) {
  const Dataset d = generate_synthetic(desk_preset(ModelKind::logistic, 20, 3, 1));
  const auto m = make_model(ModelKind::logistic, d);
  const Vector zero = Vector::Zero(4);
  for (std::size_t n = 0; n < 20; ++n) {
    Vector x(4);
    x << d.features.row(Eigen::Index(n)).transpose(), 1.0;
    EXPECT_LT((m->eval_g(n, zero) - (0.5 - d.response[Eigen::Index(n)]) * x).norm(), 1e-15);
  }
}

TEST(MakeModel, PoissonSingleDatum) {
  Dataset d;
  d.features = Matrix::Ones(1, 1);
  d.response = Vector::Ones(1);
  d.has_bias = false;
  const auto m = make_model(ModelKind::poisson, d);
  EXPECT_EQ(m->eval_g(0, Vector::Zero(1))[0], 0.0);
  EXPECT_EQ(m->eval_h(0, Vector::Zero(1))(0, 0), 1.0);
}

TEST(MakeModel, InvalidResponsesRejected) {
  Dataset d;
  d.features = Matrix::Ones(2, 1);
  d.response = Vector::Constant(2, 0.5);
  EXPECT_THROW(make_model(ModelKind::logistic, d), InputError);
  EXPECT_THROW(make_model(ModelKind::poisson, d), InputError);
  d.response << -1, 2;
  EXPECT_THROW(make_model(ModelKind::poisson, d), InputError);
  EXPECT_NO_THROW(make_model(ModelKind::linear, d));
}

TEST(Models, GradientIsDerivativeOfLoss) {
  Rng rng(8);
  for (ModelKind kind : {ModelKind::mean, ModelKind::linear, ModelKind::logistic, ModelKind::poisson}) {
    const auto m = make_model(kind, generate_synthetic(desk_preset(kind, 15, 3, 2)));
    const auto d = static_cast<Eigen::Index>(m->dim());
    for (int t = 0; t < 5; ++t) {
      const Vector theta = 0.5 * rng.normal_vector(d);
      for (std::size_t n = 0; n < m->n_points(); ++n) {
        const Vector g = m->eval_g(n, theta);
        for (Eigen::Index j = 0; j < d; ++j) {
          Vector tp = theta, tm = theta;
          const double h = 1e-6;
          tp[j] += h;
          tm[j] -= h;
          const double fd = (m->loss(n, tp) - m->loss(n, tm)) / (2 * h);
          EXPECT_LE(std::abs(fd - g[j]) / (1 + std::abs(g[j])), 1e-6) << to_string(kind);
        }
      }
    }
  }
}

TEST(Models, GlmHessiansArePositiveSemidefinite) {
  Rng rng(9);
  for (ModelKind kind : {ModelKind::logistic, ModelKind::poisson}) {
    const auto m = make_model(kind, generate_synthetic(desk_preset(kind, 30, 4, 3)));
    for (int t = 0; t < 10; ++t) {
      const Vector theta = rng.normal_vector(5);
      for (std::size_t n = 0; n < m->n_points(); ++n) {
        Eigen::SelfAdjointEigenSolver<Matrix> es(m->eval_h(n, theta));
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
      }
    }
  }
}

TEST(GenerateSynthetic, Deterministic) {
  const auto spec = desk_preset(ModelKind::poisson, 200, 4, 77);
  const Dataset a = generate_synthetic(spec), b = generate_synthetic(spec);
  EXPECT_TRUE((a.features.array() == b.features.array()).all());
  EXPECT_TRUE((a.response.array() == b.response.array()).all());
  auto other = spec;
  other.seed = 78;
  EXPECT_FALSE((generate_synthetic(other).features.array() == a.features.array()).all());
}

TEST(GenerateSynthetic, LogisticNullModelMean) {
  SyntheticSpec s;
  s.kind = ModelKind::logistic;
  s.n = 10000;
  s.p = 3;
  s.seed = 5;
  const Dataset d = generate_synthetic(s);  // true_theta = 0, bias 0
  const double mean = d.response.mean();
  EXPECT_GE(mean, 0.45);
  EXPECT_LE(mean, 0.55);
}

TEST(GenerateSynthetic, PoissonUnitRateMean) {
  SyntheticSpec s;
  s.kind = ModelKind::poisson;
  s.n = 10000;
  s.p = 2;
  s.seed = 6;
  const Dataset d = generate_synthetic(s);
  EXPECT_GE(d.response.mean(), 0.9);
  EXPECT_LE(d.response.mean(), 1.1);
}

TEST(GenerateSynthetic, PoissonLargeRateUsesRejectionSampler) {
  // rate e^3 ~ 20.1 exercises the PTRS branch; check the first two moments
  SyntheticSpec s;
  s.kind = ModelKind::poisson;
  s.n = 20000;
  s.p = 1;
  s.true_theta = Vector::Zero(1);
  s.true_bias = 3.0;
  s.seed = 14;
  const Dataset d = generate_synthetic(s);
  const double rate = std::exp(3.0);
  const double mean = d.response.mean();
  const double var = (d.response.array() - mean).square().mean();
  EXPECT_NEAR(mean, rate, 4 * std::sqrt(rate / 20000.0));
  EXPECT_NEAR(var / rate, 1.0, 0.05);
}

TEST(GenerateSynthetic, PoissonRateCap) {
  SyntheticSpec s;
  s.kind = ModelKind::poisson;
  s.n = 5;
  s.p = 1;
  s.true_theta = Vector::Zero(1);
  s.true_bias = 31.0;
  EXPECT_THROW(generate_synthetic(s), InputError);
}

TEST(HeldOutLoss, Examples) {
  const auto lin = make_model(ModelKind::linear, identity_linear());
  EXPECT_EQ(held_out_loss(*lin, Vector((Vector(2) << 1, 2).finished()), {0, 1}), 0.0);

  const auto d = generate_synthetic(desk_preset(ModelKind::logistic, 50, 3, 3));
  const auto log = make_model(ModelKind::logistic, d);
  EXPECT_NEAR(held_out_loss(*log, Vector::Zero(4), {0, 7, 9}), std::log(2.0), 1e-15);

  const Vector theta = Vector::Constant(4, 0.2);
  std::vector<std::size_t> all(50);
  std::iota(all.begin(), all.end(), 0);
  double direct = 0;
  for (std::size_t n = 0; n < 50; ++n) direct += log->loss(n, theta);
  EXPECT_NEAR(held_out_loss(*log, theta, all), direct / 50, 1e-14);
  EXPECT_NEAR(train_loss(*log, theta), direct / 50, 1e-14);

  std::vector<std::size_t> perm = {9, 0, 7};
  EXPECT_NEAR(held_out_loss(*log, theta, perm), held_out_loss(*log, theta, {0, 7, 9}), 1e-15);
  EXPECT_THROW(held_out_loss(*log, theta, {}), InputError);
  EXPECT_THROW(held_out_loss(*log, theta, {50}), InputError);
}

TEST(Csv, RoundTripIsBitExact) {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Dataset d = generate_synthetic(desk_preset(ModelKind::linear, 1 + rng.uniform_index(30),
                                               1 + rng.uniform_index(5), rng.next_u64()));
    d.features(0, 0) = 1e-300 * rng.normal();
    std::stringstream ss;
    write_csv(ss, d);
    const Dataset back = read_csv(ss);
    ASSERT_EQ(back.features.rows(), d.features.rows());
    ASSERT_EQ(back.features.cols(), d.features.cols());
    EXPECT_TRUE((back.features.array() == d.features.array()).all());
    EXPECT_TRUE((back.response.array() == d.response.array()).all());
    std::stringstream again;
    write_csv(again, back);
    EXPECT_EQ(again.str(), ss.str());
  }
}

TEST(Csv, HeaderAndMalformedInput) {
  std::stringstream ok("y\n1\n2\n3\n6\n");
  const Dataset d = read_csv(ok);
  EXPECT_EQ(d.size(), 4u);
  EXPECT_EQ(d.n_features(), 0u);
  std::stringstream bad_header("x2,y\n1,2\n");
  EXPECT_THROW(read_csv(bad_header), InputError);
  std::stringstream bad_cell("x1,y\n1,abc\n");
  EXPECT_THROW(read_csv(bad_cell), InputError);
  std::stringstream short_row("x1,y\n1\n");
  EXPECT_THROW(read_csv(short_row), InputError);
}

}  // namespace
}  // namespace ijkit
