#pragma once

// Small two-stage estimators shared by the stacked-equation tests and the
// acceptance suite.

#include <memory>

#include "ijkit/models.hpp"
#include "ijkit/random.hpp"
#include "ijkit/stacked.hpp"

namespace ijkit::testing {

struct TwoStage {
  std::shared_ptr<const EstimatingEquation> first;
  std::shared_ptr<const SecondStage> second;
  std::shared_ptr<const Coupling> coupling;
  std::shared_ptr<StackedEquation> stacked;
};

/// Stage 1: mean of x. Stage 2: mean of y - theta1.
inline TwoStage mean_shift_pipeline(const Vector& x, const Vector& y) {
  TwoStage p;
  Dataset d;
  d.features.resize(x.size(), 0);
  d.response = x;
  p.first = make_model(ModelKind::mean, d);
  p.coupling = std::make_shared<FunctionCoupling>(
      1, [y](std::size_t n, const Vector& t1) { return Vector::Constant(1, y[Eigen::Index(n)] - t1[0]); },
      [](std::size_t, const Vector&) { return Matrix::Constant(1, 1, -1.0); });
  p.second = std::make_shared<FunctionStage>(
      static_cast<std::size_t>(x.size()), 1, 1,
      [](std::size_t, const Vector& c, const Vector& t2) { return Vector(t2 - c); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Identity(1, 1); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Constant(1, 1, -1.0); });
  p.stacked = stack_equations(p.first, p.second, p.coupling);
  return p;
}

/// Stage 1: least squares of y on (x, 1). Stage 2: mean squared residual.
inline TwoStage residual_variance_pipeline(const Dataset& data) {
  TwoStage p;
  auto model = make_model(ModelKind::linear, data);
  p.first = model;
  const Matrix design = model->design();
  const Vector y = data.response;
  p.coupling = std::make_shared<FunctionCoupling>(
      1,
      [design, y](std::size_t n, const Vector& t1) {
        return Vector::Constant(1, y[Eigen::Index(n)] - design.col(Eigen::Index(n)).dot(t1));
      },
      [design](std::size_t n, const Vector&) {
        return Matrix(-design.col(Eigen::Index(n)).transpose());
      });
  p.second = std::make_shared<FunctionStage>(
      data.size(), 1, 1,
      [](std::size_t, const Vector& c, const Vector& t2) {
        return Vector::Constant(1, t2[0] - c[0] * c[0]);
      },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Identity(1, 1); },
      [](std::size_t, const Vector& c, const Vector&) { return Matrix::Constant(1, 1, -2.0 * c[0]); });
  p.stacked = stack_equations(p.first, p.second, p.coupling);
  return p;
}

}  // namespace ijkit::testing
