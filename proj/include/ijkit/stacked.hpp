#pragma once

#include <functional>
#include <memory>
#include <utility>

#include "ijkit/core.hpp"

namespace ijkit {

/// Maps the first-stage parameter to per-datum inputs of the second stage,
/// e.g. residuals of a first-stage regression.
class Coupling {
 public:
  virtual ~Coupling() = default;
  virtual std::size_t data_dim() const = 0;
  virtual void apply(std::size_t n, const Vector& theta1, Eigen::Ref<Vector> out) const = 0;
  /// d apply(n, .) / d theta1^T, shape data_dim x D1.
  virtual void jacobian(std::size_t n, const Vector& theta1, Eigen::Ref<Matrix> out) const = 0;
};

/// Second-stage estimating functions g_n(data_n, theta2), where data_n is
/// produced by a Coupling.
class SecondStage {
 public:
  virtual ~SecondStage() = default;
  virtual std::size_t n_points() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t data_dim() const = 0;
  virtual void g(std::size_t n, const Vector& data, const Vector& theta2,
                 Eigen::Ref<Vector> out) const = 0;
  /// d g / d theta2^T, D2 x D2.
  virtual void h(std::size_t n, const Vector& data, const Vector& theta2,
                 Eigen::Ref<Matrix> out) const = 0;
  /// d g / d data^T, D2 x data_dim.
  virtual void dg_ddata(std::size_t n, const Vector& data, const Vector& theta2,
                        Eigen::Ref<Matrix> out) const = 0;
};

/// Coupling built from callables.
class FunctionCoupling final : public Coupling {
 public:
  using ApplyFn = std::function<Vector(std::size_t, const Vector&)>;
  using JacobianFn = std::function<Matrix(std::size_t, const Vector&)>;

  FunctionCoupling(std::size_t data_dim, ApplyFn apply, JacobianFn jac)
      : data_dim_(data_dim), apply_(std::move(apply)), jac_(std::move(jac)) {}

  std::size_t data_dim() const override { return data_dim_; }
  void apply(std::size_t n, const Vector& t, Eigen::Ref<Vector> out) const override {
    out = apply_(n, t);
  }
  void jacobian(std::size_t n, const Vector& t, Eigen::Ref<Matrix> out) const override {
    out = jac_(n, t);
  }

 private:
  std::size_t data_dim_;
  ApplyFn apply_;
  JacobianFn jac_;
};

/// SecondStage built from callables.
class FunctionStage final : public SecondStage {
 public:
  using GFn = std::function<Vector(std::size_t, const Vector&, const Vector&)>;
  using HFn = std::function<Matrix(std::size_t, const Vector&, const Vector&)>;

  FunctionStage(std::size_t n, std::size_t dim, std::size_t data_dim, GFn g, HFn h,
                HFn dg_ddata)
      : n_(n), dim_(dim), data_dim_(data_dim), g_(std::move(g)), h_(std::move(h)),
        dgd_(std::move(dg_ddata)) {}

  std::size_t n_points() const override { return n_; }
  std::size_t dim() const override { return dim_; }
  std::size_t data_dim() const override { return data_dim_; }
  void g(std::size_t n, const Vector& d, const Vector& t, Eigen::Ref<Vector> out) const override {
    out = g_(n, d, t);
  }
  void h(std::size_t n, const Vector& d, const Vector& t, Eigen::Ref<Matrix> out) const override {
    out = h_(n, d, t);
  }
  void dg_ddata(std::size_t n, const Vector& d, const Vector& t,
                Eigen::Ref<Matrix> out) const override {
    out = dgd_(n, d, t);
  }

 private:
  std::size_t n_, dim_, data_dim_;
  GFn g_;
  HFn h_, dgd_;
};

/// Two-stage estimator written as one estimating equation over
/// (theta1, theta2). The Jacobian is block lower-triangular:
///   [ h1            0  ]
///   [ dg2/dc * J    h2 ]
class StackedEquation final : public EstimatingEquation {
 public:
  StackedEquation(std::shared_ptr<const EstimatingEquation> first,
                  std::shared_ptr<const SecondStage> second,
                  std::shared_ptr<const Coupling> coupling)
      : first_(std::move(first)), second_(std::move(second)), coupling_(std::move(coupling)) {
    if (!first_ || !second_ || !coupling_) throw InputError("stack_equations: null component");
    if (first_->n_points() != second_->n_points())
      throw InputError("stack_equations: stages have different N");
    if (coupling_->data_dim() != second_->data_dim())
      throw InputError("stack_equations: coupling output size does not match second stage");
    d1_ = first_->dim();
    d2_ = second_->dim();
  }

  std::size_t n_points() const override { return first_->n_points(); }
  std::size_t dim() const override { return d1_ + d2_; }
  std::size_t first_dim() const { return d1_; }
  std::size_t second_dim() const { return d2_; }

  void g(std::size_t n, const Vector& theta, Eigen::Ref<Vector> out) const override {
    const Vector t1 = theta.head(d1_);
    const Vector t2 = theta.tail(d2_);
    Vector data(coupling_->data_dim());
    coupling_->apply(n, t1, data);
    first_->g(n, t1, out.head(d1_));
    second_->g(n, data, t2, out.tail(d2_));
  }

  void h(std::size_t n, const Vector& theta, Eigen::Ref<Matrix> out) const override {
    const Vector t1 = theta.head(d1_);
    const Vector t2 = theta.tail(d2_);
    const auto c = coupling_->data_dim();
    Vector data(c);
    coupling_->apply(n, t1, data);
    Matrix jac(c, d1_), dgd(d2_, c), h1(d1_, d1_), h2(d2_, d2_);
    coupling_->jacobian(n, t1, jac);
    second_->dg_ddata(n, data, t2, dgd);
    first_->h(n, t1, h1);
    second_->h(n, data, t2, h2);
    out.setZero();
    out.topLeftCorner(d1_, d1_) = h1;
    out.bottomLeftCorner(d2_, d1_) = dgd * jac;
    out.bottomRightCorner(d2_, d2_) = h2;
  }

 private:
  std::shared_ptr<const EstimatingEquation> first_;
  std::shared_ptr<const SecondStage> second_;
  std::shared_ptr<const Coupling> coupling_;
  std::size_t d1_ = 0, d2_ = 0;
};

inline std::shared_ptr<StackedEquation> stack_equations(
    std::shared_ptr<const EstimatingEquation> first, std::shared_ptr<const SecondStage> second,
    std::shared_ptr<const Coupling> coupling) {
  return std::make_shared<StackedEquation>(std::move(first), std::move(second),
                                           std::move(coupling));
}

/// The second stage alone with theta1 frozen; its root is the sequential
/// second-stage estimate.
class FrozenSecondStage final : public EstimatingEquation {
 public:
  FrozenSecondStage(std::shared_ptr<const SecondStage> second,
                    std::shared_ptr<const Coupling> coupling, Vector theta1)
      : second_(std::move(second)), coupling_(std::move(coupling)), theta1_(std::move(theta1)) {}

  std::size_t n_points() const override { return second_->n_points(); }
  std::size_t dim() const override { return second_->dim(); }

  void g(std::size_t n, const Vector& theta, Eigen::Ref<Vector> out) const override {
    Vector data(coupling_->data_dim());
    coupling_->apply(n, theta1_, data);
    second_->g(n, data, theta, out);
  }
  void h(std::size_t n, const Vector& theta, Eigen::Ref<Matrix> out) const override {
    Vector data(coupling_->data_dim());
    coupling_->apply(n, theta1_, data);
    second_->h(n, data, theta, out);
  }

 private:
  std::shared_ptr<const SecondStage> second_;
  std::shared_ptr<const Coupling> coupling_;
  Vector theta1_;
};

}  // namespace ijkit
