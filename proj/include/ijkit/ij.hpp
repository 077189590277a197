#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string_view>
#include <vector>

#include "ijkit/core.hpp"
#include "ijkit/linalg.hpp"
#include "ijkit/random.hpp"
#include "ijkit/solver.hpp"

namespace ijkit {

enum class HessianMode { dense, matrix_free };

inline std::string_view to_string(HessianMode m) {
  return m == HessianMode::dense ? "dense" : "matrix_free";
}

struct HandleOptions {
  double min_hessian_eig = 1e-8;
  double cg_rel_tol = 1e-12;
  std::size_t threads = 1;
};

/// H1 = H(theta1, 1) at the base fit plus a reusable solve for H1 x = b.
/// In matrix-free mode the handle keeps a reference to the equation, which
/// must outlive it.
class HessianHandle {
 public:
  HessianMode mode() const { return mode_; }
  const Parameter& base_theta() const { return base_theta_; }
  /// Assembled H1; empty in matrix-free mode.
  const Matrix& h1() const { return h1_; }
  double min_eig_estimate() const { return min_eig_; }
  std::size_t dim() const { return static_cast<std::size_t>(base_theta_.size()); }

  /// H1 v
  Vector apply(const Vector& v) const {
    if (mode_ == HessianMode::dense) return h1_ * v;
    return eval_H_apply_dense(*eq_, base_theta_, ones_, v, threads_);
  }

  /// x with H1 x = b
  Vector solve(const Vector& b) const {
    if (mode_ == HessianMode::dense) return factorization_.solve(b);
    const CgResult cg = conjugate_gradient([this](const Vector& v) { return apply(v); }, b,
                                           cg_rel_tol_, static_cast<int>(20 * dim() + 20));
    if (cg.negative_curvature)
      throw SingularityError("conjugate gradient met non-positive curvature in H1", 0.0);
    return cg.x;
  }

  Vector solve_transposed(const Vector& b) const {
    if (mode_ == HessianMode::dense) return factorization_.solve_transposed(b);
    return solve(b);
  }

  std::optional<DenseFactorization::Kind> factorization_kind() const {
    if (mode_ == HessianMode::dense) return factorization_.kind();
    return std::nullopt;
  }

 private:
  friend struct HandleBuilder;

  HessianMode mode_ = HessianMode::dense;
  Parameter base_theta_;
  Matrix h1_;
  DenseFactorization factorization_;
  double min_eig_ = 0.0;
  const EstimatingEquation* eq_ = nullptr;
  Vector ones_;
  double cg_rel_tol_ = 1e-12;
  std::size_t threads_ = 1;
};

/// g_n(theta1) for every n, one row per datum.
struct GradientCache {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> g_at_base;

  std::size_t n_points() const { return static_cast<std::size_t>(g_at_base.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(g_at_base.cols()); }

  /// (1/N) sum_n (w_n - 1) g_n(theta1), touching only the support of w - 1.
  Vector weighted_delta_sum(const WeightVector& w) const {
    if (w.size() != n_points()) throw InputError("weight vector length does not match cache");
    Vector s = Vector::Zero(g_at_base.cols());
    for (const auto& e : w.non_unit_entries())
      s.noalias() += (e.weight - 1.0) * g_at_base.row(static_cast<Eigen::Index>(e.index)).transpose();
    return s / static_cast<double>(n_points());
  }
};

struct IJHandle {
  HessianHandle handle;
  GradientCache cache;
};

struct HandleBuilder {
  static IJHandle build(const EstimatingEquation& eq, const FitResult& base, HessianMode mode,
                        const HandleOptions& opts) {
    if (!base.converged) throw InputError("build_handle: base fit did not converge");
    require_parameter(eq, base.theta);
    IJHandle out;
    HessianHandle& hh = out.handle;
    hh.mode_ = mode;
    hh.base_theta_ = base.theta;
    hh.ones_ = Vector::Ones(static_cast<Eigen::Index>(eq.n_points()));
    hh.cg_rel_tol_ = opts.cg_rel_tol;
    hh.threads_ = opts.threads;
    if (mode == HessianMode::dense) {
      hh.h1_ = eval_H_dense(eq, base.theta, hh.ones_, opts.threads);
      hh.factorization_ = DenseFactorization(hh.h1_);
      hh.min_eig_ = hh.factorization_.min_singular_estimate();
    } else {
      hh.eq_ = &eq;
      // CG needs a symmetric operator: compare u'Hv with v'Hu
      Rng rng(0x5eed);
      const Vector u = rng.normal_vector(static_cast<Eigen::Index>(eq.dim()));
      const Vector v = rng.normal_vector(static_cast<Eigen::Index>(eq.dim()));
      const Vector hu = hh.apply(u), hv = hh.apply(v);
      if (std::abs(u.dot(hv) - v.dot(hu)) > 1e-10 * (1.0 + hu.norm() * v.norm() + hv.norm() * u.norm()))
        throw InputError("matrix_free mode needs a symmetric H; use dense mode (LU) for this equation");
      hh.min_eig_ = inverse_power_min_singular(
          static_cast<Eigen::Index>(eq.dim()), [&](const Vector& b) { return hh.solve(b); },
          [&](const Vector& b) { return hh.solve(b); });
    }
    if (!(hh.min_eig_ > opts.min_hessian_eig))
      throw SingularityError("H(theta1, 1) is singular or nearly so (smallest singular value " +
                                 diag(hh.min_eig_) + ")",
                             hh.min_eig_);

    const auto n = static_cast<Eigen::Index>(eq.n_points());
    const auto d = static_cast<Eigen::Index>(eq.dim());
    out.cache.g_at_base.resize(n, d);
    parallel_for(eq.n_points(), opts.threads, [&](std::size_t i) {
      Vector gn(d);
      eq.g(i, base.theta, gn);
      if (!all_finite(gn)) throw EvaluationError(i, "g_n(theta1) is not finite");
      out.cache.g_at_base.row(static_cast<Eigen::Index>(i)) = gn.transpose();
    });
    return out;
  }
};

inline IJHandle build_handle(const EstimatingEquation& eq, const FitResult& base,
                             HessianMode mode = HessianMode::dense,
                             const HandleOptions& opts = {}) {
  return HandleBuilder::build(eq, base, mode, opts);
}

/// theta_IJ(w) = theta1 - H1^-1 G(theta1, w - 1)
inline Parameter ij_predict(const HessianHandle& handle, const GradientCache& cache,
                            const WeightVector& w) {
  if (w.is_ones()) {
    if (w.size() != cache.n_points()) throw InputError("weight vector length does not match cache");
    return handle.base_theta();
  }
  return handle.base_theta() - handle.solve(cache.weighted_delta_sum(w));
}

inline Parameter ij_predict(const IJHandle& ij, const WeightVector& w) {
  return ij_predict(ij.handle, ij.cache, w);
}

inline std::vector<Parameter> ij_batch(const HessianHandle& handle, const GradientCache& cache,
                                       const std::vector<WeightVector>& weights,
                                       std::size_t threads = 1) {
  std::vector<Parameter> out(weights.size());
  parallel_for(weights.size(), threads,
               [&](std::size_t i) { out[i] = ij_predict(handle, cache, weights[i]); });
  return out;
}

inline std::vector<Parameter> ij_batch(const IJHandle& ij, const std::vector<WeightVector>& weights,
                                       std::size_t threads = 1) {
  return ij_batch(ij.handle, ij.cache, weights, threads);
}

/// d theta(w) / d w^T at w = 1 applied to a: -H1^-1 (1/N) sum_n a_n g_n(theta1)
inline Vector dtheta_dw_action(const HessianHandle& handle, const GradientCache& cache,
                               const Vector& direction) {
  if (static_cast<std::size_t>(direction.size()) != cache.n_points())
    throw InputError("direction length does not match N");
  const Vector g = cache.g_at_base.transpose() * direction / static_cast<double>(cache.n_points());
  return -handle.solve(g);
}

namespace detail {

/// Gauss-Legendre nodes and weights on [0, 1].
inline void gauss_legendre_unit(std::size_t m, std::vector<double>& nodes,
                                std::vector<double>& weights) {
  nodes.assign(m, 0.0);
  weights.assign(m, 0.0);
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < m; ++i) {
    double x = std::cos(pi * (double(i) + 0.75) / (double(m) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = x;
      for (std::size_t k = 2; k <= m; ++k) {
        const double p2 = ((2.0 * double(k) - 1.0) * x * p1 - (double(k) - 1.0) * p0) / double(k);
        p0 = p1;
        p1 = p2;
      }
      if (m == 1) p0 = 1.0;
      dp = double(m) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    nodes[i] = 0.5 * (1.0 - x);
    weights[i] = 1.0 / ((1.0 - x * x) * dp * dp);  // (2 / ((1-x^2) P'^2)) / 2
  }
}

}  // namespace detail

/// Integrated Hessian int_0^1 H(anchor + t (theta - anchor), w) dt by
/// Gauss-Legendre quadrature. Satisfies
///   G(theta, w) - G(anchor, w) = Htilde (theta - anchor).
inline Matrix integrated_hessian(const EstimatingEquation& eq, const Parameter& anchor,
                                 const Parameter& theta, const WeightVector& w,
                                 std::size_t quad_points = 16) {
  if (quad_points < 2) throw InputError("integrated_hessian: need at least 2 quadrature points");
  require_parameter(eq, anchor);
  require_parameter(eq, theta);
  require_weights(eq, w);
  const Vector dense_w = w.dense();
  std::vector<double> nodes, weights;
  detail::gauss_legendre_unit(quad_points, nodes, weights);
  Matrix out = Matrix::Zero(eq.dim(), eq.dim());
  for (std::size_t q = 0; q < quad_points; ++q)
    out += weights[q] * eval_H_dense(eq, Vector(anchor + nodes[q] * (theta - anchor)), dense_w);
  return out;
}

}  // namespace ijkit
