#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "ijkit/core.hpp"
#include "ijkit/random.hpp"

namespace ijkit {

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

/// Exact smallest singular value (the reciprocal of ||A^-1||_op).
inline double smallest_singular_value(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

/// Estimates the smallest singular value of A from a routine solving
/// A x = b and A^T x = b, by power iteration on (A^T A)^-1 starting from a
/// fixed pseudo-random vector.
template <typename Solve, typename SolveTransposed>
double inverse_power_min_singular(Eigen::Index dim, Solve&& solve, SolveTransposed&& solve_t,
                                  int iterations = 20) {
  Rng rng(0x5eed);
  Vector x = rng.normal_vector(dim);
  x.normalize();
  double estimate = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iterations; ++it) {
    Vector y = solve_t(solve(x));
    const double norm = y.norm();
    if (!std::isfinite(norm)) return 0.0;
    if (norm == 0.0) break;
    estimate = 1.0 / std::sqrt(norm);
    x = y / norm;
  }
  return estimate;
}

/// Dense factorization of a square matrix: Cholesky when symmetric positive
/// definite, partial-pivot LU otherwise.
class DenseFactorization {
 public:
  enum class Kind { cholesky, lu };

  DenseFactorization() = default;

  explicit DenseFactorization(const Matrix& a) : dim_(a.rows()) {
    if (a.rows() != a.cols()) throw InputError("factorization of a non-square matrix");
    if (!all_finite(a)) throw InputError("factorization of a non-finite matrix");
    if (is_symmetric(a)) {
      llt_.compute(a);
      if (llt_.info() == Eigen::Success) {
        kind_ = Kind::cholesky;
        return;
      }
    }
    lu_.compute(a);
    kind_ = Kind::lu;
  }

  Kind kind() const { return kind_; }
  Eigen::Index dim() const { return dim_; }

  Vector solve(const Vector& b) const {
    return kind_ == Kind::cholesky ? Vector(llt_.solve(b)) : Vector(lu_.solve(b));
  }

  Vector solve_transposed(const Vector& b) const {
    if (kind_ == Kind::cholesky) return llt_.solve(b);
    return lu_.transpose().solve(b);
  }

  /// Reciprocal condition estimate from the factorization.
  double rcond() const { return kind_ == Kind::cholesky ? llt_.rcond() : lu_.rcond(); }

  /// Inverse power iteration estimate of the smallest singular value; an
  /// upper bound in exact arithmetic.
  double min_singular_estimate(int iterations = 20) const {
    if (dim_ == 0) return 0.0;
    if (!(rcond() > std::numeric_limits<double>::epsilon())) return 0.0;
    return inverse_power_min_singular(
        dim_, [&](const Vector& v) { return solve(v); },
        [&](const Vector& v) { return solve_transposed(v); }, iterations);
  }

 private:
  Kind kind_ = Kind::lu;
  Eigen::Index dim_ = 0;
  Eigen::LLT<Matrix> llt_;
  Eigen::PartialPivLU<Matrix> lu_;
};

struct CgResult {
  Vector x;
  int iterations = 0;
  bool converged = false;
  bool negative_curvature = false;
};

/// Conjugate gradient for a symmetric positive definite operator. Stops when
/// ||A x - b|| <= rel_tol ||b||, on non-positive curvature, or at max_iter.
inline CgResult conjugate_gradient(const std::function<Vector(const Vector&)>& apply,
                                   const Vector& b, double rel_tol, int max_iter) {
  CgResult res;
  res.x = Vector::Zero(b.size());
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.converged = true;
    return res;
  }
  Vector r = b;
  Vector p = r;
  double rr = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    const Vector ap = apply(p);
    const double pap = p.dot(ap);
    if (!(pap > 0.0)) {
      res.negative_curvature = true;
      res.iterations = it;
      return res;
    }
    const double alpha = rr / pap;
    res.x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    res.iterations = it + 1;
    if (std::sqrt(rr_new) <= rel_tol * bnorm) {
      res.converged = true;
      return res;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  return res;
}

}  // namespace ijkit
