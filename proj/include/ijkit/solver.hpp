#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ijkit/core.hpp"
#include "ijkit/linalg.hpp"

namespace ijkit {

struct SolverOptions {
  double grad_tol = 1e-10;      // on ||G(theta, w)||_2
  std::size_t max_iter = 100;
  double initial_damping = 1e-3;  // relative to the mean diagonal of H^T H
  double min_hessian_eig = 1e-8;  // singularity guard on sigma_min(H)
  std::size_t dense_cutoff = 512; // D above this uses conjugate gradient
  double cg_rel_tol = 1e-12;
  std::size_t max_damping_tries = 40;
  std::size_t threads = 1;       // for the sums over data

  void validate() const {
    if (!(grad_tol > 0.0)) throw InputError("grad_tol must be positive");
    if (max_iter < 1) throw InputError("max_iter must be at least 1");
    if (!(initial_damping > 0.0)) throw InputError("initial_damping must be positive");
    if (!(min_hessian_eig >= 0.0)) throw InputError("min_hessian_eig must be nonnegative");
  }
};

enum class FitStatus {
  converged,
  max_iterations,
  stalled,    // no damping level reduced ||G||
  diverging,  // ||G|| vanished while the iterate kept moving and H degenerated
};

inline std::string_view to_string(FitStatus s) {
  switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::stalled: return "stalled";
    case FitStatus::diverging: return "diverging";
  }
  return "unknown";
}

struct FitResult {
  Parameter theta;
  double grad_norm = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  FitStatus status = FitStatus::max_iterations;
  double min_singular = 0.0;  // estimate at the returned theta, if computed
  std::string message;
};

namespace detail {

class NewtonSolver {
 public:
  NewtonSolver(const EstimatingEquation& eq, const Vector& w, const SolverOptions& opts)
      : eq_(eq), w_(w), opts_(opts), dim_(static_cast<Eigen::Index>(eq.dim())) {}

  FitResult run(const Parameter& init) {
    FitResult res;
    Vector theta = init;
    Vector grad = eval_G_dense(eq_, theta, w_, opts_.threads);
    double gnorm = grad.norm();
    double last_step = 0.0;
    for (std::size_t it = 0;; ++it) {
      res.iterations = it;
      if (gnorm <= opts_.grad_tol) return finish(std::move(theta), gnorm, last_step, res);
      if (it == opts_.max_iter) {
        res.status = FitStatus::max_iterations;
        res.message = "iteration limit reached";
        break;
      }
      const bool stepped = matrix_free() ? step_matrix_free(theta, grad, gnorm, last_step)
                                         : step_dense(theta, grad, gnorm, last_step);
      if (!stepped) {
        res.status = FitStatus::stalled;
        res.message = "no damped step reduced ||G||";
        break;
      }
    }
    res.theta = std::move(theta);
    res.grad_norm = gnorm;
    res.converged = false;
    return res;
  }

  bool matrix_free() const { return eq_.dim() > opts_.dense_cutoff; }

  Matrix hessian(const Vector& theta) const { return eval_H_dense(eq_, theta, w_, opts_.threads); }

  double min_singular(const Vector& theta) const {
    if (!matrix_free()) return DenseFactorization(hessian(theta)).min_singular_estimate();
    auto solve = [&](const Vector& b) {
      return conjugate_gradient(
                 [&](const Vector& v) { return eval_H_apply_dense(eq_, theta, w_, v, opts_.threads); },
                 b, opts_.cg_rel_tol, cg_max_iter())
          .x;
    };
    return inverse_power_min_singular(dim_, solve, solve);
  }

 private:
  int cg_max_iter() const { return static_cast<int>(10 * eq_.dim() + 10); }

  // Accepts theta + s if it strictly reduces ||G||.
  bool try_step(Vector& theta, Vector& grad, double& gnorm, double& last_step, const Vector& s) {
    if (!all_finite(s)) return false;
    Vector candidate = theta + s;
    Vector g_new;
    try {
      g_new = eval_G_dense(eq_, candidate, w_, opts_.threads);
    } catch (const EvaluationError&) {
      return false;
    }
    const double n_new = g_new.norm();
    if (!(n_new < gnorm)) return false;
    theta = std::move(candidate);
    grad = std::move(g_new);
    gnorm = n_new;
    last_step = s.norm();
    return true;
  }

  bool step_dense(Vector& theta, Vector& grad, double& gnorm, double& last_step) {
    const Matrix h = hessian(theta);
    {
      const DenseFactorization fact(h);
      if (fact.rcond() > std::numeric_limits<double>::epsilon() &&
          try_step(theta, grad, gnorm, last_step, -fact.solve(grad)))
        return true;
    }
    // Levenberg-Marquardt: (H^T H + mu I) s = -H^T G is a descent direction
    // for ||G||^2 for every mu > 0.
    const Matrix hth = h.transpose() * h;
    const Vector rhs = -(h.transpose() * grad);
    double mu = opts_.initial_damping * std::max(hth.diagonal().mean(), 1e-300);
    for (std::size_t k = 0; k < opts_.max_damping_tries; ++k, mu *= 10.0) {
      Matrix damped = hth;
      damped.diagonal().array() += mu;
      Eigen::LLT<Matrix> llt(damped);
      if (llt.info() != Eigen::Success) continue;
      if (try_step(theta, grad, gnorm, last_step, llt.solve(rhs))) return true;
    }
    return false;
  }

  bool step_matrix_free(Vector& theta, Vector& grad, double& gnorm, double& last_step) {
    const Vector diag_probe = eval_H_apply_dense(eq_, theta, w_, Vector::Ones(dim_), opts_.threads);
    double mu = 0.0;
    const double mu0 = opts_.initial_damping * std::max(diag_probe.norm() / std::sqrt(double(dim_)), 1e-300);
    for (std::size_t k = 0; k <= opts_.max_damping_tries; ++k) {
      const CgResult cg = conjugate_gradient(
          [&](const Vector& v) {
            Vector hv = eval_H_apply_dense(eq_, theta, w_, v, opts_.threads);
            return Vector(hv + mu * v);
          },
          -grad, opts_.cg_rel_tol, cg_max_iter());
      if (!cg.negative_curvature && try_step(theta, grad, gnorm, last_step, cg.x)) return true;
      mu = mu == 0.0 ? mu0 : mu * 10.0;
    }
    return false;
  }

  FitResult finish(Vector theta, double gnorm, double last_step, FitResult res) {
    const double sigma = min_singular(theta);
    res.grad_norm = gnorm;
    res.min_singular = sigma;
    if (sigma >= opts_.min_hessian_eig) {
      res.theta = std::move(theta);
      res.converged = true;
      res.status = FitStatus::converged;
      return res;
    }
    // Separable-type degeneracy: the iterate is still moving and every
    // weighted g_n has itself vanished, so ||G|| is small without any
    // cancellation between data and no finite root exists. A genuine
    // degenerate root has G = 0 through cancellation of non-zero terms.
    const double moving = std::sqrt(opts_.grad_tol) * (1.0 + theta.norm());
    if (last_step > moving && gnorm > 1e4 * std::numeric_limits<double>::epsilon() &&
        mean_abs_term(theta) <= std::sqrt(opts_.grad_tol)) {
      res.theta = std::move(theta);
      res.converged = false;
      res.status = FitStatus::diverging;
      res.message = "Jacobian degenerates along the iterate path; no finite root";
      return res;
    }
    throw SingularityError(
        "H(theta, w) is singular at the solution (smallest singular value " +
            diag(sigma) + " < " + diag(opts_.min_hessian_eig) + ")",
        sigma);
  }

  // sum_n w_n ||g_n(theta)|| / sum_n w_n over the positive weights
  double mean_abs_term(const Vector& theta) const {
    Vector gn(dim_);
    double s = 0.0, wsum = 0.0;
    for (std::size_t i = 0; i < eq_.n_points(); ++i) {
      const double wi = w_[static_cast<Eigen::Index>(i)];
      if (wi == 0.0) continue;
      eq_.g(i, theta, gn);
      s += std::abs(wi) * gn.norm();
      wsum += std::abs(wi);
    }
    return wsum > 0.0 ? s / wsum : 0.0;
  }

  const EstimatingEquation& eq_;
  const Vector& w_;
  const SolverOptions& opts_;
  Eigen::Index dim_;
};

}  // namespace detail

/// Root of G(theta, w) = 0 by damped Newton. Non-convergence is reported in
/// the result; a singular Jacobian at a root throws SingularityError.
inline FitResult solve(const EstimatingEquation& eq, const WeightVector& w, const Parameter& init,
                       const SolverOptions& opts = {}) {
  opts.validate();
  require_weights(eq, w);
  require_parameter(eq, init);
  const Vector dense_w = w.dense();
  return detail::NewtonSolver(eq, dense_w, opts).run(init);
}

struct BatchEntry {
  std::optional<FitResult> fit;
  std::string error;  // set when the solve threw

  bool ok() const { return fit.has_value() && fit->converged; }
};

/// Refits every weight vector starting from base.theta. Entry i always
/// corresponds to weights[i]; errors are recorded per entry.
inline std::vector<BatchEntry> warm_start_batch(const EstimatingEquation& eq,
                                                const std::vector<WeightVector>& weights,
                                                const FitResult& base,
                                                const SolverOptions& opts = {},
                                                std::size_t threads = 1) {
  if (!base.converged) throw InputError("warm_start_batch: base fit did not converge");
  std::vector<BatchEntry> out(weights.size());
  SolverOptions inner = opts;
  inner.threads = 1;
  parallel_for(weights.size(), threads, [&](std::size_t i) {
    try {
      out[i].fit = solve(eq, weights[i], base.theta, inner);
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace ijkit
