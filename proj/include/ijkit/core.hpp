#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ijkit/errors.hpp"
#include "ijkit/parallel.hpp"

namespace ijkit {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Model parameter. A plain Eigen vector; dimension and finiteness are
/// checked at the API boundary (see require_parameter).
using Parameter = Eigen::VectorXd;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.array().isFinite().all();
}

// ---------------------------------------------------------------------------
// WeightVector

/// Per-datum weights of length N. Only entries different from 1 are stored,
/// sorted by index, so a leave-k-out vector costs O(k).
class WeightVector {
 public:
  struct Entry {
    std::size_t index;
    double weight;
    bool operator==(const Entry&) const = default;
  };

  WeightVector() = default;

  static WeightVector ones(std::size_t n) {
    WeightVector w;
    w.n_ = n;
    return w;
  }

  static WeightVector zeros(std::size_t n) {
    WeightVector w;
    w.n_ = n;
    w.entries_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) w.entries_.push_back({i, 0.0});
    return w;
  }

  static WeightVector from_dense(const Eigen::Ref<const Vector>& dense) {
    WeightVector w;
    w.n_ = static_cast<std::size_t>(dense.size());
    for (Eigen::Index i = 0; i < dense.size(); ++i) {
      if (!std::isfinite(dense[i]))
        throw InputError("weight " + std::to_string(i) + " is not finite");
      if (dense[i] != 1.0)
        w.entries_.push_back({static_cast<std::size_t>(i), dense[i]});
    }
    return w;
  }

  /// Entries absent from the map default to 1.
  static WeightVector from_sparse(std::size_t n,
                                  const std::map<std::size_t, double>& m) {
    WeightVector w;
    w.n_ = n;
    for (const auto& [i, v] : m) {
      if (i >= n)
        throw InputError("weight index " + std::to_string(i) +
                         " out of range for N = " + std::to_string(n));
      if (!std::isfinite(v))
        throw InputError("weight " + std::to_string(i) + " is not finite");
      if (v != 1.0) w.entries_.push_back({i, v});
    }
    return w;
  }

  /// Ones everywhere except zeros at `left_out` (need not be sorted).
  static WeightVector leave_out(std::size_t n, std::vector<std::size_t> left_out) {
    std::sort(left_out.begin(), left_out.end());
    if (std::adjacent_find(left_out.begin(), left_out.end()) != left_out.end())
      throw InputError("leave_out: duplicate index");
    WeightVector w;
    w.n_ = n;
    for (std::size_t i : left_out) {
      if (i >= n) throw InputError("leave_out: index out of range");
      w.entries_.push_back({i, 0.0});
    }
    return w;
  }

  std::size_t size() const noexcept { return n_; }

  /// Entries with weight != 1, ascending by index.
  const std::vector<Entry>& non_unit_entries() const noexcept { return entries_; }

  double operator[](std::size_t i) const {
    auto it = std::lower_bound(
        entries_.begin(), entries_.end(), i,
        [](const Entry& e, std::size_t idx) { return e.index < idx; });
    return (it != entries_.end() && it->index == i) ? it->weight : 1.0;
  }

  Vector dense() const {
    Vector d = Vector::Ones(static_cast<Eigen::Index>(n_));
    for (const auto& e : entries_) d[static_cast<Eigen::Index>(e.index)] = e.weight;
    return d;
  }

  bool is_ones() const noexcept { return entries_.empty(); }

  double sum() const {
    double s = static_cast<double>(n_ - entries_.size());
    for (const auto& e : entries_) s += e.weight;
    return s;
  }

  double l2_norm() const {
    double s = static_cast<double>(n_ - entries_.size());
    for (const auto& e : entries_) s += e.weight * e.weight;
    return std::sqrt(s);
  }

  /// ||w - 1||_2
  double delta_l2_norm() const {
    double s = 0.0;
    for (const auto& e : entries_) s += (e.weight - 1.0) * (e.weight - 1.0);
    return std::sqrt(s);
  }

  /// Indices with weight exactly zero (the held-out set).
  std::vector<std::size_t> zero_indices() const {
    std::vector<std::size_t> out;
    for (const auto& e : entries_)
      if (e.weight == 0.0) out.push_back(e.index);
    return out;
  }

  bool operator==(const WeightVector&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// EstimatingEquation

/// A set of N per-datum estimating functions g_n: R^D -> R^D together with
/// their Jacobians h_n = dg_n / dtheta^T. Implementations must be pure and
/// safe to call concurrently.
///
/// The accumulate_* hooks compute weighted sums over a contiguous datum
/// range; the defaults loop over g/h, models may override them with faster
/// kernels as long as the result equals the plain loop up to rounding.
class EstimatingEquation {
 public:
  virtual ~EstimatingEquation() = default;

  virtual std::size_t n_points() const = 0;
  virtual std::size_t dim() const = 0;

  virtual void g(std::size_t n, const Vector& theta, Eigen::Ref<Vector> out) const = 0;
  virtual void h(std::size_t n, const Vector& theta, Eigen::Ref<Matrix> out) const = 0;

  /// out = h_n(theta) v
  virtual void h_apply(std::size_t n, const Vector& theta, const Vector& v,
                       Eigen::Ref<Vector> out) const {
    Matrix hn(dim(), dim());
    h(n, theta, hn);
    out = hn * v;
  }

  /// out += sum_{n in [begin, end)} w[n] g_n(theta)
  virtual void accumulate_g(std::size_t begin, std::size_t end, const Vector& theta,
                            const double* w, Eigen::Ref<Vector> out) const {
    Vector gn(dim());
    for (std::size_t n = begin; n < end; ++n) {
      if (w[n] == 0.0) continue;
      g(n, theta, gn);
      out.noalias() += w[n] * gn;
    }
  }

  /// out += sum_{n in [begin, end)} w[n] h_n(theta)
  virtual void accumulate_h(std::size_t begin, std::size_t end, const Vector& theta,
                            const double* w, Eigen::Ref<Matrix> out) const {
    Matrix hn(dim(), dim());
    for (std::size_t n = begin; n < end; ++n) {
      if (w[n] == 0.0) continue;
      h(n, theta, hn);
      out.noalias() += w[n] * hn;
    }
  }

  /// out += sum_{n in [begin, end)} w[n] h_n(theta) v
  virtual void accumulate_h_apply(std::size_t begin, std::size_t end,
                                  const Vector& theta, const double* w,
                                  const Vector& v, Eigen::Ref<Vector> out) const {
    Vector hv(dim());
    for (std::size_t n = begin; n < end; ++n) {
      if (w[n] == 0.0) continue;
      h_apply(n, theta, v, hv);
      out.noalias() += w[n] * hv;
    }
  }

  Vector eval_g(std::size_t n, const Vector& theta) const {
    Vector out(dim());
    g(n, theta, out);
    return out;
  }

  Matrix eval_h(std::size_t n, const Vector& theta) const {
    Matrix out(dim(), dim());
    h(n, theta, out);
    return out;
  }
};

inline void require_parameter(const EstimatingEquation& eq, const Parameter& theta) {
  if (static_cast<std::size_t>(theta.size()) != eq.dim())
    throw InputError("parameter has length " + std::to_string(theta.size()) +
                     ", equation dimension is " + std::to_string(eq.dim()));
  if (!all_finite(theta)) throw InputError("parameter has non-finite entries");
}

inline void require_weights(const EstimatingEquation& eq, const WeightVector& w) {
  if (w.size() != eq.n_points())
    throw InputError("weight vector has length " + std::to_string(w.size()) +
                     ", equation has N = " + std::to_string(eq.n_points()));
}

namespace detail {

/// Fixed chunk size for aggregate sums. Partial sums over chunks are
/// combined pairwise, so the floating-point result does not depend on the
/// number of threads.
inline constexpr std::size_t kReductionChunk = 256;

template <typename T, typename Accumulate>
T chunked_sum(std::size_t n, std::size_t threads, const T& zero, Accumulate&& acc) {
  const std::size_t chunks = std::max<std::size_t>(1, (n + kReductionChunk - 1) / kReductionChunk);
  std::vector<T> parts(chunks, zero);
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * kReductionChunk;
    const std::size_t end = std::min(n, begin + kReductionChunk);
    acc(begin, end, parts[c]);
  });
  return pairwise_combine(parts, 0, chunks, [](T a, T b) {
    a += b;
    return a;
  });
}

/// Locates the first datum with a non-finite g_n (or h_n) and throws.
inline void report_non_finite(const EstimatingEquation& eq, const Vector& theta,
                              const Vector& w, bool hessian) {
  for (std::size_t n = 0; n < eq.n_points(); ++n) {
    if (w[static_cast<Eigen::Index>(n)] == 0.0) continue;
    if (hessian) {
      if (!all_finite(eq.eval_h(n, theta)))
        throw EvaluationError(n, "h_n(theta) is not finite");
    } else if (!all_finite(eq.eval_g(n, theta))) {
      throw EvaluationError(n, "g_n(theta) is not finite");
    }
  }
  throw EvaluationError(0, hessian ? "weighted sum of h_n is not finite"
                                   : "weighted sum of g_n is not finite");
}

}  // namespace detail

/// G(theta, w) = (1/N) sum_n w_n g_n(theta), with w given densely.
inline Vector eval_G_dense(const EstimatingEquation& eq, const Parameter& theta,
                           const Vector& w, std::size_t threads = 1) {
  require_parameter(eq, theta);
  const std::size_t n = eq.n_points();
  const Vector zero = Vector::Zero(eq.dim());
  Vector sum = detail::chunked_sum(n, threads, zero, [&](std::size_t b, std::size_t e, Vector& out) {
    eq.accumulate_g(b, e, theta, w.data(), out);
  });
  if (!all_finite(sum)) detail::report_non_finite(eq, theta, w, false);
  return sum / static_cast<double>(n);
}

inline Matrix eval_H_dense(const EstimatingEquation& eq, const Parameter& theta,
                           const Vector& w, std::size_t threads = 1) {
  require_parameter(eq, theta);
  const std::size_t n = eq.n_points();
  const Matrix zero = Matrix::Zero(eq.dim(), eq.dim());
  Matrix sum = detail::chunked_sum(n, threads, zero, [&](std::size_t b, std::size_t e, Matrix& out) {
    eq.accumulate_h(b, e, theta, w.data(), out);
  });
  if (!all_finite(sum)) detail::report_non_finite(eq, theta, w, true);
  return sum / static_cast<double>(n);
}

/// G(theta, w) := (1/N) sum_n w_n g_n(theta)
inline Vector eval_G(const EstimatingEquation& eq, const Parameter& theta,
                     const WeightVector& w, std::size_t threads = 1) {
  require_weights(eq, w);
  return eval_G_dense(eq, theta, w.dense(), threads);
}

/// H(theta, w) := (1/N) sum_n w_n h_n(theta)
inline Matrix eval_H(const EstimatingEquation& eq, const Parameter& theta,
                     const WeightVector& w, std::size_t threads = 1) {
  require_weights(eq, w);
  return eval_H_dense(eq, theta, w.dense(), threads);
}

/// H(theta, w) v without forming H.
inline Vector eval_H_apply_dense(const EstimatingEquation& eq, const Parameter& theta,
                                 const Vector& w, const Vector& v,
                                 std::size_t threads = 1) {
  const std::size_t n = eq.n_points();
  const Vector zero = Vector::Zero(eq.dim());
  Vector sum = detail::chunked_sum(n, threads, zero, [&](std::size_t b, std::size_t e, Vector& out) {
    eq.accumulate_h_apply(b, e, theta, w.data(), v, out);
  });
  if (!all_finite(sum)) detail::report_non_finite(eq, theta, w, true);
  return sum / static_cast<double>(n);
}

/// Max over data and entries of |central difference of g_n - h_n| / (1 + |h_n|).
inline double finite_diff_check(const EstimatingEquation& eq, const Parameter& theta,
                                double step) {
  if (!(step > 0.0)) throw InputError("finite_diff_check: step must be positive");
  require_parameter(eq, theta);
  const auto d = static_cast<Eigen::Index>(eq.dim());
  double worst = 0.0;
  Vector gp(d), gm(d);
  Matrix hn(d, d);
  for (std::size_t n = 0; n < eq.n_points(); ++n) {
    eq.h(n, theta, hn);
    for (Eigen::Index j = 0; j < d; ++j) {
      Vector tp = theta, tm = theta;
      tp[j] += step;
      tm[j] -= step;
      eq.g(n, tp, gp);
      eq.g(n, tm, gm);
      const Vector col = (gp - gm) / (2.0 * step);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double err = std::abs(col[i] - hn(i, j)) / (1.0 + std::abs(hn(i, j)));
        if (!std::isfinite(err)) throw EvaluationError(n, "non-finite derivative");
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

}  // namespace ijkit
