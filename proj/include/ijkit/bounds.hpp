#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ijkit/core.hpp"
#include "ijkit/ij.hpp"
#include "ijkit/linalg.hpp"
#include "ijkit/random.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/weights.hpp"

namespace ijkit {

/// L2 ball around the base fit over which suprema are estimated. The radius
/// also plays the role of Delta_theta in the local-smoothness constant.
/// radius <= 0 requests the automatic choice in certify().
struct DomainSpec {
  Parameter center;
  double radius = 0.0;
  std::size_t n_samples = 64;
  std::uint64_t seed = 0;
};

struct IJCertificate {
  double c_g = 0.0;
  double c_h = 0.0;
  double c_op = 0.0;
  double l_h = 0.0;
  double c_w = 0.0;
  double c_ij = 0.0;
  double delta_theta = 0.0;
  double delta_cap = 0.0;
  double delta = 0.0;
  double bound = 0.0;
  bool valid = false;

  // estimation metadata
  std::size_t dim = 0;
  std::size_t n_points = 0;
  std::size_t n_samples = 0;  // sampled parameters, center excluded
  std::size_t n_weights = 0;
  std::uint64_t seed = 0;
  bool radius_auto = false;
  bool sampled_sup = true;  // suprema are maxima over a finite sample
};

struct BoundsOptions {
  double min_hessian_eig = 1e-8;
  std::size_t threads = 1;
};

/// domain.center followed by n_samples points uniform in the ball, drawn in
/// antipodal pairs center +/- p.
inline std::vector<Parameter> sample_domain(const DomainSpec& domain) {
  if (!(domain.radius > 0.0)) throw InputError("domain radius must be positive");
  if (domain.n_samples < 2) throw InputError("domain needs at least 2 samples");
  const auto d = domain.center.size();
  Rng rng(domain.seed);
  std::vector<Parameter> out;
  out.reserve(domain.n_samples + 1);
  out.push_back(domain.center);
  while (out.size() < domain.n_samples + 1) {
    Vector dir = rng.normal_vector(d);
    const double norm = dir.norm();
    if (norm == 0.0) continue;
    const double r = domain.radius * std::pow(rng.uniform(), 1.0 / double(d));
    const Vector p = dir * (r / norm);
    out.push_back(domain.center + p);
    if (out.size() < domain.n_samples + 1) out.push_back(domain.center - p);
  }
  return out;
}

/// Sampled estimates of C_g, C_h, C_op and L_h. Only the constant fields
/// and metadata of the returned certificate are filled in.
inline IJCertificate estimate_constants(const EstimatingEquation& eq, const FitResult& base,
                                        const DomainSpec& domain, const BoundsOptions& opts = {}) {
  if (!base.converged) throw InputError("estimate_constants: base fit did not converge");
  DomainSpec dom = domain;
  if (dom.center.size() == 0) dom.center = base.theta;
  require_parameter(eq, dom.center);
  const auto samples = sample_domain(dom);
  const std::size_t n = eq.n_points();
  const auto d = static_cast<Eigen::Index>(eq.dim());
  const Vector ones = Vector::Ones(static_cast<Eigen::Index>(n));
  const double sqrt_n = std::sqrt(double(n));

  struct Local {
    double c_g = 0, c_h = 0, c_op = 0, l_h = 0;
  };
  std::vector<Local> per(samples.size());
  parallel_for(samples.size(), opts.threads, [&](std::size_t s) {
    const Parameter& theta = samples[s];
    Vector gn(d);
    Matrix hn(d, d), hc(d, d);
    double sg = 0, sh = 0, sdiff = 0;
    for (std::size_t i = 0; i < n; ++i) {
      eq.g(i, theta, gn);
      eq.h(i, theta, hn);
      if (!all_finite(gn) || !all_finite(hn)) throw EvaluationError(i, "non-finite g_n or h_n");
      sg += gn.squaredNorm();
      sh += hn.squaredNorm();
      if (s != 0) {
        eq.h(i, base.theta, hc);
        sdiff += (hn - hc).squaredNorm();
      }
    }
    const double sigma = smallest_singular_value(eval_H_dense(eq, theta, ones));
    if (!(sigma > opts.min_hessian_eig)) {
      std::string where;
      for (Eigen::Index j = 0; j < d; ++j) where += (j ? "," : "") + diag(theta[j]);
      throw SingularityError("H(theta, 1) is singular at sampled theta = [" + where + "]", sigma);
    }
    per[s].c_g = std::sqrt(sg) / sqrt_n;
    per[s].c_h = std::sqrt(sh) / sqrt_n;
    per[s].c_op = 1.0 / sigma;
    const double dist = (theta - base.theta).norm();
    if (s != 0 && dist > 0) per[s].l_h = std::sqrt(sdiff) / sqrt_n / dist;
  });

  IJCertificate cert;
  for (const auto& p : per) {
    cert.c_g = std::max(cert.c_g, p.c_g);
    cert.c_h = std::max(cert.c_h, p.c_h);
    cert.c_op = std::max(cert.c_op, p.c_op);
    cert.l_h = std::max(cert.l_h, p.l_h);
  }
  cert.delta_theta = dom.radius;
  cert.dim = eq.dim();
  cert.n_points = n;
  cert.n_samples = dom.n_samples;
  cert.seed = dom.seed;
  return cert;
}

/// max over weights and sampled theta of
///   max(||(1/N) sum (w_n - 1) g_n(theta)||_1, ||(1/N) sum (w_n - 1) h_n(theta)||_1)
inline double compute_delta(const EstimatingEquation& eq, const FitResult& base,
                            const DomainSpec& domain, const std::vector<WeightVector>& weights,
                            const BoundsOptions& opts = {}) {
  DomainSpec dom = domain;
  if (dom.center.size() == 0) dom.center = base.theta;
  require_parameter(eq, dom.center);
  for (const auto& w : weights) require_weights(eq, w);
  const auto samples = sample_domain(dom);
  const std::size_t n = eq.n_points();
  const auto d = static_cast<Eigen::Index>(eq.dim());

  std::vector<char> needed(n, 0);
  for (const auto& w : weights)
    for (const auto& e : w.non_unit_entries()) needed[e.index] = 1;

  std::vector<double> per(samples.size(), 0.0);
  parallel_for(samples.size(), opts.threads, [&](std::size_t s) {
    const Parameter& theta = samples[s];
    // per-datum values for this theta, only where some weight differs from 1
    std::vector<Vector> gs(n);
    std::vector<Matrix> hs(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!needed[i]) continue;
      gs[i] = eq.eval_g(i, theta);
      hs[i] = eq.eval_h(i, theta);
    }
    double worst = 0.0;
    Vector sg(d);
    Matrix sh(d, d);
    for (const auto& w : weights) {
      sg.setZero();
      sh.setZero();
      for (const auto& e : w.non_unit_entries()) {
        sg.noalias() += (e.weight - 1.0) * gs[e.index];
        sh.noalias() += (e.weight - 1.0) * hs[e.index];
      }
      const double lg = sg.lpNorm<1>() / double(n);
      const double lh = sh.cwiseAbs().sum() / double(n);
      worst = std::max({worst, lg, lh});
    }
    per[s] = worst;
  });
  return *std::max_element(per.begin(), per.end());
}

/// C_w = max ||w||_2 / sqrt(N)
inline double weight_constant(const std::vector<WeightVector>& weights) {
  double c = 0.0;
  for (const auto& w : weights)
    c = std::max(c, w.l2_norm() / std::sqrt(double(w.size())));
  return c;
}

/// Fills the derived fields from the estimated constants:
///   C_IJ = 1 + D C_w L_h C_op
///   Delta_delta = min(Delta_theta / C_op, 1 / (2 C_IJ C_op))
///   bound = 2 C_op^2 C_IJ delta^2, valid iff delta <= Delta_delta
inline void finalize_certificate(IJCertificate& cert) {
  cert.c_ij = 1.0 + double(cert.dim) * cert.c_w * cert.l_h * cert.c_op;
  cert.delta_cap = std::min(cert.delta_theta / cert.c_op, 1.0 / (2.0 * cert.c_ij * cert.c_op));
  cert.bound = 2.0 * cert.c_op * cert.c_op * cert.c_ij * cert.delta * cert.delta;
  cert.valid = cert.delta <= cert.delta_cap;
}

/// Radius that contains every IJ prediction: twice the largest offset
/// ||theta_IJ(w) - theta1||, floored at a tiny positive value.
inline double auto_radius(const EstimatingEquation& eq, const FitResult& base,
                          const std::vector<WeightVector>& weights, const BoundsOptions& opts) {
  HandleOptions ho;
  ho.min_hessian_eig = opts.min_hessian_eig;
  ho.threads = opts.threads;
  const IJHandle ij = build_handle(eq, base, HessianMode::dense, ho);
  double worst = 0.0;
  for (const auto& w : weights) worst = std::max(worst, (ij_predict(ij, w) - base.theta).norm());
  return std::max(2.0 * worst, 1e-8 * (1.0 + base.theta.norm()));
}

inline IJCertificate certify(const EstimatingEquation& eq, const FitResult& base,
                             const DomainSpec& domain, const std::vector<WeightVector>& weights,
                             const BoundsOptions& opts = {}) {
  if (weights.empty()) throw InputError("certify: empty weight set");
  DomainSpec dom = domain;
  if (dom.center.size() == 0) dom.center = base.theta;
  bool is_auto = false;
  if (!(dom.radius > 0.0)) {
    dom.radius = auto_radius(eq, base, weights, opts);
    is_auto = true;
  }
  IJCertificate cert = estimate_constants(eq, base, dom, opts);
  cert.c_w = weight_constant(weights);
  cert.delta = compute_delta(eq, base, dom, weights, opts);
  cert.n_weights = weights.size();
  cert.radius_auto = is_auto;
  finalize_certificate(cert);
  return cert;
}

inline void to_json(nlohmann::json& j, const IJCertificate& c) {
  j = nlohmann::json{{"c_g", c.c_g},
                     {"c_h", c.c_h},
                     {"c_op", c.c_op},
                     {"l_h", c.l_h},
                     {"c_w", c.c_w},
                     {"c_ij", c.c_ij},
                     {"delta_theta", c.delta_theta},
                     {"delta_cap", c.delta_cap},
                     {"delta", c.delta},
                     {"bound", c.bound},
                     {"valid", c.valid},
                     {"metadata",
                      {{"dim", c.dim},
                       {"n_points", c.n_points},
                       {"n_samples", c.n_samples},
                       {"n_weights", c.n_weights},
                       {"seed", c.seed},
                       {"radius_auto", c.radius_auto},
                       {"sampled_sup", c.sampled_sup}}}};
}

inline void from_json(const nlohmann::json& j, IJCertificate& c) {
  j.at("c_g").get_to(c.c_g);
  j.at("c_h").get_to(c.c_h);
  j.at("c_op").get_to(c.c_op);
  j.at("l_h").get_to(c.l_h);
  j.at("c_w").get_to(c.c_w);
  j.at("c_ij").get_to(c.c_ij);
  j.at("delta_theta").get_to(c.delta_theta);
  j.at("delta_cap").get_to(c.delta_cap);
  j.at("delta").get_to(c.delta);
  j.at("bound").get_to(c.bound);
  j.at("valid").get_to(c.valid);
  const auto& m = j.at("metadata");
  m.at("dim").get_to(c.dim);
  m.at("n_points").get_to(c.n_points);
  m.at("n_samples").get_to(c.n_samples);
  m.at("n_weights").get_to(c.n_weights);
  m.at("seed").get_to(c.seed);
  m.at("radius_auto").get_to(c.radius_auto);
  m.at("sampled_sup").get_to(c.sampled_sup);
}

// ---------------------------------------------------------------------------
// Measured error against exact refits

struct IJErrorReport {
  double max_gap = 0.0;
  std::vector<double> gaps;  // NaN where the refit failed
  std::size_t failures = 0;
};

inline IJErrorReport measure_ij_error(const EstimatingEquation& eq, const FitResult& base,
                                      const std::vector<WeightVector>& weights,
                                      const SolverOptions& solver = {}, std::size_t threads = 1) {
  const IJHandle ij = build_handle(eq, base);
  const auto approx = ij_batch(ij, weights, threads);
  const auto exact = warm_start_batch(eq, weights, base, solver, threads);
  IJErrorReport rep;
  rep.gaps.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!exact[i].ok()) {
      rep.gaps[i] = std::numeric_limits<double>::quiet_NaN();
      ++rep.failures;
      continue;
    }
    rep.gaps[i] = (approx[i] - exact[i].fit->theta).norm();
    rep.max_gap = std::max(rep.max_gap, rep.gaps[i]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Leave-k-out rate check

struct RateCheckResult {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<std::size_t> sizes;
  std::vector<double> max_errors;
};

struct RateCheckOptions {
  std::optional<std::size_t> limit;  // cap on leave-k-out vectors per size
  SolverOptions solver;
  std::size_t threads = 1;
};

/// Builds the estimating equation for a dataset of size n drawn with `seed`.
using ModelFactory = std::function<std::shared_ptr<const EstimatingEquation>(std::size_t n,
                                                                             std::uint64_t seed)>;

/// Least-squares slope of log(max_w ||theta_IJ(w) - theta(w)||) on log N.
inline RateCheckResult corollary_rate_check(const ModelFactory& factory,
                                            const std::vector<std::size_t>& sizes, std::size_t k,
                                            std::uint64_t seed, const RateCheckOptions& opts = {}) {
  if (k < 1) throw InputError("rate check: k must be at least 1 (the k = 0 family has zero error)");
  if (sizes.size() < 3) throw InputError("rate check: need at least 3 sizes");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw InputError("rate check: sizes must be strictly increasing");

  RateCheckResult res;
  res.sizes = sizes;
  for (std::size_t n : sizes) {
    const auto eq = factory(n, mix_seed(seed, n));
    if (!eq || eq->n_points() != n) throw InputError("rate check: factory returned wrong size");
    const FitResult base = solve(*eq, WeightVector::ones(n), Parameter::Zero(eq->dim()), opts.solver);
    if (!base.converged)
      throw Error("rate check: base fit did not converge at N = " + std::to_string(n));
    const auto weights = leave_k_out(n, k, opts.limit, mix_seed(seed, n + 1));
    const auto rep = measure_ij_error(*eq, base, weights, opts.solver, opts.threads);
    if (rep.failures > 0)
      throw Error("rate check: " + std::to_string(rep.failures) +
                  " refits did not converge at N = " + std::to_string(n));
    if (!(rep.max_gap > 0.0))
      throw Error("rate check: zero error at N = " + std::to_string(n) + "; slope undefined");
    res.max_errors.push_back(rep.max_gap);
  }
  const std::size_t m = sizes.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < m; ++i) {
    mx += std::log(double(sizes[i]));
    my += std::log(res.max_errors[i]);
  }
  mx /= double(m);
  my /= double(m);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = std::log(double(sizes[i])) - mx;
    sxy += dx * (std::log(res.max_errors[i]) - my);
    sxx += dx * dx;
  }
  res.slope = sxy / sxx;
  res.intercept = my - res.slope * mx;
  return res;
}

// ---------------------------------------------------------------------------
// Inequality checks

struct HolderCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

/// ||(1/N) sum w_n a_n||_1 <= sqrt(D_A) (||w||_2 / sqrt N) (||a||_2 / sqrt N),
/// with each a_n flattened to a vector of length D_A.
inline HolderCheck check_holder(const Vector& w, const std::vector<Vector>& tensors) {
  const auto n = static_cast<std::size_t>(w.size());
  if (tensors.size() != n) throw InputError("check_holder: need one tensor per weight");
  if (n == 0) throw InputError("check_holder: empty input");
  const auto da = tensors.front().size();
  Vector sum = Vector::Zero(da);
  double a_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tensors[i].size() != da) throw InputError("check_holder: tensors have different sizes");
    sum += w[static_cast<Eigen::Index>(i)] * tensors[i];
    a_sq += tensors[i].squaredNorm();
  }
  const double nn = double(n);
  HolderCheck c;
  c.lhs = sum.lpNorm<1>() / nn;
  c.rhs = std::sqrt(double(da)) * (w.norm() / std::sqrt(nn)) * (std::sqrt(a_sq) / std::sqrt(nn));
  c.holds = c.lhs <= c.rhs * (1.0 + 1e-12) + std::numeric_limits<double>::min();
  return c;
}

inline HolderCheck check_holder(const WeightVector& w, const std::vector<Vector>& tensors) {
  return check_holder(w.dense(), tensors);
}

struct OpNormCheck {
  bool premise = false;  // ||A - B||_1 <= 1 / (2 c_op)
  double diff_l1 = 0.0;
  double inv_norm_b = 0.0;  // ||B^-1||_op, +inf if singular
  bool holds = true;        // premise implies inv_norm_b <= 2 c_op
};

/// Given ||A^-1||_op <= c_op, checks that an entrywise-L1 perturbation of at
/// most 1/(2 c_op) keeps ||B^-1||_op <= 2 c_op.
inline OpNormCheck check_opnorm_continuity(const Matrix& a, const Matrix& b, double c_op) {
  if (a.rows() != a.cols() || b.rows() != a.rows() || b.cols() != a.cols())
    throw InputError("check_opnorm_continuity: shapes differ or are not square");
  const double sa = smallest_singular_value(a);
  if (!(sa > 0.0) || 1.0 / sa > c_op * (1.0 + 1e-12))
    throw InputError("check_opnorm_continuity: ||A^-1||_op exceeds c_op");
  OpNormCheck c;
  c.diff_l1 = (a - b).cwiseAbs().sum();
  c.premise = c.diff_l1 <= 0.5 / c_op;
  const double sb = smallest_singular_value(b);
  c.inv_norm_b = sb > 0.0 ? 1.0 / sb : std::numeric_limits<double>::infinity();
  c.holds = !c.premise || c.inv_norm_b <= 2.0 * c_op * (1.0 + 1e-12);
  return c;
}

}  // namespace ijkit
