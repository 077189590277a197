#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ijkit/bounds.hpp"
#include "ijkit/core.hpp"
#include "ijkit/ij.hpp"
#include "ijkit/models.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/weights.hpp"

namespace ijkit {

struct ExperimentConfig {
  ModelKind model = ModelKind::logistic;
  std::optional<std::string> data_path;  // CSV; synthetic data otherwise
  SyntheticSpec synthetic;               // used when data_path is empty
  bool has_bias = true;
  WeightFamily family;
  SolverOptions solver;
  DomainSpec domain;  // radius <= 0: automatic
  HessianMode mode = HessianMode::dense;
  bool run_ij = true;
  bool run_exact = false;
  bool certify = false;
  std::size_t test_n = 20000;  // fresh synthetic draw; 0 disables
  std::size_t replications = 1;
  std::size_t timing_repetitions = 5;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool record_timings = true;
};

struct WeightRecord {
  std::size_t replication = 0;
  std::size_t weight_id = 0;
  std::size_t held_out_count = 0;
  std::optional<Parameter> theta_ij;
  std::optional<Parameter> theta_exact;
  std::optional<double> gap_l2;
  std::optional<double> loss_ij;
  std::optional<double> loss_exact;
  std::string exact_status;  // empty when no refit was run
};

struct ReplicationSummary {
  std::size_t index = 0;
  std::uint64_t data_seed = 0;
  Parameter theta_base;
  double base_grad_norm = 0.0;
  double train_loss = 0.0;
  std::optional<double> cv_ij;
  std::optional<double> cv_exact;
  std::optional<double> test_loss;
  std::size_t exact_failures = 0;
};

struct Aggregate {
  double train_loss = 0.0;
  std::optional<double> cv_ij;
  std::optional<double> cv_exact;
  std::optional<double> test_loss;
  /// share of replications with |CV_IJ - CV_exact| < |CV_exact - train|
  std::optional<double> frac_ij_closer_than_train;
  /// share of replications with CV_IJ <= CV_exact
  std::optional<double> frac_ij_below_exact;
};

/// Wall-clock seconds, medians over repetitions. The spans are measured
/// back to back and do not overlap.
struct Timings {
  double base_fit = 0.0;
  double handle_build = 0.0;  // assemble H1, factorize, cache g_n
  double ij_batch = 0.0;
  double exact_batch = 0.0;
  double ij_total = 0.0;      // median of handle_build + ij_batch
  double exact_total = 0.0;   // median of exact_batch
  std::size_t repetitions = 0;
};

struct ExperimentReport {
  std::string command;
  std::string model;
  std::size_t n_points = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  std::string family;
  std::size_t weight_count = 0;  // per replication
  std::vector<WeightRecord> records;
  std::vector<ReplicationSummary> replications;
  Aggregate aggregate;
  std::optional<Timings> timings;
  std::optional<IJCertificate> certificate;
  std::optional<double> measured_max_gap;
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline nlohmann::json vec_json(const Parameter& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Parameter json_vec(const nlohmann::json& j) {
  Parameter v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

template <typename T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json opt_vec_json(const std::optional<Parameter>& v) {
  return v ? vec_json(*v) : nlohmann::json(nullptr);
}

template <typename T>
std::optional<T> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

inline std::optional<Parameter> json_opt_vec(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return json_vec(j.at(key));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const WeightRecord& r) {
  j = {{"replication", r.replication},
       {"weight_id", r.weight_id},
       {"held_out_count", r.held_out_count},
       {"theta_ij", detail::opt_vec_json(r.theta_ij)},
       {"theta_exact", detail::opt_vec_json(r.theta_exact)},
       {"gap_l2", detail::opt_json(r.gap_l2)},
       {"loss_ij", detail::opt_json(r.loss_ij)},
       {"loss_exact", detail::opt_json(r.loss_exact)},
       {"exact_status", r.exact_status}};
}

inline void from_json(const nlohmann::json& j, WeightRecord& r) {
  j.at("replication").get_to(r.replication);
  j.at("weight_id").get_to(r.weight_id);
  j.at("held_out_count").get_to(r.held_out_count);
  r.theta_ij = detail::json_opt_vec(j, "theta_ij");
  r.theta_exact = detail::json_opt_vec(j, "theta_exact");
  r.gap_l2 = detail::json_opt<double>(j, "gap_l2");
  r.loss_ij = detail::json_opt<double>(j, "loss_ij");
  r.loss_exact = detail::json_opt<double>(j, "loss_exact");
  j.at("exact_status").get_to(r.exact_status);
}

inline void to_json(nlohmann::json& j, const ReplicationSummary& r) {
  j = {{"index", r.index},
       {"data_seed", r.data_seed},
       {"theta_base", detail::vec_json(r.theta_base)},
       {"base_grad_norm", r.base_grad_norm},
       {"train_loss", r.train_loss},
       {"cv_ij", detail::opt_json(r.cv_ij)},
       {"cv_exact", detail::opt_json(r.cv_exact)},
       {"test_loss", detail::opt_json(r.test_loss)},
       {"exact_failures", r.exact_failures}};
}

inline void from_json(const nlohmann::json& j, ReplicationSummary& r) {
  j.at("index").get_to(r.index);
  j.at("data_seed").get_to(r.data_seed);
  r.theta_base = detail::json_vec(j.at("theta_base"));
  j.at("base_grad_norm").get_to(r.base_grad_norm);
  j.at("train_loss").get_to(r.train_loss);
  r.cv_ij = detail::json_opt<double>(j, "cv_ij");
  r.cv_exact = detail::json_opt<double>(j, "cv_exact");
  r.test_loss = detail::json_opt<double>(j, "test_loss");
  j.at("exact_failures").get_to(r.exact_failures);
}

inline void to_json(nlohmann::json& j, const Aggregate& a) {
  j = {{"train_loss", a.train_loss},
       {"cv_ij", detail::opt_json(a.cv_ij)},
       {"cv_exact", detail::opt_json(a.cv_exact)},
       {"test_loss", detail::opt_json(a.test_loss)},
       {"frac_ij_closer_than_train", detail::opt_json(a.frac_ij_closer_than_train)},
       {"frac_ij_below_exact", detail::opt_json(a.frac_ij_below_exact)}};
}

inline void from_json(const nlohmann::json& j, Aggregate& a) {
  j.at("train_loss").get_to(a.train_loss);
  a.cv_ij = detail::json_opt<double>(j, "cv_ij");
  a.cv_exact = detail::json_opt<double>(j, "cv_exact");
  a.test_loss = detail::json_opt<double>(j, "test_loss");
  a.frac_ij_closer_than_train = detail::json_opt<double>(j, "frac_ij_closer_than_train");
  a.frac_ij_below_exact = detail::json_opt<double>(j, "frac_ij_below_exact");
}

inline void to_json(nlohmann::json& j, const Timings& t) {
  j = {{"base_fit", t.base_fit},       {"handle_build", t.handle_build},
       {"ij_batch", t.ij_batch},       {"exact_batch", t.exact_batch},
       {"ij_total", t.ij_total},       {"exact_total", t.exact_total},
       {"repetitions", t.repetitions}};
}

inline void from_json(const nlohmann::json& j, Timings& t) {
  j.at("base_fit").get_to(t.base_fit);
  j.at("handle_build").get_to(t.handle_build);
  j.at("ij_batch").get_to(t.ij_batch);
  j.at("exact_batch").get_to(t.exact_batch);
  j.at("ij_total").get_to(t.ij_total);
  j.at("exact_total").get_to(t.exact_total);
  j.at("repetitions").get_to(t.repetitions);
}

inline void to_json(nlohmann::json& j, const ExperimentReport& r) {
  j = {{"command", r.command},
       {"model", r.model},
       {"n_points", r.n_points},
       {"dim", r.dim},
       {"seed", r.seed},
       {"family", r.family},
       {"weight_count", r.weight_count},
       {"records", r.records},
       {"replications", r.replications},
       {"aggregate", r.aggregate},
       {"timings", r.timings ? nlohmann::json(*r.timings) : nlohmann::json(nullptr)},
       {"certificate", r.certificate ? nlohmann::json(*r.certificate) : nlohmann::json(nullptr)},
       {"measured_max_gap", detail::opt_json(r.measured_max_gap)}};
}

inline void from_json(const nlohmann::json& j, ExperimentReport& r) {
  j.at("command").get_to(r.command);
  j.at("model").get_to(r.model);
  j.at("n_points").get_to(r.n_points);
  j.at("dim").get_to(r.dim);
  j.at("seed").get_to(r.seed);
  j.at("family").get_to(r.family);
  j.at("weight_count").get_to(r.weight_count);
  j.at("records").get_to(r.records);
  j.at("replications").get_to(r.replications);
  j.at("aggregate").get_to(r.aggregate);
  r.timings = detail::json_opt<Timings>(j, "timings");
  r.certificate = detail::json_opt<IJCertificate>(j, "certificate");
  r.measured_max_gap = detail::json_opt<double>(j, "measured_max_gap");
}

// ---------------------------------------------------------------------------
// Experiments

namespace detail {

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Fold loss: mean loss over the zero-weight (held-out) indices, or over all
/// data when the weight vector holds nothing out.
inline double fold_loss(const GlmModel& model, const Parameter& theta, const WeightVector& w) {
  const auto held = w.zero_indices();
  return held.empty() ? train_loss(model, theta) : held_out_loss(model, theta, held);
}

struct ReplicationData {
  Dataset train;
  std::optional<Dataset> test;
  std::uint64_t seed = 0;
};

inline ReplicationData replication_data(const ExperimentConfig& cfg, std::size_t r) {
  ReplicationData out;
  if (cfg.data_path) {
    if (cfg.replications != 1)
      throw InputError("replications > 1 needs synthetic data, not a CSV file");
    out.train = read_csv(*cfg.data_path, cfg.has_bias);
    return out;
  }
  SyntheticSpec spec = cfg.synthetic;
  spec.kind = cfg.model;
  spec.has_bias = cfg.has_bias;
  spec.seed = mix_seed(cfg.seed, 2 * r);
  out.seed = spec.seed;
  out.train = generate_synthetic(spec);
  if (cfg.test_n > 0) {
    spec.n = cfg.test_n;
    spec.seed = mix_seed(cfg.seed, 2 * r + 1);
    out.test = generate_synthetic(spec);
  }
  return out;
}

inline FitResult base_fit(const GlmModel& model, const SolverOptions& opts) {
  FitResult base =
      solve(model, WeightVector::ones(model.n_points()), Parameter::Zero(model.dim()), opts);
  if (!base.converged)
    throw Error("base fit did not converge (" + std::string(to_string(base.status)) +
                ", ||G|| = " + diag(base.grad_norm) + ")");
  return base;
}

inline HandleOptions handle_options(const ExperimentConfig& cfg) {
  HandleOptions ho;
  ho.min_hessian_eig = cfg.solver.min_hessian_eig;
  ho.threads = cfg.threads;
  return ho;
}

inline std::optional<double> mean_of(const std::vector<ReplicationSummary>& reps,
                                     std::optional<double> ReplicationSummary::*field) {
  double s = 0.0;
  for (const auto& r : reps) {
    if (!(r.*field)) return std::nullopt;
    s += *(r.*field);
  }
  return reps.empty() ? std::nullopt : std::optional<double>(s / double(reps.size()));
}

}  // namespace detail

/// For each replication: draw (or read) data, fit, evaluate CV_IJ and/or
/// CV_exact over the weight family, and record train and test loss. CV is
/// the mean over weight vectors of the fold loss (mean loss over held-out
/// indices).
inline ExperimentReport run_accuracy_experiment(const ExperimentConfig& cfg,
                                                const std::string& command = "ij-cv") {
  if (cfg.replications < 1) throw InputError("replications must be at least 1");
  ExperimentReport rep;
  rep.command = command;
  rep.model = std::string(to_string(cfg.model));
  rep.seed = cfg.seed;
  rep.family = std::string(to_string(cfg.family.kind));
  std::vector<double> t_base, t_build, t_ij, t_exact;

  for (std::size_t r = 0; r < cfg.replications; ++r) {
    const auto data = detail::replication_data(cfg, r);
    const GlmModel model(cfg.model, data.train);
    rep.n_points = model.n_points();
    rep.dim = model.dim();

    auto t0 = detail::Clock::now();
    const FitResult base = detail::base_fit(model, cfg.solver);
    t_base.push_back(detail::seconds_since(t0));

    std::optional<IJHandle> ij;
    if (cfg.run_ij || cfg.family.kind == FamilyKind::adversarial) {
      t0 = detail::Clock::now();
      ij = build_handle(model, base, cfg.mode, detail::handle_options(cfg));
      t_build.push_back(detail::seconds_since(t0));
    }
    WeightFamily fam = cfg.family;
    fam.seed = mix_seed(cfg.family.seed, r);
    const auto weights = materialize(fam, model.n_points(), ij ? &ij->cache : nullptr);
    rep.weight_count = weights.size();

    std::vector<Parameter> approx;
    if (cfg.run_ij) {
      t0 = detail::Clock::now();
      approx = ij_batch(*ij, weights, cfg.threads);
      t_ij.push_back(detail::seconds_since(t0));
    }
    std::vector<BatchEntry> exact;
    if (cfg.run_exact) {
      t0 = detail::Clock::now();
      exact = warm_start_batch(model, weights, base, cfg.solver, cfg.threads);
      t_exact.push_back(detail::seconds_since(t0));
    }

    ReplicationSummary sum;
    sum.index = r;
    sum.data_seed = data.seed;
    sum.theta_base = base.theta;
    sum.base_grad_norm = base.grad_norm;
    sum.train_loss = train_loss(model, base.theta);
    if (data.test) sum.test_loss = train_loss(GlmModel(cfg.model, *data.test), base.theta);

    double cv_ij = 0.0, cv_exact = 0.0;
    std::size_t exact_ok = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      WeightRecord rec;
      rec.replication = r;
      rec.weight_id = i;
      rec.held_out_count = weights[i].zero_indices().size();
      if (cfg.run_ij) {
        rec.theta_ij = approx[i];
        rec.loss_ij = detail::fold_loss(model, approx[i], weights[i]);
        cv_ij += *rec.loss_ij;
      }
      if (cfg.run_exact) {
        const auto& e = exact[i];
        rec.exact_status = e.fit ? std::string(to_string(e.fit->status)) : "error: " + e.error;
        if (e.ok()) {
          rec.theta_exact = e.fit->theta;
          rec.loss_exact = detail::fold_loss(model, e.fit->theta, weights[i]);
          cv_exact += *rec.loss_exact;
          ++exact_ok;
          if (rec.theta_ij) rec.gap_l2 = (*rec.theta_ij - *rec.theta_exact).norm();
        } else {
          ++sum.exact_failures;
        }
      }
      rep.records.push_back(std::move(rec));
    }
    if (cfg.run_ij && !weights.empty()) sum.cv_ij = cv_ij / double(weights.size());
    if (cfg.run_exact && exact_ok > 0) sum.cv_exact = cv_exact / double(exact_ok);
    rep.replications.push_back(sum);

    if (cfg.certify && r == 0) {
      BoundsOptions bo;
      bo.min_hessian_eig = cfg.solver.min_hessian_eig;
      bo.threads = cfg.threads;
      DomainSpec dom = cfg.domain;
      dom.center = base.theta;
      rep.certificate = certify(model, base, dom, weights, bo);
    }
  }

  double max_gap = 0.0;
  bool any_gap = false;
  for (const auto& rec : rep.records)
    if (rec.gap_l2) {
      any_gap = true;
      max_gap = std::max(max_gap, *rec.gap_l2);
    }
  if (any_gap) rep.measured_max_gap = max_gap;

  Aggregate& agg = rep.aggregate;
  for (const auto& s : rep.replications) agg.train_loss += s.train_loss;
  agg.train_loss /= double(rep.replications.size());
  agg.cv_ij = detail::mean_of(rep.replications, &ReplicationSummary::cv_ij);
  agg.cv_exact = detail::mean_of(rep.replications, &ReplicationSummary::cv_exact);
  agg.test_loss = detail::mean_of(rep.replications, &ReplicationSummary::test_loss);
  if (cfg.run_ij && cfg.run_exact) {
    std::size_t closer = 0, below = 0, counted = 0;
    for (const auto& s : rep.replications) {
      if (!s.cv_ij || !s.cv_exact) continue;
      ++counted;
      if (std::abs(*s.cv_ij - *s.cv_exact) < std::abs(*s.cv_exact - s.train_loss)) ++closer;
      if (*s.cv_ij <= *s.cv_exact) ++below;
    }
    if (counted > 0) {
      agg.frac_ij_closer_than_train = double(closer) / double(counted);
      agg.frac_ij_below_exact = double(below) / double(counted);
    }
  }

  if (cfg.record_timings) {
    Timings t;
    t.repetitions = cfg.replications;
    t.base_fit = detail::median(t_base);
    t.handle_build = detail::median(t_build);
    t.ij_batch = detail::median(t_ij);
    t.exact_batch = detail::median(t_exact);
    std::vector<double> ij_tot;
    for (std::size_t i = 0; i < t_ij.size(); ++i) ij_tot.push_back(t_build[i] + t_ij[i]);
    t.ij_total = detail::median(ij_tot);
    t.exact_total = detail::median(t_exact);
    rep.timings = t;
  }
  return rep;
}

/// Times the IJ path (build handle + batch) against warm-started exact
/// refits on the same weight list, repeated cfg.timing_repetitions times on
/// one dataset. Records hold the last repetition's results.
inline ExperimentReport run_timing_experiment(const ExperimentConfig& cfg) {
  if (cfg.timing_repetitions < 1) throw InputError("timing repetitions must be at least 1");
  ExperimentReport rep;
  rep.command = "bench";
  rep.model = std::string(to_string(cfg.model));
  rep.seed = cfg.seed;
  rep.family = std::string(to_string(cfg.family.kind));
  const auto data = detail::replication_data(cfg, 0);
  const GlmModel model(cfg.model, data.train);
  rep.n_points = model.n_points();
  rep.dim = model.dim();

  std::vector<double> t_base, t_build, t_ij, t_exact, ij_tot;
  FitResult base;
  std::vector<WeightVector> weights;
  std::vector<Parameter> approx;
  std::vector<BatchEntry> exact;
  for (std::size_t k = 0; k < cfg.timing_repetitions; ++k) {
    auto t0 = detail::Clock::now();
    base = detail::base_fit(model, cfg.solver);
    t_base.push_back(detail::seconds_since(t0));

    t0 = detail::Clock::now();
    const IJHandle ij = build_handle(model, base, cfg.mode, detail::handle_options(cfg));
    t_build.push_back(detail::seconds_since(t0));

    // weight generation is shared by both paths and kept outside the spans
    if (k == 0) weights = materialize(cfg.family, model.n_points(), &ij.cache);

    t0 = detail::Clock::now();
    approx = ij_batch(ij, weights, cfg.threads);
    t_ij.push_back(detail::seconds_since(t0));
    ij_tot.push_back(t_build.back() + t_ij.back());

    t0 = detail::Clock::now();
    exact = warm_start_batch(model, weights, base, cfg.solver, cfg.threads);
    t_exact.push_back(detail::seconds_since(t0));
  }
  rep.weight_count = weights.size();

  ReplicationSummary sum;
  sum.theta_base = base.theta;
  sum.base_grad_norm = base.grad_norm;
  sum.train_loss = train_loss(model, base.theta);
  double max_gap = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    WeightRecord rec;
    rec.weight_id = i;
    rec.held_out_count = weights[i].zero_indices().size();
    rec.theta_ij = approx[i];
    rec.loss_ij = detail::fold_loss(model, approx[i], weights[i]);
    rec.exact_status = exact[i].fit ? std::string(to_string(exact[i].fit->status))
                                    : "error: " + exact[i].error;
    if (exact[i].ok()) {
      rec.theta_exact = exact[i].fit->theta;
      rec.loss_exact = detail::fold_loss(model, *rec.theta_exact, weights[i]);
      rec.gap_l2 = (approx[i] - *rec.theta_exact).norm();
      max_gap = std::max(max_gap, *rec.gap_l2);
    } else {
      ++sum.exact_failures;
    }
    rep.records.push_back(std::move(rec));
  }
  rep.measured_max_gap = max_gap;
  rep.replications.push_back(sum);
  rep.aggregate.train_loss = sum.train_loss;

  Timings t;
  t.repetitions = cfg.timing_repetitions;
  t.base_fit = detail::median(t_base);
  t.handle_build = detail::median(t_build);
  t.ij_batch = detail::median(t_ij);
  t.exact_batch = detail::median(t_exact);
  t.ij_total = detail::median(ij_tot);
  t.exact_total = detail::median(t_exact);
  rep.timings = t;
  return rep;
}

// ---------------------------------------------------------------------------
// Output

enum class ReportFormat { json, csv };

inline void write_report_json(std::ostream& os, const ExperimentReport& r) {
  os << nlohmann::json(r).dump(2) << '\n';
}

/// One row per weight record. Fixed leading columns, then theta_ij_1..D and
/// theta_exact_1..D. Missing values are empty cells.
inline void write_report_csv(std::ostream& os, const ExperimentReport& r) {
  os << "weight_id,gap_l2,loss_ij,loss_exact,replication,held_out_count,exact_status";
  for (std::size_t j = 1; j <= r.dim; ++j) os << ",theta_ij_" << j;
  for (std::size_t j = 1; j <= r.dim; ++j) os << ",theta_exact_" << j;
  os << '\n';
  auto cell = [&](const std::optional<double>& v) {
    os << ',';
    if (v) os << format_double(*v);
  };
  auto vec_cells = [&](const std::optional<Parameter>& v) {
    for (std::size_t j = 0; j < r.dim; ++j) {
      os << ',';
      if (v) os << format_double((*v)[static_cast<Eigen::Index>(j)]);
    }
  };
  for (const auto& rec : r.records) {
    os << rec.weight_id;
    cell(rec.gap_l2);
    cell(rec.loss_ij);
    cell(rec.loss_exact);
    os << ',' << rec.replication << ',' << rec.held_out_count << ',' << rec.exact_status;
    vec_cells(rec.theta_ij);
    vec_cells(rec.theta_exact);
    os << '\n';
  }
}

inline void emit_report(const ExperimentReport& r, ReportFormat format, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  if (format == ReportFormat::json)
    write_report_json(os, r);
  else
    write_report_csv(os, r);
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline ExperimentReport read_report_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  return nlohmann::json::parse(is).get<ExperimentReport>();
}

}  // namespace ijkit
