#pragma once

#include <cstdint>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "ijkit/bounds.hpp"
#include "ijkit/harness.hpp"
#include "ijkit/models.hpp"
#include "ijkit/solver.hpp"
#include "ijkit/weights.hpp"

namespace ijkit {

namespace cli {

struct CommonArgs {
  std::string model = "logistic";
  std::string data;
  bool no_bias = false;
  std::size_t n = 500;
  std::size_t p = 5;
  double signal = -1.0;  // per-coefficient value; < 0 means 1/sqrt(p)
  double bias = 0.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  double grad_tol = 1e-10;
  std::size_t max_iter = 100;
  std::string out;
  std::string format = "json";
  bool deterministic = false;
  std::string mode = "dense";
};

inline void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--model", a.model, "mean | linear | logistic | poisson")
      ->check(CLI::IsMember({"mean", "linear", "logistic", "poisson"}));
  sub->add_option("--data", a.data, "input CSV (header x1..xP,y); synthetic data if omitted");
  sub->add_flag("--no-bias", a.no_bias, "do not append a constant feature");
  sub->add_option("--n", a.n, "synthetic sample size")->check(CLI::PositiveNumber);
  sub->add_option("--p", a.p, "synthetic feature count")->check(CLI::PositiveNumber);
  sub->add_option("--signal", a.signal, "true coefficient value (default 1/sqrt(p))");
  sub->add_option("--bias", a.bias, "true intercept");
  sub->add_option("--noise", a.noise, "noise sd for mean/linear responses");
  sub->add_option("--seed", a.seed, "master seed");
  sub->add_option("--threads", a.threads, "worker threads (0: IJKIT_THREADS or hardware)");
  sub->add_option("--grad-tol", a.grad_tol, "solver tolerance on ||G||_2")->check(CLI::PositiveNumber);
  sub->add_option("--max-iter", a.max_iter, "solver iteration limit")->check(CLI::PositiveNumber);
  sub->add_option("--out", a.out, "output path (stdout if omitted)");
  sub->add_option("--format", a.format, "json | csv")->check(CLI::IsMember({"json", "csv"}));
  sub->add_flag("--deterministic", a.deterministic,
                "single thread and no timings, for byte-identical output");
  sub->add_option("--mode", a.mode, "H1 solve: dense | matrix_free")
      ->check(CLI::IsMember({"dense", "matrix_free"}));
}

inline ExperimentConfig base_config(const CommonArgs& a) {
  ExperimentConfig cfg;
  cfg.model = parse_model_kind(a.model);
  if (!a.data.empty()) cfg.data_path = a.data;
  cfg.has_bias = !a.no_bias;
  cfg.synthetic = desk_preset(cfg.model, a.n, a.p, a.seed);
  if (a.signal >= 0.0) cfg.synthetic.true_theta.setConstant(a.signal);
  cfg.synthetic.true_bias = a.bias;
  cfg.synthetic.noise_sd = a.noise;
  cfg.seed = a.seed;
  cfg.threads = a.deterministic ? 1 : resolve_threads(a.threads);
  cfg.record_timings = !a.deterministic;
  cfg.solver.grad_tol = a.grad_tol;
  cfg.solver.max_iter = a.max_iter;
  cfg.mode = a.mode == "dense" ? HessianMode::dense : HessianMode::matrix_free;
  cfg.test_n = 0;
  return cfg;
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("write to '" + path + "' failed");
}

inline void write_report(const ExperimentReport& r, const CommonArgs& a, std::ostream& out) {
  std::ostringstream ss;
  if (a.format == "csv")
    write_report_csv(ss, r);
  else
    write_report_json(ss, r);
  write_output(a.out, ss.str(), out);
}

inline Dataset load_data(const ExperimentConfig& cfg) {
  return detail::replication_data(cfg, 0).train;
}

}  // namespace cli

/// Entry point of the ijkit tool. Returns 0 on success, 1 on numeric or I/O
/// failure, 2 on a usage error.
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Infinitesimal-jackknife approximate cross-validation and bootstrap"};
  app.require_subcommand(1);
  app.set_config("--config", "", "INI/TOML file; [subcommand] sections hold option defaults");

  cli::CommonArgs common;

  // fit
  auto* fit = app.add_subcommand("fit", "fit the model on all data");
  cli::add_common(fit, common);

  // ij-cv / exact-cv
  std::size_t k = 1, replications = 1, test_n = 0;
  std::optional<std::size_t> limit;
  bool compare_exact = false;
  auto* ijcv = app.add_subcommand("ij-cv", "leave-k-out CV through the IJ approximation");
  cli::add_common(ijcv, common);
  ijcv->add_option("--k", k, "points left out per fold")->check(CLI::PositiveNumber);
  ijcv->add_option("--limit", limit, "sample this many folds instead of enumerating");
  ijcv->add_flag("--compare-exact", compare_exact, "also refit every fold exactly");
  ijcv->add_option("--replications", replications, "synthetic replications")->check(CLI::PositiveNumber);
  ijcv->add_option("--test-n", test_n, "size of a fresh synthetic test set (0: none)");

  auto* excv = app.add_subcommand("exact-cv", "leave-k-out CV by exact warm-started refits");
  cli::add_common(excv, common);
  excv->add_option("--k", k, "points left out per fold")->check(CLI::PositiveNumber);
  excv->add_option("--limit", limit, "sample this many folds instead of enumerating");
  excv->add_option("--replications", replications, "synthetic replications")->check(CLI::PositiveNumber);
  excv->add_option("--test-n", test_n, "size of a fresh synthetic test set (0: none)");

  // bootstrap
  std::size_t b = 100;
  std::uint64_t weight_seed = 1;
  auto* boot = app.add_subcommand("bootstrap", "IJ bootstrap replicates");
  cli::add_common(boot, common);
  boot->add_option("--b", b, "number of bootstrap draws")->check(CLI::PositiveNumber);
  boot->add_option("--weight-seed", weight_seed, "seed for the multinomial draws");
  boot->add_flag("--compare-exact", compare_exact, "also refit every draw exactly");

  // certify
  std::string family = "loo";
  double radius = 0.0;
  std::size_t samples = 64;
  bool measure = false;
  auto* cert = app.add_subcommand("certify", "estimate the error-bound constants for a weight family");
  cli::add_common(cert, common);
  cert->add_option("--family", family, "loo | lko | bootstrap | adversarial")
      ->check(CLI::IsMember({"loo", "lko", "leave_k_out", "bootstrap", "adversarial"}));
  cert->add_option("--k", k, "points left out (lko)")->check(CLI::PositiveNumber);
  cert->add_option("--b", b, "bootstrap draws")->check(CLI::PositiveNumber);
  cert->add_option("--limit", limit, "sample this many leave-k-out vectors");
  cert->add_option("--weight-seed", weight_seed, "seed for sampled weights");
  cert->add_option("--radius", radius, "domain radius (0: automatic)");
  cert->add_option("--samples", samples, "sampled parameters in the domain")->check(CLI::Range(2, 1 << 20));
  cert->add_flag("--measure", measure, "also refit exactly and report the measured max error");

  // rate-check
  std::vector<std::size_t> sizes{128, 256, 512, 1024};
  std::size_t seeds = 1;
  auto* rate = app.add_subcommand("rate-check", "log-log slope of the leave-k-out IJ error in N");
  cli::add_common(rate, common);
  rate->add_option("--sizes", sizes, "strictly increasing sample sizes")->delimiter(',');
  rate->add_option("--k", k, "points left out")->check(CLI::NonNegativeNumber);
  rate->add_option("--limit", limit, "cap on leave-k-out vectors per size");
  rate->add_option("--seeds", seeds, "independent datasets per size")->check(CLI::PositiveNumber);

  // bench
  std::size_t bench_b = 100, reps = 5;
  auto* bench = app.add_subcommand("bench", "time the IJ path against exact refits");
  cli::add_common(bench, common);
  bench->add_option("--bootstrap", bench_b, "bootstrap weight vectors")->check(CLI::PositiveNumber);
  bench->add_option("--reps", reps, "timing repetitions (median reported)")->check(CLI::PositiveNumber);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset as CSV");
  cli::add_common(gen, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = cli::base_config(common);

    if (fit->parsed()) {
      const GlmModel model(cfg.model, cli::load_data(cfg));
      const FitResult r =
          solve(model, WeightVector::ones(model.n_points()), Parameter::Zero(model.dim()), cfg.solver);
      nlohmann::json j{{"model", common.model},
                       {"n_points", model.n_points()},
                       {"dim", model.dim()},
                       {"theta", detail::vec_json(r.theta)},
                       {"grad_norm", r.grad_norm},
                       {"iterations", r.iterations},
                       {"converged", r.converged},
                       {"status", to_string(r.status)},
                       {"train_loss", train_loss(model, r.theta)}};
      cli::write_output(common.out, j.dump(2) + "\n", out);
      return r.converged ? 0 : 1;
    }

    if (ijcv->parsed() || excv->parsed()) {
      cfg.family.kind = FamilyKind::leave_k_out;
      cfg.family.k = k;
      cfg.family.limit = limit;
      cfg.family.seed = common.seed;
      cfg.run_ij = ijcv->parsed();
      cfg.run_exact = excv->parsed() || compare_exact;
      cfg.replications = replications;
      cfg.test_n = test_n;
      const auto rep = run_accuracy_experiment(cfg, ijcv->parsed() ? "ij-cv" : "exact-cv");
      cli::write_report(rep, common, out);
      return 0;
    }

    if (boot->parsed()) {
      cfg.family.kind = FamilyKind::bootstrap;
      cfg.family.b = b;
      cfg.family.seed = weight_seed;
      cfg.run_exact = compare_exact;
      const auto rep = run_accuracy_experiment(cfg, "bootstrap");
      cli::write_report(rep, common, out);
      return 0;
    }

    if (cert->parsed()) {
      const GlmModel model(cfg.model, cli::load_data(cfg));
      const FitResult base = detail::base_fit(model, cfg.solver);
      WeightFamily fam;
      fam.kind = parse_family_kind(family);
      fam.k = family == "loo" ? 1 : k;
      fam.b = b;
      fam.limit = limit;
      fam.seed = weight_seed;
      std::optional<IJHandle> ij;
      if (fam.kind == FamilyKind::adversarial) ij = build_handle(model, base);
      const auto weights = materialize(fam, model.n_points(), ij ? &ij->cache : nullptr);
      DomainSpec dom;
      dom.center = base.theta;
      dom.radius = radius;
      dom.n_samples = samples;
      dom.seed = common.seed;
      BoundsOptions bo;
      bo.min_hessian_eig = cfg.solver.min_hessian_eig;
      bo.threads = cfg.threads;
      const IJCertificate c = certify(model, base, dom, weights, bo);
      nlohmann::json j{{"model", common.model}, {"family", to_string(fam.kind)},
                       {"certificate", c}};
      if (measure) {
        const auto m = measure_ij_error(model, base, weights, cfg.solver, cfg.threads);
        j["measured_max_gap"] = m.max_gap;
        j["refit_failures"] = m.failures;
        j["within_bound"] = m.max_gap <= c.bound;
      }
      cli::write_output(common.out, j.dump(2) + "\n", out);
      return 0;
    }

    if (rate->parsed()) {
      const ModelKind kind = cfg.model;
      const SyntheticSpec proto = cfg.synthetic;
      const bool has_bias = cfg.has_bias;
      ModelFactory factory = [=](std::size_t n, std::uint64_t s) {
        SyntheticSpec spec = proto;
        spec.n = n;
        spec.seed = s;
        spec.has_bias = has_bias;
        return std::shared_ptr<const EstimatingEquation>(make_model(kind, generate_synthetic(spec)));
      };
      RateCheckOptions ro;
      ro.limit = limit;
      ro.solver = cfg.solver;
      ro.threads = cfg.threads;
      nlohmann::json runs = nlohmann::json::array();
      double mean_slope = 0.0;
      for (std::size_t s = 0; s < seeds; ++s) {
        const auto r = corollary_rate_check(factory, sizes, k, mix_seed(common.seed, s), ro);
        mean_slope += r.slope;
        runs.push_back({{"seed_index", s}, {"slope", r.slope}, {"sizes", r.sizes},
                        {"max_errors", r.max_errors}});
      }
      mean_slope /= double(seeds);
      nlohmann::json j{{"model", common.model}, {"k", k}, {"mean_slope", mean_slope}, {"runs", runs}};
      cli::write_output(common.out, j.dump(2) + "\n", out);
      return 0;
    }

    if (bench->parsed()) {
      cfg.family.kind = FamilyKind::bootstrap;
      cfg.family.b = bench_b;
      cfg.family.seed = mix_seed(common.seed, 99);
      cfg.timing_repetitions = reps;
      const auto rep = run_timing_experiment(cfg);
      const Timings& t = *rep.timings;
      std::ostringstream table;
      table << std::fixed << std::setprecision(6);
      table << "phase            seconds\n"
            << "base_fit         " << t.base_fit << '\n'
            << "handle_build     " << t.handle_build << '\n'
            << "ij_batch         " << t.ij_batch << '\n'
            << "exact_batch      " << t.exact_batch << '\n'
            << "ij_total         " << t.ij_total << '\n'
            << "exact_total      " << t.exact_total << '\n'
            << "ratio            " << (t.exact_total > 0 ? t.ij_total / t.exact_total : 0.0) << '\n';
      err << table.str();
      cli::write_report(rep, common, out);
      return 0;
    }

    if (gen->parsed()) {
      const Dataset d = cli::load_data(cfg);
      std::ostringstream ss;
      write_csv(ss, d);
      cli::write_output(common.out, ss.str(), out);
      return 0;
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace ijkit
