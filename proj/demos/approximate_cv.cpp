// Leave-one-out CV for logistic regression: IJ approximation vs exact refits.
//
//   approximate_cv_demo [n] [p] [seed]

#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "ijkit/ijkit.hpp"

using namespace ijkit;

int main(int argc, char** argv) {
  const std::size_t n = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 500;
  const std::size_t p = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 10;
  const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 1;

  const Dataset data = generate_synthetic(desk_preset(ModelKind::logistic, n, p, seed));
  const auto model = make_model(ModelKind::logistic, data);
  const FitResult base = solve(*model, WeightVector::ones(n), Parameter::Zero(model->dim()));
  if (!base.converged) {
    std::fprintf(stderr, "base fit failed: %s\n", base.message.c_str());
    return 1;
  }
  const auto folds = leave_k_out(n, 1);

  using Clock = std::chrono::steady_clock;
  auto t0 = Clock::now();
  const IJHandle ij = build_handle(*model, base);
  const auto approx = ij_batch(ij, folds);
  const double t_ij = std::chrono::duration<double>(Clock::now() - t0).count();

  t0 = Clock::now();
  const auto exact = warm_start_batch(*model, folds, base);
  const double t_exact = std::chrono::duration<double>(Clock::now() - t0).count();

  double cv_ij = 0, cv_exact = 0, worst = 0;
  for (std::size_t m = 0; m < n; ++m) {
    if (!exact[m].ok()) {
      std::fprintf(stderr, "refit %zu failed\n", m);
      return 1;
    }
    cv_ij += model->loss(m, approx[m]);
    cv_exact += model->loss(m, exact[m].fit->theta);
    worst = std::max(worst, (approx[m] - exact[m].fit->theta).norm());
  }
  cv_ij /= double(n);
  cv_exact /= double(n);

  std::printf("N = %zu, D = %zu\n", n, model->dim());
  std::printf("train loss      %.6f\n", train_loss(*model, base.theta));
  std::printf("CV (IJ)         %.6f   %.4f s\n", cv_ij, t_ij);
  std::printf("CV (exact)      %.6f   %.4f s\n", cv_exact, t_exact);
  std::printf("max ||theta_IJ - theta_exact|| = %.3e\n", worst);
  return 0;
}
