// Two-stage estimator through the stacked estimating equation: stage one is
// least squares, stage two the mean squared residual. The IJ approximation
// of every leave-one-out fit of the pair is compared with exact refits.

#include <cstdio>

#include "ijkit/ijkit.hpp"

using namespace ijkit;

int main() {
  const std::size_t n = 300;
  const Dataset data = generate_synthetic(desk_preset(ModelKind::linear, n, 3, 7));
  const auto first = make_model(ModelKind::linear, data);
  const Matrix design = first->design();
  const Vector y = data.response;

  // c_n(theta1) = y_n - x_n' theta1
  auto coupling = std::make_shared<FunctionCoupling>(
      1,
      [design, y](std::size_t i, const Vector& t1) {
        return Vector::Constant(1, y[Eigen::Index(i)] - design.col(Eigen::Index(i)).dot(t1));
      },
      [design](std::size_t i, const Vector&) { return Matrix(-design.col(Eigen::Index(i)).transpose()); });
  // g2 = theta2 - c^2
  auto second = std::make_shared<FunctionStage>(
      n, 1, 1, [](std::size_t, const Vector& c, const Vector& t2) { return Vector::Constant(1, t2[0] - c[0] * c[0]); },
      [](std::size_t, const Vector&, const Vector&) { return Matrix::Identity(1, 1); },
      [](std::size_t, const Vector& c, const Vector&) { return Matrix::Constant(1, 1, -2.0 * c[0]); });
  const auto stacked = stack_equations(first, second, coupling);

  const FitResult base = solve(*stacked, WeightVector::ones(n), Parameter::Zero(stacked->dim()));
  if (!base.converged) {
    std::fprintf(stderr, "fit failed: %s\n", base.message.c_str());
    return 1;
  }
  const IJHandle ij = build_handle(*stacked, base);
  const auto folds = leave_k_out(n, 1);
  const auto approx = ij_batch(ij, folds);
  const auto exact = warm_start_batch(*stacked, folds, base);

  double worst_var = 0, worst_all = 0;
  const auto last = Eigen::Index(stacked->dim() - 1);
  for (std::size_t m = 0; m < n; ++m) {
    if (!exact[m].ok()) return 1;
    worst_var = std::max(worst_var, std::abs(approx[m][last] - exact[m].fit->theta[last]));
    worst_all = std::max(worst_all, (approx[m] - exact[m].fit->theta).norm());
  }
  std::printf("residual variance %.6f (true noise variance 1)\n", base.theta[last]);
  // the off-diagonal block is (2/N) sum c_n x_n, zero at the least-squares fit
  std::printf("factorization: %s\n",
              ij.handle.factorization_kind() == DenseFactorization::Kind::lu ? "LU" : "Cholesky");
  std::printf("leave-one-out, max |IJ - exact| on the variance: %.3e, on the full parameter: %.3e\n", worst_var,
              worst_all);
  return 0;
}
