#include "rrfb/quadrature.hpp"

#include <cmath>
#include <stdexcept>

namespace rrfb {

namespace {
double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}
}  // namespace

QuadratureRule gauss_jacobi(int n, double alpha, double beta) {
  if (n < 1) throw std::invalid_argument("gauss_jacobi: n must be >= 1");
  if (alpha <= -1.0 || beta <= -1.0)
    throw std::invalid_argument("gauss_jacobi: exponents must be > -1");

  const double s = alpha + beta;
  Eigen::VectorXd diag(n), sub(std::max(n - 1, 0));
  diag[0] = (beta - alpha) / (s + 2.0);
  for (int k = 1; k < n; ++k) {
    double t = 2.0 * k + s;
    diag[k] = (beta * beta - alpha * alpha) / (t * (t + 2.0));
  }
  if (n > 1) {
    sub[0] = std::sqrt(4.0 * (1.0 + alpha) * (1.0 + beta) /
                       ((s + 2.0) * (s + 2.0) * (s + 3.0)));
    for (int k = 2; k < n; ++k) {
      double t = 2.0 * k + s;
      sub[k - 1] = std::sqrt(4.0 * k * (k + alpha) * (k + beta) * (k + s) /
                             (t * t * (t + 1.0) * (t - 1.0)));
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("gauss_jacobi: eigen decomposition failed");

  const double mu0 =
      std::exp((s + 1.0) * std::log(2.0) + log_beta(alpha + 1.0, beta + 1.0));
  QuadratureRule rule;
  rule.nodes = solver.eigenvalues();
  rule.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    double v = solver.eigenvectors()(0, k);
    rule.weights[k] = mu0 * v * v;
  }
  return rule;
}

}  // namespace rrfb
