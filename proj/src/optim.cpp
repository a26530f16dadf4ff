#include "rrfb/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace rrfb {

BfgsResult minimize_bfgs(
    const std::function<double(const VectorXd&, VectorXd&)>& fg, VectorXd x0,
    const BfgsOptions& opts) {
  const int n = static_cast<int>(x0.size());
  BfgsResult best;
  VectorXd g(n), g_new(n);
  double f = fg(x0, g);
  if (!std::isfinite(f))
    throw std::invalid_argument("minimize_bfgs: objective not finite at x0");
  best.x = x0;
  best.f = f;

  MatrixXd H = MatrixXd::Identity(n, n);
  VectorXd x = x0;
  bool first_update = true;

  for (int it = 0; it < opts.max_iter; ++it) {
    best.iterations = it;
    if (g.cwiseAbs().maxCoeff() < opts.grad_tol) {
      best.converged = true;
      return best;
    }
    VectorXd d = -(H * g);
    double slope = g.dot(d);
    if (!(slope < 0.0)) {  // H lost positive definiteness; reset
      H.setIdentity();
      d = -g;
      slope = g.dot(d);
      if (!(slope < 0.0)) {
        best.converged = true;  // zero gradient
        return best;
      }
    }
    double t = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    VectorXd x_new;
    bool accepted = false;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      x_new = x + t * d;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      best.line_search_failed = true;
      return best;
    }
    VectorXd s = x_new - x;
    VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (first_update) {
        H *= sy / y.squaredNorm();
        first_update = false;
      }
      VectorXd Hy = H * y;
      const double yHy = y.dot(Hy);
      H += ((sy + yHy) / (sy * sy)) * (s * s.transpose());
      H -= (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
    const double drop = f - f_new;
    x = std::move(x_new);
    g = g_new;
    f = f_new;
    if (f < best.f) {
      best.f = f;
      best.x = x;
    }
    if (drop >= 0.0 && drop < opts.f_rel_tol * (std::abs(f) + 1.0)) {
      best.converged = true;
      return best;
    }
  }
  best.iterations = opts.max_iter;
  return best;
}

}  // namespace rrfb
