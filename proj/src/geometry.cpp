#include "rrfb/geometry.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rrfb {

MatrixXd build_givens_Q(const std::vector<std::pair<int, int>>& pairs,
                        double theta, int p) {
  if (p < 1) throw std::invalid_argument("build_givens_Q: p must be >= 1");
  MatrixXd Q = MatrixXd::Identity(p, p);
  const double c = std::cos(theta), s = std::sin(theta);
  for (const auto& [i, j] : pairs) {
    if (i < 1 || i > p || j < 1 || j > p || i == j)
      throw std::invalid_argument("build_givens_Q: pair (" + std::to_string(i) +
                                  "," + std::to_string(j) + ") out of range");
    MatrixXd R = MatrixXd::Identity(p, p);
    R(i - 1, i - 1) = c;
    R(j - 1, j - 1) = c;
    R(i - 1, j - 1) = -s;
    R(j - 1, i - 1) = s;
    Q = R * Q;
  }
  return Q;
}

MatrixXd skew_from_coords(const VectorXd& alpha, int p) {
  if (alpha.size() != static_cast<long>(p) * (p - 1) / 2)
    throw std::invalid_argument("skew_from_coords: alpha has wrong length");
  MatrixXd S = MatrixXd::Zero(p, p);
  int k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j, ++k) {
      S(i, j) = alpha[k];
      S(j, i) = -alpha[k];
    }
  return S;
}

VectorXd coords_from_skew(const MatrixXd& S) {
  const int p = static_cast<int>(S.rows());
  VectorXd alpha(static_cast<long>(p) * (p - 1) / 2);
  int k = 0;
  for (int i = 0; i < p; ++i)
    for (int j = i + 1; j < p; ++j, ++k) alpha[k] = S(i, j);
  return alpha;
}

MatrixXd exp_matrix(const MatrixXd& S) {
  const int p = static_cast<int>(S.rows());
  double norm = S.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  while (norm > 0.5) {
    norm *= 0.5;
    ++squarings;
  }
  MatrixXd X = S / std::ldexp(1.0, squarings);
  MatrixXd result = MatrixXd::Identity(p, p);
  MatrixXd term = MatrixXd::Identity(p, p);
  for (int k = 1; k <= 24; ++k) {
    term = (term * X) / double(k);
    result += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

MatrixXd exp_skew(const MatrixXd& base, const VectorXd& alpha) {
  const int p = static_cast<int>(base.rows());
  if (alpha.isZero(0.0)) return base;
  return base * exp_matrix(skew_from_coords(alpha, p));
}

double sphere_area(int p) {
  if (p < 1) throw std::invalid_argument("sphere_area: p must be >= 1");
  return 2.0 * std::pow(3.14159265358979323846, 0.5 * p) /
         std::tgamma(0.5 * p);
}

VectorXd sample_uniform_sphere(int p, Rng& rng) {
  if (p < 1) throw std::invalid_argument("sample_uniform_sphere: p >= 1");
  VectorXd x(p);
  for (;;) {
    for (int i = 0; i < p; ++i) x[i] = rng.normal();
    double n = x.norm();
    if (n > 1e-12) return x / n;
  }
}

VectorXd sample_uniform_negative_orthant(int m, Rng& rng) {
  VectorXd u = sample_uniform_sphere(m, rng);
  return -u.cwiseAbs();
}

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double softplus_inv(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

VectorXd lambda_from_u(const VectorXd& u) {
  const int p = static_cast<int>(u.size());
  VectorXd lambda(p);
  lambda[0] = 0.0;
  for (int i = 1; i < p; ++i) lambda[i] = lambda[i - 1] + softplus(u[i]);
  return lambda;
}

VectorXd u_from_lambda(const VectorXd& lambda, double min_gap) {
  const int p = static_cast<int>(lambda.size());
  VectorXd u = VectorXd::Zero(p);
  for (int i = 1; i < p; ++i) {
    double gap = lambda[i] - lambda[i - 1];
    if (gap < -1e-12)
      throw std::invalid_argument("u_from_lambda: lambda not nondecreasing");
    u[i] = softplus_inv(std::max(gap, min_gap));
  }
  return u;
}

void check_orthogonal(const MatrixXd& Q, double tol) {
  const int p = static_cast<int>(Q.rows());
  double dev = (Q.transpose() * Q - MatrixXd::Identity(p, p))
                   .cwiseAbs()
                   .maxCoeff();
  if (!(dev <= tol))
    throw std::runtime_error("orthogonality violated: deviation " +
                             std::to_string(dev));
}

}  // namespace rrfb
