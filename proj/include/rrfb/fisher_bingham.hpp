// Fisher-Bingham distribution on the unit sphere: density ~ exp(-x'Ax + g'x),
// its normalizing constant (deterministic characteristic-function inversion,
// validated against a Monte Carlo oracle), the constant's gradient, and exact
// rejection sampling through an angular-central-Gaussian envelope.
#pragma once

#include <Eigen/Dense>
#include <string>

#include "rrfb/geometry.hpp"
#include "rrfb/rng.hpp"

namespace rrfb {

// Canonical parameterization: A = Q diag(lambda) Q', gamma = Q gamma_tilde,
// with lambda nondecreasing and lambda[0] = 0.
struct FBParams {
  VectorXd lambda;
  MatrixXd Q;
  VectorXd gamma_tilde;

  int dim() const { return static_cast<int>(lambda.size()); }
  MatrixXd A() const { return Q * lambda.asDiagonal() * Q.transpose(); }
  VectorXd gamma() const { return Q * gamma_tilde; }
  void validate() const;  // throws on invariant violation
};

// Restore the canonical form in place: jointly sort (lambda, Q columns,
// gamma_tilde), re-anchor lambda[0] = 0, and fix each column's sign so its
// first non-negligible entry is positive (flipping gamma_tilde to match).
void canonicalize(FBParams& params);

// log of exp(-z'Az + gamma'z); requires ||z|| = 1 within 1e-8.
double fb_log_density_unnorm(const VectorXd& z, const FBParams& params);

struct LogNormConst {
  double log_value = 0.0;
  double rel_error_estimate = 0.0;
  std::string method;  // "cf-inversion" or "mc-oracle"
};

// log C(lambda, gamma_tilde) for the density above. Accepts any real lambda
// (shift-invariance is applied internally); gradients, when requested, are
// the exact derivatives of the evaluated formula: d_lambda[i] = -E[x_i^2],
// d_gamma[i] = E[x_i] in the eigenbasis. Throws std::runtime_error if the
// inversion fails to converge or produces a nonpositive density.
LogNormConst log_norm_const(const VectorXd& lambda, const VectorXd& gamma_tilde,
                            VectorXd* d_lambda = nullptr,
                            VectorXd* d_gamma = nullptr);

void grad_log_norm_const(const VectorXd& lambda, const VectorXd& gamma_tilde,
                         VectorXd& d_lambda, VectorXd& d_gamma);

// Central-difference oracle for tests.
void grad_log_norm_const_fd(const VectorXd& lambda,
                            const VectorXd& gamma_tilde, VectorXd& d_lambda,
                            VectorXd& d_gamma, double step = 1e-5);

struct McNormConst {
  double estimate = 0.0;        // linear scale
  double standard_error = 0.0;  // linear scale
};

// Ground-truth oracle: sphere_area(p) x sample mean of the unnormalized
// density over uniform sphere draws.
McNormConst mc_norm_const_oracle(const VectorXd& lambda,
                                 const VectorXd& gamma_tilde, long n_samples,
                                 Rng& rng);

// Root of sum_i 1/(b0 + 2 nu_i) = 1 for nonnegative nu (ascending or not);
// bisection on the analytic bracket, absolute tolerance tol.
double solve_b0(const VectorXd& nu, double tol = 1e-10);

// Rejection sampler with the envelope precomputed once per parameter value.
class FBSampler {
 public:
  explicit FBSampler(const FBParams& params);

  // One exact draw; increments the attempt/acceptance counters.
  VectorXd sample(Rng& rng);

  long long attempts() const { return attempts_; }
  long long accepts() const { return accepts_; }
  double max_ratio() const { return max_ratio_; }  // sup of observed ratios
  double acceptance_rate() const {
    return attempts_ ? static_cast<double>(accepts_) / attempts_ : 0.0;
  }

 private:
  int p_;
  double kappa_;
  double b0_;
  double log_M_;
  VectorXd nu_;         // eigenvalues of the shifted quadratic envelope
  VectorXd omega_;      // 1 + 2 nu / b0
  VectorXd inv_sqrt_omega_;
  MatrixXd V_;          // eigenvectors
  VectorXd gamma_v_;    // V' gamma
  long long attempts_ = 0;
  long long accepts_ = 0;
  double max_ratio_ = 0.0;
};

struct FBSample {
  VectorXd z;
  long long attempts;
};

FBSample fb_sample(const FBParams& params, Rng& rng);

}  // namespace rrfb
