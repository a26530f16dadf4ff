// Deterministic geometric primitives shared by the rest of the library:
// orthogonal-matrix construction and parameterization, sphere sampling,
// and the monotone eigenvalue reparameterization.
#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "rrfb/rng.hpp"

namespace rrfb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Product of plane rotations applied sequentially in the listed order: each
// pair (i, j) (1-based) contributes a counterclockwise rotation R with
// R[i,i]=R[j,j]=cos(theta), R[i,j]=-sin(theta), R[j,i]=sin(theta), acting on
// the result of the previous rotations (Q = R_k * ... * R_1).
MatrixXd build_givens_Q(const std::vector<std::pair<int, int>>& pairs,
                        double theta, int p);

// Skew-symmetric matrix from its strict upper triangle (row-major order):
// S[i,j] = alpha_k, S[j,i] = -alpha_k for i < j.
MatrixXd skew_from_coords(const VectorXd& alpha, int p);
VectorXd coords_from_skew(const MatrixXd& S);

// Matrix exponential by scaling-and-squaring of the Taylor series; intended
// for small dense matrices (p <= 16).
MatrixXd exp_matrix(const MatrixXd& S);

// base * exp(S(alpha)); the retraction used for orthogonal-factor updates.
MatrixXd exp_skew(const MatrixXd& base, const VectorXd& alpha);

// Surface area of the unit sphere S^{p-1} embedded in R^p.
double sphere_area(int p);

VectorXd sample_uniform_sphere(int p, Rng& rng);

// Uniform on the all-negative orthant of S^{m-1}: negated absolute values of
// a uniform sphere draw.
VectorXd sample_uniform_negative_orthant(int m, Rng& rng);

// Monotone eigenvalue reparameterization: u (with u[0] ignored and treated
// as 0) maps to lambda[0] = 0, lambda[i] = lambda[i-1] + softplus(u[i]).
double softplus(double x);
double softplus_inv(double y);
double sigmoid(double x);
VectorXd lambda_from_u(const VectorXd& u);
// Inverse map; gaps below min_gap are lifted to min_gap so the result stays
// finite at ties. Round-trips exactly (to 1e-10) whenever gaps >= min_gap.
VectorXd u_from_lambda(const VectorXd& lambda, double min_gap = 1e-8);

// Throws std::runtime_error if max|Q'Q - I| exceeds tol.
void check_orthogonal(const MatrixXd& Q, double tol = 1e-10);

}  // namespace rrfb
