// Gauss-Jacobi quadrature on (-1, 1) with weight (1-x)^alpha (1+x)^beta,
// computed by the Golub-Welsch eigenvalue method on the symmetrized Jacobi
// recurrence. Needed for posterior integrals whose integrands carry
// algebraic endpoint singularities.
#pragma once

#include <Eigen/Dense>

namespace rrfb {

struct QuadratureRule {
  Eigen::VectorXd nodes;    // ascending, inside (-1, 1)
  Eigen::VectorXd weights;  // positive, sum = first weight-function moment
};

// alpha, beta > -1; n >= 1 nodes.
QuadratureRule gauss_jacobi(int n, double alpha, double beta);

}  // namespace rrfb
