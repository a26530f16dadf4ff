// Dense quasi-Newton minimizer (BFGS with Armijo backtracking) for the small
// smooth subproblems of the block M-step. Returns the best visited point, so
// block updates can never worsen their objective.
#pragma once

#include <Eigen/Dense>
#include <functional>

namespace rrfb {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct BfgsOptions {
  int max_iter = 50;
  double grad_tol = 1e-7;    // stop when max|grad| drops below
  double f_rel_tol = 1e-11;  // stop on small relative decrease
  int max_backtracks = 40;
};

struct BfgsResult {
  VectorXd x;
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

// Minimizes fg: given x, fill grad and return f(x). f must be finite at x0.
BfgsResult minimize_bfgs(
    const std::function<double(const VectorXd&, VectorXd&)>& fg, VectorXd x0,
    const BfgsOptions& opts = {});

}  // namespace rrfb
