// Block-coordinate Monte Carlo EM for the rectified-renormalized model:
// moment-based initialization, an E-step averaging posterior moments into
// sufficient statistics, an M-step maximizing the complete-data surrogate
// one block at a time (linear coefficients, eigenvalue gaps, orthogonal
// factor), and a driver with a frozen-seed likelihood stopping rule.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rrfb/model.hpp"
#include "rrfb/optim.hpp"

namespace rrfb {

struct SufficientStats {
  MatrixXd S1_bar;  // (1/n) sum of posterior E[zz']
  VectorXd S2_bar;  // (1/n) sum of posterior E[z]
  double min_ess = std::numeric_limits<double>::infinity();
  long ess_warnings = 0;  // observations whose ESS stayed below floor
};

struct FitConfig {
  int max_iter = 200;
  double rel_tol_loglik = 1e-4;
  double rel_tol_params = 1e-4;
  // E-step scheme sizes
  int estep_nodes = 50;
  long estep_K = 5000;
  long ess_floor = 50;
  // Frozen-seed likelihood used for convergence monitoring and inference
  int loglik_nodes = 100;
  long loglik_K = 20000;
  // M-step inner caps
  int gamma_max_iter = 50;
  int lambda_max_iter = 50;
  int q_max_steps = 25;
  // Initialization damping
  double c_gamma = 0.5;
  double c_lambda = 10.0;
  std::uint64_t seed = 0;
  int threads = 1;
  // Above this many cached doubles, frozen proposal draws are regenerated
  // from their keyed streams on every evaluation instead of being stored.
  long cache_budget_doubles = 15000000;
};

struct IterationRecord {
  int iter = 0;
  double loglik = 0.0;       // frozen-seed mean observed log-likelihood
  double q_value = 0.0;      // surrogate value after the M-step
  double param_delta = 0.0;  // relative parameter change
  double min_ess = 0.0;
  long ess_warnings = 0;
  double seconds = 0.0;
  bool q_decreased = false;  // any block lost surrogate value (> 1e-10)
  bool line_search_failed = false;
};

struct FitTrace {
  std::vector<IterationRecord> iterations;
  bool converged = false;
  double final_loglik = 0.0;
  std::string stop_reason;
};

struct FitResult {
  FBParams params;
  FitTrace trace;
};

// Moment-based starting point (mean direction, tangent covariance).
FBParams initialize(const std::vector<RRFBObservation>& data,
                    const FitConfig& config);

// Average posterior moments under the m-dispatched schemes; deterministic
// for a fixed rng state regardless of thread count.
SufficientStats e_step(const std::vector<RRFBObservation>& data,
                       const FBParams& params, const FitConfig& config,
                       Rng& rng);

struct MStepInfo {
  double q_before = 0.0;
  double q_after = 0.0;
  bool q_decreased = false;
  bool line_search_failed = false;
};

// One pass of block maximization of the surrogate
//   q(params) = -(log C + tr(A S1_bar) - gamma' S2_bar),
// blocks in the order: linear coefficients, eigenvalue gaps, orthogonal
// factor; result is canonicalized (sorted eigenvalues, sign-fixed columns).
FBParams m_step(const SufficientStats& stats, const FBParams& params,
                const FitConfig& config, MStepInfo* info = nullptr);

// The per-datum surrogate value q(params) above.
double surrogate_value(const SufficientStats& stats, const FBParams& params);

// Frozen-seed observed-data log-likelihood over a dataset: per-observation
// proposal draws are a fixed function of (seed, observation index), cached
// when they fit the budget and regenerated otherwise. Evaluations are exact
// functions of params — identical inputs give identical outputs.
class LoglikContext {
 public:
  LoglikContext(std::vector<RRFBObservation> data, const LoglikScheme& scheme,
                std::uint64_t seed, long cache_budget_doubles, int threads);

  // Sum over observations; optionally writes each observation's value.
  double total(const FBParams& params, VectorXd* per_obs = nullptr) const;

  int size() const { return static_cast<int>(data_.size()); }
  const std::vector<RRFBObservation>& data() const { return data_; }
  const LoglikScheme& scheme() const { return scheme_; }

 private:
  std::vector<RRFBObservation> data_;
  LoglikScheme scheme_;
  std::uint64_t seed_;
  int threads_;
  bool cached_;
  std::vector<LatentDraws> draws_;  // slot per observation (empty if m < 2)
};

// MCEM driver; returns the best iterate by monitored log-likelihood.
FitResult fit(const std::vector<RRFBObservation>& data,
              const FitConfig& config);

// Fisher-Bingham maximum likelihood on fixed sufficient statistics
// (block passes iterated to stationarity). With exact zero-free statistics
// this is the direct FB MLE the EM fit must agree with.
FBParams fb_mle(const SufficientStats& stats, const FBParams& init,
                const FitConfig& config, int max_passes = 500,
                double tol = 1e-11);

// Documented JSON layout of a fit:
// {p, lambda, Q (row-major), gamma_tilde, gamma, loglik, iterations,
//  converged, seed}.
std::string fit_result_to_json(const FitResult& result, std::uint64_t seed);

}  // namespace rrfb
