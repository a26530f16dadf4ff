// Observed-data model for compositions with exact zeros: a latent
// Fisher-Bingham vector is rectified (negatives clamped to zero) and
// renormalized. This module provides the transform, the zero-pattern
// decomposition, posterior moments of the latent vector given an observation
// (the E-step kernel), and the observed-data log-likelihood approximation.
#pragma once

#include <limits>
#include <vector>

#include "rrfb/fisher_bingham.hpp"
#include "rrfb/quadrature.hpp"

namespace rrfb {

// Zero pattern of a nonnegative observation. `order` lists original
// coordinate indices, positive entries first (stable: relative order kept
// within each block). As a permutation matrix P, (Px)[k] = x[order[k]].
struct BlockDecomposition {
  std::vector<int> order;
  int m = 0;        // number of zero coordinates
  VectorXd x_pos;   // positive subvector, unit norm

  int p() const { return static_cast<int>(order.size()); }
};

struct RRFBObservation {
  VectorXd x;                 // nonnegative, unit norm
  BlockDecomposition blocks;
};

// Posterior moments of the latent vector z given an observation:
// M1 = E[zz'], M2 = E[z], plus the block-norm summaries they are assembled
// from. For m = 0 the posterior is a point mass; for m = 1 the moments are
// deterministic quadratures (ess = inf); for m >= 2 they are importance
// sampling estimates with the reported effective sample size.
struct PosteriorMoments {
  MatrixXd M1;
  VectorXd M2;
  double eta1 = 1.0;  // E[sqrt(delta)]
  double eta2 = 1.0;  // E[delta]
  double eta3 = 0.0;  // E[sqrt(1-delta)]
  double eta4 = 0.0;  // E[sqrt(delta(1-delta))]
  VectorXd nu1;       // E[sqrt(1-delta) u]          (length m)
  VectorXd nu2;       // E[sqrt(delta(1-delta)) u]   (length m)
  MatrixXd nu3;       // E[(1-delta) uu']            (m x m)
  double ess = std::numeric_limits<double>::infinity();
  bool ess_warning = false;  // ESS stayed below floor after one K doubling
};

// Clamp negatives to zero and renormalize; the observation keeps the exact
// zero pattern (zero_tol = 0). Throws std::invalid_argument when no entry is
// positive (callers sampling latent vectors should redraw on that event).
RRFBObservation rectify_renormalize(const VectorXd& z);

// Stable zero-pattern decomposition of a nonnegative unit vector. Entries
// <= zero_tol count as zeros. Throws when all entries are zero.
BlockDecomposition decompose(const VectorXd& x, double zero_tol = 0.0);

// Preimage point z = P'(sqrt(delta) x_pos, sqrt(1-delta) u) for m >= 1.
VectorXd latent_from_blocks(double delta, const VectorXd& u,
                            const BlockDecomposition& blocks);

// log of delta^{(p-m)/2-1} (1-delta)^{m/2-1} exp(-z'Az + gamma'z) at
// z = latent_from_blocks(delta, u, obs.blocks). Requires delta in (0,1).
double log_posterior_weight(double delta, const VectorXd& u,
                            const RRFBObservation& obs,
                            const FBParams& params);

struct MomentScheme {
  enum class Kind { exact, quadrature, importance };
  Kind kind = Kind::exact;
  int nodes = 50;   // quadrature points (m = 1)
  long K = 5000;    // importance draws (m >= 2)
  long ess_floor = 50;

  static MomentScheme exact() { return {Kind::exact, 0, 0, 0}; }
  static MomentScheme quadrature(int nodes = 50) {
    return {Kind::quadrature, nodes, 0, 0};
  }
  static MomentScheme importance(long K = 5000, long ess_floor = 50) {
    return {Kind::importance, 0, K, ess_floor};
  }
};

// E-step kernel. Scheme must match the observation's zero count: exact
// requires m = 0, quadrature m = 1, importance m >= 1. On ESS below floor,
// K is doubled once; a persistent shortfall sets ess_warning.
PosteriorMoments estep_moments(const RRFBObservation& obs,
                               const FBParams& params,
                               const MomentScheme& scheme, Rng& rng);

struct LoglikScheme {
  int quad_nodes = 100;  // m = 1
  long K = 20000;        // m >= 2
};

// Frozen proposal draws for one observation with m >= 2, reusable across
// parameter values so the likelihood is a smooth deterministic surface.
struct LatentDraws {
  VectorXd delta;  // length K
  MatrixXd u;      // K x m, rows on the negative orthant of S^{m-1}
};

LatentDraws draw_latent_proposals(int p, int m, long K, Rng& rng);

// log of the integral bracket of the observed-data density: the latent tilt
// exp(-z'Az + gamma'z) averaged over the normalized base measure of the
// preimage. m = 0: the tilt at x itself. m = 1: Gauss-Jacobi quadrature.
// m >= 2: Monte Carlo mean over `draws` (required in that case).
double observed_logtilt(const RRFBObservation& obs, const FBParams& params,
                        const LoglikScheme& scheme,
                        const LatentDraws* draws);

// Observed-data log-likelihood of one observation: observed_logtilt minus
// log C. For m >= 2 the proposal draws are generated from a copy of
// frozen_rng, so equal rng states give bit-identical values.
double observed_loglik(const RRFBObservation& obs, const FBParams& params,
                       const LoglikScheme& scheme, Rng frozen_rng);

// One draw from the observed-data model: latent FB draw, rectified and
// renormalized (redrawn on the all-nonpositive event).
RRFBObservation rrfb_sample(const FBParams& params, Rng& rng);

// Sampler with the rejection envelope precomputed once.
class RRFBSampler {
 public:
  explicit RRFBSampler(const FBParams& params) : fb_(params) {}
  RRFBObservation sample(Rng& rng);
  const FBSampler& latent_sampler() const { return fb_; }

 private:
  FBSampler fb_;
};

}  // namespace rrfb
