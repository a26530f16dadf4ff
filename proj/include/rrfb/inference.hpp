// Two-sample inference for a shared-concentration model with group-specific
// linear coefficients: a robust score (Lagrange multiplier) test with a
// sandwich variance, asymptotic and permutation p-values for unpaired and
// paired designs, and distance-based PERMANOVA baselines.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rrfb/fit.hpp"

namespace rrfb {

struct TwoSampleData {
  std::vector<RRFBObservation> group0;
  std::vector<RRFBObservation> group1;
  // Optional pairing: pairing[i] is the index in group1 matched with
  // group0[i]; empty means unpaired. Must be a bijection when present.
  std::vector<int> pairing;

  int n0() const { return static_cast<int>(group0.size()); }
  int n1() const { return static_cast<int>(group1.size()); }
  int n() const { return n0() + n1(); }
  int p() const;
  void validate() const;
};

// Restricted (null) fit: one set of parameters on the pooled sample, with
// the frozen likelihood context used for all downstream derivatives.
// Pooled order is group0 followed by group1; the fit never sees labels.
struct RestrictedFit {
  FBParams params;
  FitTrace trace;
  std::shared_ptr<const LoglikContext> context;
  std::vector<int> labels;  // 0/1 per pooled observation
};

RestrictedFit restricted_fit(const TwoSampleData& data,
                             const FitConfig& config);

// Per-observation score pieces at the restricted estimate. Parameters are
// laid out as phi = (gamma ambient [p], eigenvalue gaps u free part [p-1],
// rotation coordinates alpha [p(p-1)/2]), q = p + (p-1) + p(p-1)/2 total.
// The group-difference score of observation i is (2 g_i - 1) times its
// gamma-gradient row.
struct ScoreParts {
  MatrixXd C;    // n x p  gamma-gradients (ambient coordinates)
  MatrixXd Eta;  // n x q  full nuisance-parameter gradients
};

ScoreParts score_contributions(const RestrictedFit& rfit,
                               double fd_step = 1e-5);

struct ScoreTestConfig {
  FitConfig fit;           // restricted-fit settings and frozen-seed source
  int n_permutations = 0;  // 0 = asymptotic p-value only
  bool paired = false;     // paired design: permute by within-pair flips
  // Recompute the group-difference information block per permutation from
  // per-observation Hessian contributions instead of holding it fixed.
  bool full_permutations = false;
  double fd_step_score = 1e-5;
  double fd_step_hessian = 1e-4;
  double ridge_scale = 1e-8;  // times trace/dim, applied when near-singular
};

struct ScoreTestResult {
  double T = 0.0;
  int df = 0;
  double p_asymptotic = 1.0;
  double p_permutation = -1.0;  // -1 when not requested
  int n_permutations = 0;
  std::vector<double> perm_stats;
  bool ridge_applied = false;
  double hessian_check = 0.0;  // step-halving consistency, 3 diagonal entries
  bool fit_converged = false;
  bool paired = false;
  bool plug_in_permutation = true;
  FBParams restricted_params;

  // {T, df, p_asymptotic, p_permutation, n_permutations, method_flags}
  std::string to_json() const;
};

// The rng drives only the label permutations; likelihood randomness is
// frozen by config.fit.seed.
ScoreTestResult score_test(const TwoSampleData& data,
                           const ScoreTestConfig& config, Rng& rng);

// Upper tail of the chi-squared distribution with df degrees of freedom.
double chi_squared_upper_tail(double x, int df);

// sum |x_i - y_i| / sum (x_i + y_i) for nonnegative compositions.
double bray_curtis(const VectorXd& x, const VectorXd& y);

// Pairwise Bray-Curtis on the simplex compositions obtained by squaring
// spherical coordinates.
MatrixXd bray_curtis_distance_matrix(const std::vector<RRFBObservation>& data);

// Pairwise Euclidean distance of the spherical coordinates themselves
// (equivalently, on square-root transformed compositions).
MatrixXd sqrt_euclidean_distance_matrix(
    const std::vector<RRFBObservation>& data);

struct PermanovaResult {
  double pseudo_F = 0.0;
  double p_value = 1.0;
  int n_permutations = 0;
};

// Pseudo-F from squared distances with a label-permutation p-value
//   (1 + #{F_perm >= F}) / (1 + n_perm).
// labels must contain >= 2 groups, each of size >= 2.
PermanovaResult permanova(const MatrixXd& D, const std::vector<int>& labels,
                          int n_perm, Rng& rng);

}  // namespace rrfb
