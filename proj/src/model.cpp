#include "rrfb/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace rrfb {

namespace {

constexpr double kLog2 = 0.6931471805599453094;

// Jacobi rule for the delta-integral: mapping delta = (1+t)/2 turns the
// kernel delta^{(p-1)/2-1} (1-delta)^{-1/2} into weight exponents
// alpha = -1/2 (at t = +1) and beta = (p-3)/2 (at t = -1).
QuadratureRule delta_rule(int nodes, int p) {
  static std::map<std::pair<int, int>, QuadratureRule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(nodes, p);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, gauss_jacobi(nodes, -0.5, (p - 3) / 2.0)).first;
  return it->second;
}

// Coefficients of the latent tilt exponent as a function of (delta, u):
//   -z'Az + gamma'z = -delta*a_pos - 2 sqrt(delta(1-delta)) a_cross'u
//                     - (1-delta) u'A_neg u + sqrt(delta) g_pos
//                     + sqrt(1-delta) g_neg'u.
struct TiltCoeffs {
  double a_pos = 0.0;
  double g_pos = 0.0;
  VectorXd a_cross;  // length m
  MatrixXd A_neg;    // m x m
  VectorXd g_neg;    // length m
};

TiltCoeffs tilt_coeffs(const RRFBObservation& obs, const FBParams& params) {
  const auto& bl = obs.blocks;
  const int p = bl.p(), m = bl.m, q = p - m;
  const MatrixXd A = params.A();
  const VectorXd gamma = params.gamma();
  TiltCoeffs tc;
  tc.a_cross = VectorXd::Zero(m);
  tc.A_neg = MatrixXd::Zero(m, m);
  tc.g_neg = VectorXd::Zero(m);
  for (int k = 0; k < q; ++k) {
    const int ik = bl.order[k];
    tc.g_pos += gamma[ik] * bl.x_pos[k];
    for (int l = 0; l < q; ++l)
      tc.a_pos += bl.x_pos[k] * bl.x_pos[l] * A(ik, bl.order[l]);
    for (int r = 0; r < m; ++r)
      tc.a_cross[r] += A(bl.order[q + r], ik) * bl.x_pos[k];
  }
  for (int r = 0; r < m; ++r) {
    const int ir = bl.order[q + r];
    tc.g_neg[r] = gamma[ir];
    for (int s = 0; s < m; ++s) tc.A_neg(r, s) = A(ir, bl.order[q + s]);
  }
  return tc;
}

inline double tilt_exponent(const TiltCoeffs& tc, double delta,
                            const VectorXd& u) {
  const double sd = std::sqrt(delta), s1 = std::sqrt(1.0 - delta);
  double e = -delta * tc.a_pos + sd * tc.g_pos;
  if (u.size() > 0)
    e += -2.0 * sd * s1 * tc.a_cross.dot(u) -
         (1.0 - delta) * u.dot(tc.A_neg * u) + s1 * tc.g_neg.dot(u);
  return e;
}

// m = 1 specialization: u = (-1).
inline double tilt_exponent_m1(const TiltCoeffs& tc, double delta) {
  const double sd = std::sqrt(delta), s1 = std::sqrt(1.0 - delta);
  return -delta * tc.a_pos + 2.0 * sd * s1 * tc.a_cross[0] -
         (1.0 - delta) * tc.A_neg(0, 0) + sd * tc.g_pos - s1 * tc.g_neg[0];
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Scatter block-coordinate moments back to original coordinates.
void assemble_moments(const BlockDecomposition& bl, PosteriorMoments& pm) {
  const int p = bl.p(), m = bl.m, q = p - m;
  MatrixXd B(p, p);
  VectorXd v(p);
  for (int k = 0; k < q; ++k) {
    v[k] = pm.eta1 * bl.x_pos[k];
    for (int l = 0; l < q; ++l)
      B(k, l) = pm.eta2 * bl.x_pos[k] * bl.x_pos[l];
    for (int r = 0; r < m; ++r) {
      B(k, q + r) = bl.x_pos[k] * pm.nu2[r];
      B(q + r, k) = B(k, q + r);
    }
  }
  for (int r = 0; r < m; ++r) {
    v[q + r] = pm.nu1[r];
    for (int s = 0; s < m; ++s) B(q + r, q + s) = pm.nu3(r, s);
  }
  pm.M1.resize(p, p);
  pm.M2.resize(p);
  for (int i = 0; i < p; ++i) {
    pm.M2[bl.order[i]] = v[i];
    for (int j = 0; j < p; ++j) pm.M1(bl.order[i], bl.order[j]) = B(i, j);
  }
}

}  // namespace

RRFBObservation rectify_renormalize(const VectorXd& z) {
  if (std::abs(z.norm() - 1.0) > 1e-8)
    throw std::invalid_argument("rectify_renormalize: input not unit norm");
  VectorXd x = z.cwiseMax(0.0);
  const double nrm = x.norm();
  if (nrm <= 0.0)
    throw std::invalid_argument("rectify_renormalize: no positive entry");
  x /= nrm;
  RRFBObservation obs;
  obs.blocks = decompose(x, 0.0);
  obs.x = std::move(x);
  return obs;
}

BlockDecomposition decompose(const VectorXd& x, double zero_tol) {
  const int p = static_cast<int>(x.size());
  BlockDecomposition bl;
  bl.order.reserve(p);
  for (int i = 0; i < p; ++i) {
    if (x[i] < 0.0)
      throw std::invalid_argument("decompose: negative entry");
    if (x[i] > zero_tol) bl.order.push_back(i);
  }
  const int q = static_cast<int>(bl.order.size());
  if (q == 0) throw std::invalid_argument("decompose: all entries zero");
  bl.m = p - q;
  for (int i = 0; i < p; ++i)
    if (x[i] <= zero_tol) bl.order.push_back(i);
  bl.x_pos.resize(q);
  for (int k = 0; k < q; ++k) bl.x_pos[k] = x[bl.order[k]];
  if (std::abs(bl.x_pos.norm() - 1.0) > 1e-8)
    throw std::invalid_argument("decompose: positive block not unit norm");
  return bl;
}

VectorXd latent_from_blocks(double delta, const VectorXd& u,
                            const BlockDecomposition& blocks) {
  const int p = blocks.p(), m = blocks.m, q = p - m;
  if (m < 1) throw std::invalid_argument("latent_from_blocks: m must be >= 1");
  if (u.size() != m)
    throw std::invalid_argument("latent_from_blocks: dimension mismatch");
  if (delta < 0.0 || delta > 1.0)
    throw std::invalid_argument("latent_from_blocks: delta outside [0,1]");
  const double sd = std::sqrt(delta), s1 = std::sqrt(1.0 - delta);
  VectorXd z(p);
  for (int k = 0; k < q; ++k) z[blocks.order[k]] = sd * blocks.x_pos[k];
  for (int r = 0; r < m; ++r) z[blocks.order[q + r]] = s1 * u[r];
  return z;
}

double log_posterior_weight(double delta, const VectorXd& u,
                            const RRFBObservation& obs,
                            const FBParams& params) {
  const int p = obs.blocks.p(), m = obs.blocks.m;
  if (m < 1) throw std::invalid_argument("log_posterior_weight: m must be >= 1");
  if (delta <= 0.0 || delta >= 1.0)
    throw std::invalid_argument("log_posterior_weight: delta outside (0,1)");
  VectorXd z = latent_from_blocks(delta, u, obs.blocks);
  return ((p - m) / 2.0 - 1.0) * std::log(delta) +
         (m / 2.0 - 1.0) * std::log1p(-delta) +
         fb_log_density_unnorm(z, params);
}

PosteriorMoments estep_moments(const RRFBObservation& obs,
                               const FBParams& params,
                               const MomentScheme& scheme, Rng& rng) {
  const auto& bl = obs.blocks;
  const int p = bl.p(), m = bl.m;
  PosteriorMoments pm;

  if (scheme.kind == MomentScheme::Kind::exact) {
    if (m != 0)
      throw std::invalid_argument("estep_moments: exact scheme requires m=0");
    pm.M1 = obs.x * obs.x.transpose();
    pm.M2 = obs.x;
    return pm;
  }

  const TiltCoeffs tc = tilt_coeffs(obs, params);

  if (scheme.kind == MomentScheme::Kind::quadrature) {
    if (m != 1)
      throw std::invalid_argument(
          "estep_moments: quadrature scheme requires m=1");
    const QuadratureRule rule = delta_rule(scheme.nodes, p);
    const int n = scheme.nodes;
    VectorXd lt(n);
    for (int k = 0; k < n; ++k)
      lt[k] = tilt_exponent_m1(tc, 0.5 * (1.0 + rule.nodes[k]));
    const double mx = lt.maxCoeff();
    double Z = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    for (int k = 0; k < n; ++k) {
      const double d = 0.5 * (1.0 + rule.nodes[k]);
      const double w = rule.weights[k] * std::exp(lt[k] - mx);
      Z += w;
      s1 += w * std::sqrt(d);
      s2 += w * d;
      s3 += w * std::sqrt(1.0 - d);
      s4 += w * std::sqrt(d * (1.0 - d));
    }
    pm.eta1 = s1 / Z;
    pm.eta2 = s2 / Z;
    pm.eta3 = s3 / Z;
    pm.eta4 = s4 / Z;
    pm.nu1 = VectorXd::Constant(1, -pm.eta3);
    pm.nu2 = VectorXd::Constant(1, -pm.eta4);
    pm.nu3 = MatrixXd::Constant(1, 1, 1.0 - pm.eta2);
    assemble_moments(bl, pm);
    return pm;
  }

  // importance sampling, m >= 1
  if (m < 1)
    throw std::invalid_argument("estep_moments: importance requires m>=1");
  const double a = (p - m) / 2.0, b = m / 2.0;
  std::vector<double> deltas, lts;
  std::vector<VectorXd> us;
  long K = scheme.K;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const long target = (attempt == 0) ? K : 2 * K;
    while (static_cast<long>(deltas.size()) < target) {
      double d = rng.beta(a, b);
      VectorXd u = sample_uniform_negative_orthant(m, rng);
      deltas.push_back(d);
      lts.push_back(tilt_exponent(tc, d, u));
      us.push_back(std::move(u));
    }
    const long n = static_cast<long>(deltas.size());
    const double mx = *std::max_element(lts.begin(), lts.end());
    double sw = 0, sw2 = 0;
    for (long k = 0; k < n; ++k) {
      const double w = std::exp(lts[k] - mx);
      sw += w;
      sw2 += w * w;
    }
    pm.ess = sw * sw / sw2;
    if (scheme.ess_floor <= 0 || pm.ess >= scheme.ess_floor || attempt == 1) {
      if (scheme.ess_floor > 0 && pm.ess < scheme.ess_floor)
        pm.ess_warning = true;
      double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
      VectorXd n1 = VectorXd::Zero(m), n2 = VectorXd::Zero(m);
      MatrixXd n3 = MatrixXd::Zero(m, m);
      for (long k = 0; k < n; ++k) {
        const double w = std::exp(lts[k] - mx) / sw;
        const double d = deltas[k];
        const double sq = std::sqrt(d), s1d = std::sqrt(1.0 - d);
        s1 += w * sq;
        s2 += w * d;
        s3 += w * s1d;
        s4 += w * sq * s1d;
        n1 += (w * s1d) * us[k];
        n2 += (w * sq * s1d) * us[k];
        n3 += (w * (1.0 - d)) * (us[k] * us[k].transpose());
      }
      pm.eta1 = s1;
      pm.eta2 = s2;
      pm.eta3 = s3;
      pm.eta4 = s4;
      pm.nu1 = n1;
      pm.nu2 = n2;
      pm.nu3 = n3;
      assemble_moments(bl, pm);
      return pm;
    }
  }
  throw std::logic_error("estep_moments: unreachable");
}

LatentDraws draw_latent_proposals(int p, int m, long K, Rng& rng) {
  if (m < 1) throw std::invalid_argument("draw_latent_proposals: m must be >= 1");
  LatentDraws d;
  d.delta.resize(K);
  d.u.resize(K, m);
  const double a = (p - m) / 2.0, b = m / 2.0;
  for (long k = 0; k < K; ++k) {
    d.delta[k] = rng.beta(a, b);
    d.u.row(k) = sample_uniform_negative_orthant(m, rng).transpose();
  }
  return d;
}

double observed_logtilt(const RRFBObservation& obs, const FBParams& params,
                        const LoglikScheme& scheme, const LatentDraws* draws) {
  const auto& bl = obs.blocks;
  const int p = bl.p(), m = bl.m;
  if (m == 0) return fb_log_density_unnorm(obs.x, params);

  const TiltCoeffs tc = tilt_coeffs(obs, params);
  if (m == 1) {
    const QuadratureRule rule = delta_rule(scheme.quad_nodes, p);
    const int n = scheme.quad_nodes;
    VectorXd lt(n);
    for (int k = 0; k < n; ++k)
      lt[k] = tilt_exponent_m1(tc, 0.5 * (1.0 + rule.nodes[k]));
    const double mx = lt.maxCoeff();
    double Z = 0;
    for (int k = 0; k < n; ++k) Z += rule.weights[k] * std::exp(lt[k] - mx);
    const double a = (p - 1) / 2.0, b = 0.5;
    // integral kernel carries 2^{1-a-b} from delta = (1+t)/2; dividing by
    // B(a, b) makes the bracket an average over the normalized base measure
    return mx + std::log(Z) + (1.0 - a - b) * kLog2 - log_beta(a, b);
  }

  if (draws == nullptr)
    throw std::invalid_argument("observed_logtilt: draws required for m>=2");
  const long K = draws->delta.size();
  VectorXd lt(K);
  for (long k = 0; k < K; ++k)
    lt[k] = tilt_exponent(tc, draws->delta[k], draws->u.row(k).transpose());
  const double mx = lt.maxCoeff();
  double Z = 0;
  for (long k = 0; k < K; ++k) Z += std::exp(lt[k] - mx);
  if (!(Z > 0.0))
    throw std::runtime_error("observed_logtilt: all weights underflow");
  return mx + std::log(Z) - std::log(static_cast<double>(K));
}

double observed_loglik(const RRFBObservation& obs, const FBParams& params,
                       const LoglikScheme& scheme, Rng frozen_rng) {
  double lt;
  if (obs.blocks.m >= 2) {
    LatentDraws draws =
        draw_latent_proposals(obs.blocks.p(), obs.blocks.m, scheme.K,
                              frozen_rng);
    lt = observed_logtilt(obs, params, scheme, &draws);
  } else {
    lt = observed_logtilt(obs, params, scheme, nullptr);
  }
  return lt - log_norm_const(params.lambda, params.gamma_tilde).log_value;
}

RRFBObservation RRFBSampler::sample(Rng& rng) {
  for (;;) {
    VectorXd z = fb_.sample(rng);
    if ((z.array() > 0.0).any()) return rectify_renormalize(z);
  }
}

RRFBObservation rrfb_sample(const FBParams& params, Rng& rng) {
  RRFBSampler sampler(params);
  return sampler.sample(rng);
}

}  // namespace rrfb
