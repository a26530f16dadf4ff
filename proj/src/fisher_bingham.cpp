#include "rrfb/fisher_bingham.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace rrfb {

namespace {

using cd = std::complex<double>;
constexpr double kPi = 3.14159265358979323846;
constexpr cd kI{0.0, 1.0};

// Shift c > 0 chosen so the inverted density is evaluated at its mean:
// E[S] = sum_i (m_i^2 + s_i^2) = 1 with theta = lam + c, s^2 = 1/(2 theta),
// m = gt/(2 theta). Monotone decreasing in c; solved by bisection.
double solve_shift(const VectorXd& lam, const VectorXd& gt) {
  auto excess = [&](double c) {
    double v = 0.0;
    for (int i = 0; i < lam.size(); ++i) {
      double th = lam[i] + c;
      v += gt[i] * gt[i] / (4.0 * th * th) + 0.5 / th;
    }
    return v;
  };
  double lo = 1e-3, hi = 1.0;
  while (excess(hi) > 1.0) hi *= 2.0;
  while (lo > 1e-14 && excess(lo) < 1.0) lo *= 0.5;
  for (int it = 0; it < 100; ++it) {
    double mid = 0.5 * (lo + hi);
    (excess(mid) > 1.0 ? lo : hi) = mid;
  }
  return std::max(0.5 * (lo + hi), 0.05);
}

// 1/z for z = x + iy.
inline cd cinv(cd z) {
  double x = z.real(), y = z.imag();
  double r2 = x * x + y * y;
  return {x / r2, -y / r2};
}

// 1/sqrt(z) for z in the right half-plane (principal branch per factor).
inline cd cinv_sqrt(cd z) {
  double x = z.real(), y = z.imag();
  double r = std::hypot(x, y);
  double re = std::sqrt(0.5 * (r + x));
  double im = std::copysign(std::sqrt(std::max(0.5 * (r - x), 0.0)), y);
  return {re / r, -im / r};
}

struct TailTerms {
  cd value;                 // e^{-iT} P(G, G', G'', G''')
  std::vector<cd> d_s2;     // derivative of the same w.r.t. each s_i^2
  std::vector<cd> d_m;      // ... and each m_i
};

// Tail of the inversion integral at truncation T: three integration-by-parts
// terms continuing the integral to infinity plus the h^2/12 and h^4/720
// Euler-Maclaurin endpoint corrections of the trapezoid. All pieces are
// polynomials in G and its derivatives, which come from the analytic
// log-derivatives of the product characteristic function.
TailTerms tail_at(double T, double h, const VectorXd& s2, const VectorXd& m,
                  bool want_grad) {
  const int p = static_cast<int>(s2.size());
  std::vector<cd> invd(p), invd2(p), invd3(p), invd4(p), invd5(p);
  cd log_g{0.0, 0.0};
  cd prod_inv_sqrt{1.0, 0.0};
  cd phase{0.0, 0.0};
  for (int j = 0; j < p; ++j) {
    cd d{1.0, -2.0 * T * s2[j]};
    invd[j] = cinv(d);
    invd2[j] = invd[j] * invd[j];
    invd3[j] = invd2[j] * invd[j];
    invd4[j] = invd2[j] * invd2[j];
    invd5[j] = invd4[j] * invd[j];
    prod_inv_sqrt *= cinv_sqrt(d);
    phase += m[j] * m[j] * invd[j];
  }
  // G = prod (d_j)^{-1/2} * exp(i T sum m_j^2 / d_j)
  cd G = prod_inv_sqrt *
         std::polar(std::exp(-T * phase.imag()), T * phase.real());
  cd L1{0, 0}, L2{0, 0}, L3{0, 0};
  for (int j = 0; j < p; ++j) {
    double s = s2[j], m2 = m[j] * m[j];
    L1 += kI * (s * invd[j] + m2 * invd2[j]);
    L2 += -2.0 * s * s * invd2[j] - 4.0 * m2 * s * invd3[j];
    L3 += kI * (-8.0 * s * s * s * invd3[j] - 24.0 * m2 * s * s * invd4[j]);
  }
  cd G1 = G * L1;
  cd G2 = G * (L1 * L1 + L2);
  cd G3 = G * (L1 * L1 * L1 + 3.0 * L1 * L2 + L3);

  const double h2 = h * h / 12.0, h4 = h * h * h * h / 720.0;
  const cd cG = -kI - 0.5 * h + kI * h2 + kI * h4;
  const cd cG1 = -1.0 - h2 - 3.0 * h4;
  const cd cG2 = kI * (1.0 - 3.0 * h4);
  const cd cG3 = cd{h4, 0.0};
  const cd eT = std::polar(1.0, -T);

  TailTerms out;
  out.value = eT * (cG * G + cG1 * G1 + cG2 * G2 + cG3 * G3);
  if (!want_grad) return out;

  out.d_s2.assign(p, cd{0, 0});
  out.d_m.assign(p, cd{0, 0});
  const cd l1sq = L1 * L1;
  for (int j = 0; j < p; ++j) {
    double s = s2[j], mm = m[j], m2 = mm * mm;
    // d log G and d L_k with respect to s_j^2 and m_j (d d_j/d s_j^2 = -2iT).
    cd a = kI * T * invd[j] - 2.0 * T * T * m2 * invd2[j];
    cd b = 2.0 * kI * T * mm * invd[j];
    cd dL1_s = kI * invd[j] - 2.0 * T * s * invd2[j] - 4.0 * T * m2 * invd3[j];
    cd dL1_m = 2.0 * kI * mm * invd2[j];
    cd dL2_s = -4.0 * s * invd2[j] - 8.0 * kI * T * s * s * invd3[j] -
               4.0 * m2 * invd3[j] - 24.0 * kI * T * m2 * s * invd4[j];
    cd dL2_m = -8.0 * mm * s * invd3[j];
    cd dL3_s = kI * (-24.0 * s * s * invd3[j] - 48.0 * m2 * s * invd4[j]) +
               48.0 * T * s * s * s * invd4[j] +
               192.0 * T * m2 * s * s * invd5[j];
    cd dL3_m = -48.0 * kI * mm * s * s * invd4[j];

    for (int which = 0; which < 2; ++which) {
      cd dlogG = which == 0 ? a : b;
      cd dL1 = which == 0 ? dL1_s : dL1_m;
      cd dL2 = which == 0 ? dL2_s : dL2_m;
      cd dL3 = which == 0 ? dL3_s : dL3_m;
      cd dG = G * dlogG;
      cd dG1 = dG * L1 + G * dL1;
      cd dG2 = dG * (l1sq + L2) + G * (2.0 * L1 * dL1 + dL2);
      cd dG3 = dG * (L1 * l1sq + 3.0 * L1 * L2 + L3) +
               G * (3.0 * l1sq * dL1 + 3.0 * (dL1 * L2 + L1 * dL2) + dL3);
      cd dP = eT * (cG * dG + cG1 * dG1 + cG2 * dG2 + cG3 * dG3);
      (which == 0 ? out.d_s2[j] : out.d_m[j]) = dP;
    }
  }
  return out;
}

}  // namespace

void FBParams::validate() const {
  const int p = dim();
  if (p < 1) throw std::invalid_argument("FBParams: empty");
  if (Q.rows() != p || Q.cols() != p || gamma_tilde.size() != p)
    throw std::invalid_argument("FBParams: inconsistent dimensions");
  if (std::abs(lambda[0]) > 1e-12)
    throw std::invalid_argument("FBParams: lambda[0] must be 0");
  for (int i = 1; i < p; ++i)
    if (lambda[i] < lambda[i - 1] - 1e-12)
      throw std::invalid_argument("FBParams: lambda must be nondecreasing");
  check_orthogonal(Q);
}

void canonicalize(FBParams& params) {
  const int p = params.dim();
  std::vector<int> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return params.lambda[a] < params.lambda[b];
  });
  VectorXd lam(p), gt(p);
  MatrixXd Q(p, p);
  for (int k = 0; k < p; ++k) {
    lam[k] = params.lambda[idx[k]];
    gt[k] = params.gamma_tilde[idx[k]];
    Q.col(k) = params.Q.col(idx[k]);
  }
  double base = lam[0];
  for (int k = 0; k < p; ++k) lam[k] -= base;
  lam[0] = 0.0;
  for (int j = 0; j < p; ++j) {
    for (int i = 0; i < p; ++i) {
      if (std::abs(Q(i, j)) > 1e-12) {
        if (Q(i, j) < 0.0) {
          Q.col(j) *= -1.0;
          gt[j] *= -1.0;
        }
        break;
      }
    }
  }
  params.lambda = std::move(lam);
  params.gamma_tilde = std::move(gt);
  params.Q = std::move(Q);
}

double fb_log_density_unnorm(const VectorXd& z, const FBParams& params) {
  if (std::abs(z.norm() - 1.0) > 1e-8)
    throw std::invalid_argument("fb_log_density_unnorm: input not unit norm");
  VectorXd w = params.Q.transpose() * z;
  return -w.array().square().matrix().dot(params.lambda) +
         params.gamma_tilde.dot(w);
}

LogNormConst log_norm_const(const VectorXd& lambda, const VectorXd& gamma_tilde,
                            VectorXd* d_lambda, VectorXd* d_gamma) {
  const int p = static_cast<int>(lambda.size());
  if (p < 1 || gamma_tilde.size() != p)
    throw std::invalid_argument("log_norm_const: bad dimensions");

  const double shift = lambda.minCoeff();
  VectorXd lam = lambda.array() - shift;
  const double c = solve_shift(lam, gamma_tilde);
  VectorXd theta(p), s2(p), m(p);
  for (int i = 0; i < p; ++i) {
    theta[i] = lam[i] + c;
    s2[i] = 0.5 / theta[i];
    m[i] = gamma_tilde[i] / (2.0 * theta[i]);
  }
  const double h = std::min(0.5, 2.0 * kPi * c / 33.0);
  const bool want_grad = d_lambda != nullptr || d_gamma != nullptr;

  // Trapezoid core: I = h [f(0) + 2 sum_k Re f(kh)] + 2 Re(tail), with
  // f(t) = e^{-it} G(t) and f(0) = 1. Doubles the truncation until the
  // tail-corrected estimate stabilizes.
  double core_sum = 1.0;
  VectorXd g_s2 = VectorXd::Zero(p), g_m = VectorXd::Zero(p);
  std::vector<cd> invd(p);

  auto accumulate = [&](long k_begin, long k_end) {
    cd eit = std::polar(1.0, -h * static_cast<double>(k_begin));
    const cd step = std::polar(1.0, -h);
    for (long k = k_begin; k < k_end; ++k) {
      const double t = h * static_cast<double>(k);
      if ((k & 255) == 0) eit = std::polar(1.0, -h * static_cast<double>(k));
      cd prod_inv_sqrt{1.0, 0.0};
      cd phase{0.0, 0.0};
      for (int j = 0; j < p; ++j) {
        cd d{1.0, -2.0 * t * s2[j]};
        invd[j] = cinv(d);
        prod_inv_sqrt *= cinv_sqrt(d);
        phase += m[j] * m[j] * invd[j];
      }
      cd G = prod_inv_sqrt *
             std::polar(std::exp(-t * phase.imag()), t * phase.real());
      cd f = eit * G;
      core_sum += 2.0 * f.real();
      if (want_grad) {
        for (int j = 0; j < p; ++j) {
          cd a = kI * t * invd[j] -
                 2.0 * t * t * m[j] * m[j] * invd[j] * invd[j];
          cd b = 2.0 * kI * t * m[j] * invd[j];
          g_s2[j] += 2.0 * (f * a).real();
          g_m[j] += 2.0 * (f * b).real();
        }
      }
      eit *= step;
    }
  };

  long n_nodes = 1024;
  accumulate(1, n_nodes + 1);
  double integral = 0.0, last_delta = 0.0;
  bool converged = false;
  {
    TailTerms tail = tail_at(n_nodes * h, h, s2, m, false);
    integral = h * core_sum + 2.0 * tail.value.real();
  }
  for (int round = 0; round < 8 && !converged; ++round) {
    accumulate(n_nodes + 1, 2 * n_nodes + 1);
    n_nodes *= 2;
    TailTerms tail = tail_at(n_nodes * h, h, s2, m, false);
    double next = h * core_sum + 2.0 * tail.value.real();
    last_delta = std::abs(next - integral);
    integral = next;
    if (last_delta < 5e-10 * std::max(std::abs(integral), 1e-3))
      converged = true;
  }
  if (!converged)
    throw std::runtime_error("log_norm_const: inversion did not converge");
  if (!(integral > 0.0))
    throw std::runtime_error("log_norm_const: nonpositive inverted density");

  LogNormConst out;
  out.method = "cf-inversion";
  out.rel_error_estimate = last_delta / integral;
  double prefactor = (c - shift) + std::log(2.0);
  for (int i = 0; i < p; ++i)
    prefactor += 0.5 * std::log(kPi / theta[i]) +
                 gamma_tilde[i] * gamma_tilde[i] / (4.0 * theta[i]);
  out.log_value = prefactor + std::log(integral / (2.0 * kPi));

  if (want_grad) {
    TailTerms tail = tail_at(n_nodes * h, h, s2, m, true);
    if (d_lambda) d_lambda->resize(p);
    if (d_gamma) d_gamma->resize(p);
    for (int i = 0; i < p; ++i) {
      double dI_s2 = h * g_s2[i] + 2.0 * tail.d_s2[i].real();
      double dI_m = h * g_m[i] + 2.0 * tail.d_m[i].real();
      // chain rule: d s_i^2/d theta_i = -2 s_i^4, d m_i/d theta_i = -m_i/theta_i
      if (d_lambda)
        (*d_lambda)[i] = -0.5 / theta[i] -
                         gamma_tilde[i] * gamma_tilde[i] /
                             (4.0 * theta[i] * theta[i]) +
                         (dI_s2 * (-2.0 * s2[i] * s2[i]) +
                          dI_m * (-m[i] / theta[i])) /
                             integral;
      if (d_gamma)
        (*d_gamma)[i] =
            gamma_tilde[i] / (2.0 * theta[i]) + dI_m * s2[i] / integral;
    }
  }
  return out;
}

void grad_log_norm_const(const VectorXd& lambda, const VectorXd& gamma_tilde,
                         VectorXd& d_lambda, VectorXd& d_gamma) {
  log_norm_const(lambda, gamma_tilde, &d_lambda, &d_gamma);
}

void grad_log_norm_const_fd(const VectorXd& lambda, const VectorXd& gamma_tilde,
                            VectorXd& d_lambda, VectorXd& d_gamma,
                            double step) {
  const int p = static_cast<int>(lambda.size());
  d_lambda.resize(p);
  d_gamma.resize(p);
  for (int i = 0; i < p; ++i) {
    VectorXd lp = lambda, lm = lambda;
    lp[i] += step;
    lm[i] -= step;
    d_lambda[i] = (log_norm_const(lp, gamma_tilde).log_value -
                   log_norm_const(lm, gamma_tilde).log_value) /
                  (2.0 * step);
    VectorXd gp = gamma_tilde, gm = gamma_tilde;
    gp[i] += step;
    gm[i] -= step;
    d_gamma[i] = (log_norm_const(lambda, gp).log_value -
                  log_norm_const(lambda, gm).log_value) /
                 (2.0 * step);
  }
}

McNormConst mc_norm_const_oracle(const VectorXd& lambda,
                                 const VectorXd& gamma_tilde, long n_samples,
                                 Rng& rng) {
  const int p = static_cast<int>(lambda.size());
  if (n_samples < 1000)
    throw std::invalid_argument("mc_norm_const_oracle: need >= 1000 samples");
  double sum = 0.0, sum_sq = 0.0;
  for (long k = 0; k < n_samples; ++k) {
    VectorXd x = sample_uniform_sphere(p, rng);
    double e = std::exp(-x.array().square().matrix().dot(lambda) +
                        gamma_tilde.dot(x));
    sum += e;
    sum_sq += e * e;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0);
  const double area = sphere_area(p);
  return {area * mean, area * std::sqrt(var / n)};
}

double solve_b0(const VectorXd& nu, double tol) {
  const int p = static_cast<int>(nu.size());
  if (p < 1) throw std::invalid_argument("solve_b0: empty input");
  VectorXd v = nu;
  std::sort(v.data(), v.data() + p);
  if (v[0] < -1e-12)
    throw std::invalid_argument("solve_b0: eigenvalues must be nonnegative");
  double lo = -std::numeric_limits<double>::infinity();
  double partial = 0.0;
  for (int k = 1; k <= p; ++k) {
    partial += v[k - 1];
    lo = std::max(lo, k - 2.0 * partial / k);
  }
  double hi = static_cast<double>(p);
  auto g = [&](double b) {
    double s = 0.0;
    for (int i = 0; i < p; ++i) s += 1.0 / (b + 2.0 * v[i]);
    return s;
  };
  while (hi - lo > tol) {
    double mid = 0.5 * (lo + hi);
    (g(mid) > 1.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

FBSampler::FBSampler(const FBParams& params) {
  params.validate();
  p_ = params.dim();
  const MatrixXd A = params.A();
  const VectorXd gamma = params.gamma();
  kappa_ = gamma.norm();
  MatrixXd A1 = A;
  if (kappa_ > 0.0)
    A1 += (kappa_ / 2.0) *
          (MatrixXd::Identity(p_, p_) - gamma * gamma.transpose() /
                                            (kappa_ * kappa_));
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A1);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("FBSampler: eigen decomposition failed");
  nu_ = (es.eigenvalues().array() - es.eigenvalues()[0]).matrix();
  V_ = es.eigenvectors();
  b0_ = solve_b0(nu_);
  omega_ = (1.0 + 2.0 * nu_.array() / b0_).matrix();
  inv_sqrt_omega_ = omega_.array().rsqrt().matrix();
  gamma_v_ = V_.transpose() * gamma;
  log_M_ = -(p_ - b0_) / 2.0 + 0.5 * p_ * std::log(p_ / b0_);
}

VectorXd FBSampler::sample(Rng& rng) {
  VectorXd y(p_);
  for (;;) {
    ++attempts_;
    for (int i = 0; i < p_; ++i) y[i] = inv_sqrt_omega_[i] * rng.normal();
    const double n2 = y.squaredNorm();
    if (n2 < 1e-300) continue;
    double v = 0.0, q = 0.0, gx = 0.0;
    for (int i = 0; i < p_; ++i) {
      const double w2 = y[i] * y[i] / n2;
      v += nu_[i] * w2;
      q += omega_[i] * w2;
      gx += gamma_v_[i] * y[i];
    }
    gx /= std::sqrt(n2);
    double log_ratio = -v + 0.5 * p_ * std::log(q) - log_M_;
    if (kappa_ > 0.0) log_ratio -= (gx - kappa_) * (gx - kappa_) / (2.0 * kappa_);
    const double ratio = std::exp(log_ratio);
    if (ratio > max_ratio_) max_ratio_ = ratio;
    if (ratio > 1.0 + 1e-9)
      throw std::runtime_error("FBSampler: envelope ratio exceeded 1");
    if (std::log(rng.uniform01()) < log_ratio) {
      ++accepts_;
      return V_ * (y / std::sqrt(n2));
    }
  }
}

FBSample fb_sample(const FBParams& params, Rng& rng) {
  FBSampler sampler(params);
  VectorXd z = sampler.sample(rng);
  return {std::move(z), sampler.attempts()};
}

}  // namespace rrfb
