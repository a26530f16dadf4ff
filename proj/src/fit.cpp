#include "rrfb/fit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "rrfb/parallel.hpp"

namespace rrfb {

namespace {

double rel_param_delta(const FBParams& a, const FBParams& b) {
  const double dl = (a.lambda - b.lambda).cwiseAbs().maxCoeff() /
                    (1.0 + a.lambda.cwiseAbs().maxCoeff());
  const double dg = (a.gamma_tilde - b.gamma_tilde).cwiseAbs().maxCoeff() /
                    (1.0 + a.gamma_tilde.cwiseAbs().maxCoeff());
  const double dq = (a.Q - b.Q).cwiseAbs().maxCoeff();
  return std::max({dl, dg, dq});
}

// Nearest orthogonal matrix (polar factor); clears accumulated drift from
// repeated retractions.
MatrixXd orthogonal_project(const MatrixXd& Q) {
  Eigen::JacobiSVD<MatrixXd> svd(Q,
                                 Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

}  // namespace

FBParams initialize(const std::vector<RRFBObservation>& data,
                    const FitConfig& config) {
  const int n = static_cast<int>(data.size());
  if (n == 0) throw std::invalid_argument("initialize: empty data");
  const int p = static_cast<int>(data[0].x.size());
  if (n < p + 1)
    throw std::invalid_argument("initialize: need at least p+1 observations");

  VectorXd xbar = VectorXd::Zero(p);
  for (const auto& obs : data) xbar += obs.x;
  xbar /= n;
  const double R = xbar.norm();
  if (R >= 1.0 - 1e-12)
    throw std::invalid_argument(
        "initialize: degenerate sample (all points identical)");
  VectorXd mu = R > 1e-12 ? VectorXd(xbar / R) : VectorXd(VectorXd::Unit(p, 0));
  const double kappa = R * (p - R * R) / (1.0 - R * R);
  const VectorXd gamma0 = config.c_gamma * kappa * mu;

  MatrixXd C = MatrixXd::Zero(p, p);
  for (const auto& obs : data) {
    VectorXd y = obs.x - (obs.x.dot(mu)) * mu;
    C += y * y.transpose();
  }
  C /= n;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(C);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("initialize: eigen decomposition failed");

  // Columns: mean direction, then tangent eigenvectors by decreasing
  // variance, projected orthogonal to the mean and re-orthonormalized (the
  // QR factor supplies an arbitrary completion wherever C is rank-deficient).
  MatrixXd M(p, p);
  M.col(0) = mu;
  for (int j = 1; j < p; ++j) {
    VectorXd v = es.eigenvectors().col(p - j);
    v -= v.dot(mu) * mu;
    M.col(j) = v;
  }
  Eigen::HouseholderQR<MatrixXd> qr(M);
  MatrixXd Q = qr.householderQ();
  for (int j = 0; j < p; ++j)
    if (Q.col(j).dot(M.col(j)) < 0.0) Q.col(j) *= -1.0;

  // Concentrations from the tangent eigenvalue spread: the direction of
  // largest variance gets the smallest concentration. Ties are separated so
  // the gap parameterization keeps a usable gradient.
  VectorXd lambda = VectorXd::Zero(p);
  const double nu1 = es.eigenvalues()(p - 1);
  const double denom = nu1 - es.eigenvalues()(1);
  for (int j = 1; j < p; ++j) {
    const double raw =
        denom > 1e-12
            ? config.c_lambda * (nu1 - es.eigenvalues()(p - j)) / denom
            : 0.0;
    lambda[j] = std::max(raw, lambda[j - 1] + 1e-3);
  }

  FBParams params;
  params.lambda = lambda;
  params.Q = Q;
  params.gamma_tilde = Q.transpose() * gamma0;
  return params;
}

SufficientStats e_step(const std::vector<RRFBObservation>& data,
                       const FBParams& params, const FitConfig& config,
                       Rng& rng) {
  const int n = static_cast<int>(data.size());
  const int p = params.dim();
  std::vector<MatrixXd> m1(n);
  std::vector<VectorXd> m2(n);
  std::vector<double> ess(n);
  std::vector<char> warn(n, 0);

  parallel_for(n, config.threads, [&](int i) {
    const auto& obs = data[i];
    PosteriorMoments pm;
    if (obs.blocks.m == 0) {
      Rng unused(0, 0);
      pm = estep_moments(obs, params, MomentScheme::exact(), unused);
    } else if (obs.blocks.m == 1) {
      Rng unused(0, 0);
      pm = estep_moments(obs, params,
                         MomentScheme::quadrature(config.estep_nodes), unused);
    } else {
      Rng r = rng.split(static_cast<std::uint64_t>(i));
      pm = estep_moments(
          obs, params,
          MomentScheme::importance(config.estep_K, config.ess_floor), r);
    }
    m1[i] = std::move(pm.M1);
    m2[i] = std::move(pm.M2);
    ess[i] = pm.ess;
    warn[i] = pm.ess_warning ? 1 : 0;
  });

  SufficientStats stats;
  stats.S1_bar = MatrixXd::Zero(p, p);
  stats.S2_bar = VectorXd::Zero(p);
  for (int i = 0; i < n; ++i) {
    stats.S1_bar += m1[i];
    stats.S2_bar += m2[i];
    stats.min_ess = std::min(stats.min_ess, ess[i]);
    stats.ess_warnings += warn[i];
  }
  stats.S1_bar /= n;
  stats.S2_bar /= n;
  return stats;
}

double surrogate_value(const SufficientStats& stats, const FBParams& params) {
  const MatrixXd M =
      params.Q.transpose() * stats.S1_bar * params.Q;  // eigenbasis stats
  const VectorXd t = params.Q.transpose() * stats.S2_bar;
  const double logc =
      log_norm_const(params.lambda, params.gamma_tilde).log_value;
  return -(logc + params.lambda.dot(M.diagonal()) -
           params.gamma_tilde.dot(t));
}

FBParams m_step(const SufficientStats& stats, const FBParams& params,
                const FitConfig& config, MStepInfo* info) {
  const int p = params.dim();
  FBParams cur = params;
  MStepInfo local;
  local.q_before = surrogate_value(stats, cur);
  double q_running = local.q_before;

  // Block 1: linear coefficients in the eigenbasis.
  {
    const VectorXd t = cur.Q.transpose() * stats.S2_bar;
    const VectorXd lambda = cur.lambda;
    auto fg = [&](const VectorXd& g, VectorXd& grad) {
      VectorXd dg;
      VectorXd dl;  // unused but computed jointly
      const double logc = log_norm_const(lambda, g, &dl, &dg).log_value;
      grad = dg - t;
      return logc - g.dot(t);
    };
    BfgsOptions opts;
    opts.max_iter = config.gamma_max_iter;
    BfgsResult res = minimize_bfgs(fg, cur.gamma_tilde, opts);
    cur.gamma_tilde = res.x;
    local.line_search_failed |= res.line_search_failed;
    const double q = surrogate_value(stats, cur);
    if (q < q_running - 1e-10) local.q_decreased = true;
    q_running = std::max(q_running, q);
  }

  // Block 2: eigenvalue gaps through the monotone reparameterization.
  {
    const MatrixXd M = cur.Q.transpose() * stats.S1_bar * cur.Q;
    const VectorXd D = M.diagonal();
    const VectorXd gt = cur.gamma_tilde;
    auto fg = [&](const VectorXd& xfree, VectorXd& grad) {
      VectorXd u(p);
      u[0] = 0.0;
      u.tail(p - 1) = xfree;
      const VectorXd lambda = lambda_from_u(u);
      VectorXd dl, dg;
      const double logc = log_norm_const(lambda, gt, &dl, &dg).log_value;
      VectorXd per_lambda = dl + D;
      grad.resize(p - 1);
      double suffix = 0.0;
      for (int j = p - 1; j >= 1; --j) {
        suffix += per_lambda[j];
        grad[j - 1] = sigmoid(u[j]) * suffix;
      }
      return logc + lambda.dot(D);
    };
    VectorXd u0 = u_from_lambda(cur.lambda);
    BfgsOptions opts;
    opts.max_iter = config.lambda_max_iter;
    BfgsResult res = minimize_bfgs(fg, u0.tail(p - 1), opts);
    VectorXd u(p);
    u[0] = 0.0;
    u.tail(p - 1) = res.x;
    cur.lambda = lambda_from_u(u);
    local.line_search_failed |= res.line_search_failed;
    const double q = surrogate_value(stats, cur);
    if (q < q_running - 1e-10) local.q_decreased = true;
    q_running = std::max(q_running, q);
  }

  // Block 3: orthogonal factor by tangent ascent with retraction. The
  // normalizing constant does not involve Q, so the objective is
  //   h(Q) = -tr(Lambda Q' S1 Q) + gamma_tilde' Q' S2.
  {
    const MatrixXd& S1 = stats.S1_bar;
    const VectorXd& S2 = stats.S2_bar;
    const VectorXd& lam = cur.lambda;
    const VectorXd& gt = cur.gamma_tilde;
    auto h = [&](const MatrixXd& Q) {
      const MatrixXd M = Q.transpose() * S1 * Q;
      return -lam.dot(M.diagonal()) + gt.dot(Q.transpose() * S2);
    };
    MatrixXd Q = cur.Q;
    double hv = h(Q);
    double tau = 1.0;
    for (int step = 0; step < config.q_max_steps; ++step) {
      const MatrixXd G = -2.0 * (S1 * Q) * lam.asDiagonal() +
                         S2 * gt.transpose();
      const MatrixXd QtG = Q.transpose() * G;
      const MatrixXd Omega = 0.5 * (QtG - QtG.transpose());
      const double omega2 = Omega.squaredNorm();
      if (omega2 < 1e-18 * (1.0 + hv * hv)) break;
      tau = std::min(2.0 * tau, 1.0 / (1.0 + std::sqrt(omega2)));
      bool accepted = false;
      for (int bt = 0; bt < 30; ++bt) {
        MatrixXd Qn = Q * exp_matrix(tau * Omega);
        const double hn = h(Qn);
        if (hn >= hv + 0.1 * tau * omega2) {
          Q = std::move(Qn);
          hv = hn;
          accepted = true;
          break;
        }
        tau *= 0.5;
      }
      if (!accepted) {
        local.line_search_failed = true;
        break;
      }
    }
    cur.Q = orthogonal_project(Q);
    const double q = surrogate_value(stats, cur);
    if (q < q_running - 1e-10) local.q_decreased = true;
    q_running = std::max(q_running, q);
  }

  canonicalize(cur);
  local.q_after = surrogate_value(stats, cur);
  if (info) *info = local;
  return cur;
}

LoglikContext::LoglikContext(std::vector<RRFBObservation> data,
                             const LoglikScheme& scheme, std::uint64_t seed,
                             long cache_budget_doubles, int threads)
    : data_(std::move(data)),
      scheme_(scheme),
      seed_(seed),
      threads_(threads) {
  long need = 0;
  for (const auto& obs : data_)
    if (obs.blocks.m >= 2) need += scheme_.K * (obs.blocks.m + 1);
  cached_ = need <= cache_budget_doubles;
  if (cached_) {
    draws_.resize(data_.size());
    const Rng base(seed_, 0xD0A5ULL);
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto& obs = data_[i];
      if (obs.blocks.m >= 2) {
        Rng r = base.split(i);
        draws_[i] = draw_latent_proposals(obs.blocks.p(), obs.blocks.m,
                                          scheme_.K, r);
      }
    }
  }
}

double LoglikContext::total(const FBParams& params, VectorXd* per_obs) const {
  const int n = static_cast<int>(data_.size());
  const double logc =
      log_norm_const(params.lambda, params.gamma_tilde).log_value;
  VectorXd vals(n);
  const Rng base(seed_, 0xD0A5ULL);
  parallel_for(n, threads_, [&](int i) {
    const auto& obs = data_[i];
    double lt;
    if (obs.blocks.m >= 2) {
      if (cached_) {
        lt = observed_logtilt(obs, params, scheme_, &draws_[i]);
      } else {
        Rng r = base.split(static_cast<std::uint64_t>(i));
        LatentDraws d = draw_latent_proposals(obs.blocks.p(), obs.blocks.m,
                                              scheme_.K, r);
        lt = observed_logtilt(obs, params, scheme_, &d);
      }
    } else {
      lt = observed_logtilt(obs, params, scheme_, nullptr);
    }
    vals[i] = lt - logc;
  });
  if (per_obs) *per_obs = vals;
  return vals.sum();
}

FitResult fit(const std::vector<RRFBObservation>& data,
              const FitConfig& config) {
  const int n = static_cast<int>(data.size());
  FitResult out;
  out.params = initialize(data, config);

  const Rng master(config.seed, 0xE11ULL);
  LoglikContext ctx(data, LoglikScheme{config.loglik_nodes, config.loglik_K},
                    config.seed, config.cache_budget_doubles, config.threads);

  double ll = ctx.total(out.params) / n;
  FBParams best_params = out.params;
  double best_ll = ll;
  double ll_prev = ll;

  for (int iter = 1; iter <= config.max_iter; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng iter_rng = master.split(static_cast<std::uint64_t>(iter));
    SufficientStats stats = e_step(data, out.params, config, iter_rng);
    MStepInfo info;
    FBParams next = m_step(stats, out.params, config, &info);
    const double delta = rel_param_delta(out.params, next);
    ll = ctx.total(next) / n;
    out.params = std::move(next);
    const auto t1 = std::chrono::steady_clock::now();

    IterationRecord rec;
    rec.iter = iter;
    rec.loglik = ll;
    rec.q_value = info.q_after;
    rec.param_delta = delta;
    rec.min_ess = stats.min_ess;
    rec.ess_warnings = stats.ess_warnings;
    rec.seconds = std::chrono::duration<double>(t1 - t0).count();
    rec.q_decreased = info.q_decreased;
    rec.line_search_failed = info.line_search_failed;
    out.trace.iterations.push_back(rec);

    if (ll > best_ll) {
      best_ll = ll;
      best_params = out.params;
    }
    const double rel_ll = std::abs(ll - ll_prev) / (1.0 + std::abs(ll_prev));
    ll_prev = ll;
    if (rel_ll < config.rel_tol_loglik && delta < config.rel_tol_params) {
      out.trace.converged = true;
      out.trace.stop_reason = "tolerance";
      break;
    }
  }
  if (!out.trace.converged) {
    out.trace.stop_reason = "max_iter";
    out.params = best_params;  // best iterate by monitored likelihood
    out.trace.final_loglik = best_ll;
  } else {
    out.trace.final_loglik = ll_prev;
  }
  return out;
}

FBParams fb_mle(const SufficientStats& stats, const FBParams& init,
                const FitConfig& config, int max_passes, double tol) {
  FBParams params = init;
  double q = surrogate_value(stats, params);
  for (int pass = 0; pass < max_passes; ++pass) {
    params = m_step(stats, params, config);
    const double q_new = surrogate_value(stats, params);
    if (std::abs(q_new - q) < tol * (1.0 + std::abs(q_new))) return params;
    q = q_new;
  }
  return params;
}

std::string fit_result_to_json(const FitResult& result, std::uint64_t seed) {
  nlohmann::json j;
  const FBParams& pr = result.params;
  const int p = pr.dim();
  j["p"] = p;
  j["lambda"] = std::vector<double>(pr.lambda.data(), pr.lambda.data() + p);
  std::vector<double> q;
  q.reserve(p * p);
  for (int i = 0; i < p; ++i)
    for (int k = 0; k < p; ++k) q.push_back(pr.Q(i, k));
  j["Q"] = q;
  j["gamma_tilde"] =
      std::vector<double>(pr.gamma_tilde.data(), pr.gamma_tilde.data() + p);
  const VectorXd g = pr.gamma();
  j["gamma"] = std::vector<double>(g.data(), g.data() + p);
  j["loglik"] = result.trace.final_loglik;
  j["iterations"] = result.trace.iterations.size();
  j["converged"] = result.trace.converged;
  j["seed"] = seed;
  return j.dump(2);
}

}  // namespace rrfb
