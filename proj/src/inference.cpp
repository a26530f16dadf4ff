#include "rrfb/inference.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include <boost/math/special_functions/gamma.hpp>
#include <json.hpp>

#include "rrfb/geometry.hpp"

namespace rrfb {

int TwoSampleData::p() const {
  if (group0.empty() && group1.empty())
    throw std::invalid_argument("TwoSampleData: both groups empty");
  return group0.empty() ? group1[0].blocks.p() : group0[0].blocks.p();
}

void TwoSampleData::validate() const {
  const int pp = p();
  for (const auto& o : group0)
    if (o.blocks.p() != pp)
      throw std::invalid_argument("TwoSampleData: mixed dimensions");
  for (const auto& o : group1)
    if (o.blocks.p() != pp)
      throw std::invalid_argument("TwoSampleData: mixed dimensions");
  if (!pairing.empty()) {
    if (n0() != n1() || static_cast<int>(pairing.size()) != n0())
      throw std::invalid_argument("TwoSampleData: pairing is not a bijection");
    std::vector<char> seen(n1(), 0);
    for (int j : pairing) {
      if (j < 0 || j >= n1() || seen[j])
        throw std::invalid_argument(
            "TwoSampleData: pairing is not a bijection");
      seen[j] = 1;
    }
  }
}

RestrictedFit restricted_fit(const TwoSampleData& data,
                             const FitConfig& config) {
  data.validate();
  std::vector<RRFBObservation> pooled;
  pooled.reserve(data.n());
  pooled.insert(pooled.end(), data.group0.begin(), data.group0.end());
  pooled.insert(pooled.end(), data.group1.begin(), data.group1.end());

  RestrictedFit out;
  FitResult fr = fit(pooled, config);
  out.params = std::move(fr.params);
  out.trace = std::move(fr.trace);
  out.labels.assign(data.n0(), 0);
  out.labels.insert(out.labels.end(), data.n1(), 1);
  out.context = std::make_shared<const LoglikContext>(
      std::move(pooled), LoglikScheme{config.loglik_nodes, config.loglik_K},
      config.seed, config.cache_budget_doubles, config.threads);
  return out;
}

namespace {

// Local Euclidean chart around the restricted estimate:
// phi = (gamma [p], free eigenvalue-gap coordinates [p-1], rotation [pc2]).
struct PhiFrame {
  FBParams base;
  int p = 0;
  int q = 0;
  VectorXd phi0;
};

PhiFrame make_frame(const FBParams& params) {
  PhiFrame fr;
  fr.base = params;
  fr.p = params.dim();
  const int p = fr.p;
  fr.q = p + (p - 1) + p * (p - 1) / 2;
  fr.phi0.resize(fr.q);
  fr.phi0.head(p) = params.gamma();
  fr.phi0.segment(p, p - 1) = u_from_lambda(params.lambda).tail(p - 1);
  fr.phi0.tail(p * (p - 1) / 2).setZero();
  return fr;
}

FBParams params_at(const PhiFrame& fr, const VectorXd& phi) {
  const int p = fr.p;
  FBParams out;
  out.Q = exp_skew(fr.base.Q, phi.tail(p * (p - 1) / 2));
  VectorXd u(p);
  u[0] = 0.0;
  u.tail(p - 1) = phi.segment(p, p - 1);
  out.lambda = lambda_from_u(u);
  out.gamma_tilde = out.Q.transpose() * phi.head(p);
  return out;
}

}  // namespace

ScoreParts score_contributions(const RestrictedFit& rfit, double fd_step) {
  const LoglikContext& ctx = *rfit.context;
  const int n = ctx.size();
  const PhiFrame fr = make_frame(rfit.params);
  MatrixXd D(n, fr.q);
  VectorXd vp(n), vm(n);
  for (int j = 0; j < fr.q; ++j) {
    VectorXd phi = fr.phi0;
    phi[j] += fd_step;
    ctx.total(params_at(fr, phi), &vp);
    phi[j] -= 2.0 * fd_step;
    ctx.total(params_at(fr, phi), &vm);
    D.col(j) = (vp - vm) / (2.0 * fd_step);
    if (!D.col(j).allFinite())
      throw std::runtime_error("score_contributions: non-finite gradient");
  }
  ScoreParts parts;
  parts.C = D.leftCols(fr.p);
  parts.Eta = std::move(D);
  return parts;
}

double chi_squared_upper_tail(double x, int df) {
  if (!(x > 0.0)) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

ScoreTestResult score_test(const TwoSampleData& data,
                           const ScoreTestConfig& config, Rng& rng) {
  data.validate();
  if (config.paired && data.n0() != data.n1())
    throw std::invalid_argument("score_test: paired design needs n0 == n1");

  RestrictedFit rfit = restricted_fit(data, config.fit);
  const LoglikContext& ctx = *rfit.context;
  const int n = ctx.size();
  const int p = data.p();

  VectorXd eps0(n);
  for (int i = 0; i < n; ++i) eps0[i] = rfit.labels[i] == 0 ? -1.0 : 1.0;

  ScoreParts parts = score_contributions(rfit, config.fd_step_score);
  const MatrixXd& C = parts.C;
  const MatrixXd& Eta = parts.Eta;
  const int q = static_cast<int>(Eta.cols());

  // Hessian blocks of the pooled log-likelihood by central second
  // differences; an epsilon-weighted copy of the same stencil gives the
  // group-difference block, whose rows of interest are the gamma rows.
  const PhiFrame frm = make_frame(rfit.params);
  const double h = config.fd_step_hessian;
  const bool keep = config.full_permutations;

  struct EvalRec {
    double s1 = 0.0;   // sum of per-observation values
    double se = 0.0;   // epsilon-weighted sum
    VectorXd v;        // per-observation values (kept only when needed)
  };
  auto do_eval = [&](const VectorXd& phi, bool keep_v) {
    VectorXd v(n);
    ctx.total(params_at(frm, phi), &v);
    EvalRec r;
    r.s1 = v.sum();
    r.se = eps0.dot(v);
    if (keep_v) r.v = std::move(v);
    return r;
  };

  const EvalRec e0 = do_eval(frm.phi0, keep);
  std::vector<std::array<EvalRec, 2>> ed(q);
  for (int j = 0; j < q; ++j) {
    VectorXd phi = frm.phi0;
    phi[j] += h;
    ed[j][0] = do_eval(phi, keep && j < p);
    phi[j] -= 2.0 * h;
    ed[j][1] = do_eval(phi, keep && j < p);
  }
  std::vector<std::array<EvalRec, 4>> epair;
  epair.reserve(q * (q - 1) / 2);
  const double sj[4] = {+1.0, +1.0, -1.0, -1.0};
  const double sk[4] = {+1.0, -1.0, +1.0, -1.0};
  for (int j = 0; j < q; ++j)
    for (int k = j + 1; k < q; ++k) {
      std::array<EvalRec, 4> a;
      for (int t = 0; t < 4; ++t) {
        VectorXd phi = frm.phi0;
        phi[j] += sj[t] * h;
        phi[k] += sk[t] * h;
        a[t] = do_eval(phi, keep && j < p);
      }
      epair.push_back(std::move(a));
    }

  auto stencil = [&](auto get) {
    MatrixXd H(q, q);
    for (int j = 0; j < q; ++j)
      H(j, j) = (get(ed[j][0]) - 2.0 * get(e0) + get(ed[j][1])) / (h * h);
    int idx = 0;
    for (int j = 0; j < q; ++j)
      for (int k = j + 1; k < q; ++k, ++idx) {
        const auto& a = epair[idx];
        const double v =
            (get(a[0]) - get(a[1]) - get(a[2]) + get(a[3])) / (4.0 * h * h);
        H(j, k) = v;
        H(k, j) = v;
      }
    return H;
  };
  const MatrixXd Hsum = stencil([](const EvalRec& r) { return r.s1; });
  const MatrixXd Hdif = stencil([](const EvalRec& r) { return r.se; });

  const MatrixXd Hpe = -(1.0 / n) * Hdif.topRows(p);
  MatrixXd Hee = -(1.0 / n) * Hsum;

  // Step-halving consistency on three diagonal entries (one per block).
  double check = 0.0;
  {
    std::vector<int> idxs = {0, std::min(p, q - 1),
                             std::min(2 * p - 1, q - 1)};
    std::sort(idxs.begin(), idxs.end());
    idxs.erase(std::unique(idxs.begin(), idxs.end()), idxs.end());
    for (int j : idxs) {
      VectorXd phi = frm.phi0;
      phi[j] += 2.0 * h;
      const EvalRec a = do_eval(phi, false);
      phi[j] -= 4.0 * h;
      const EvalRec b = do_eval(phi, false);
      const double coarse = (a.s1 - 2.0 * e0.s1 + b.s1) / (4.0 * h * h);
      const double fine = Hsum(j, j);
      check = std::max(check,
                       std::abs(coarse - fine) / (3.0 * (1.0 + std::abs(fine))));
    }
  }

  // Per-observation gamma-row Hessian blocks, needed only when the
  // permutation scheme recomputes the group-difference block.
  std::vector<MatrixXd> G;
  if (keep) {
    G.assign(n, MatrixXd::Zero(p, q));
    for (int i = 0; i < n; ++i)
      for (int r = 0; r < p; ++r)
        G[i](r, r) = (ed[r][0].v[i] - 2.0 * e0.v[i] + ed[r][1].v[i]) / (h * h);
    int idx = 0;
    for (int j = 0; j < q; ++j)
      for (int k = j + 1; k < q; ++k, ++idx) {
        if (j >= p) continue;
        const auto& a = epair[idx];
        for (int i = 0; i < n; ++i) {
          const double v =
              (a[0].v[i] - a[1].v[i] - a[2].v[i] + a[3].v[i]) / (4.0 * h * h);
          G[i](j, k) = v;
          if (k < p) G[i](k, j) = v;
        }
      }
  }

  ScoreTestResult res;
  res.df = p;
  res.fit_converged = rfit.trace.converged;
  res.paired = config.paired;
  res.plug_in_permutation = !config.full_permutations;
  res.restricted_params = rfit.params;
  res.hessian_check = check;

  auto maybe_ridge = [&](MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M);
    const VectorXd ev = es.eigenvalues();
    const double mx = ev.cwiseAbs().maxCoeff();
    const double mn = ev.cwiseAbs().minCoeff();
    if (mn <= 1e-10 * std::max(mx, 1.0)) {
      const double r = std::max(
          config.ridge_scale * std::abs(M.trace()) / M.rows(),
          config.ridge_scale);
      M += r * MatrixXd::Identity(M.rows(), M.cols());
      res.ridge_applied = true;
    }
  };
  maybe_ridge(Hee);
  Eigen::LDLT<MatrixXd> hee(Hee);
  const MatrixXd B = hee.solve(Hpe.transpose()).transpose();  // p x q

  const VectorXd sbar_eta = Eta.colwise().mean();
  const MatrixXd Jpp = (C.transpose() * C) / n;
  const MatrixXd Jee = (Eta.transpose() * Eta) / n;

  auto statistic = [&](const VectorXd& eps, const MatrixXd& Bmat) {
    const VectorXd sbar_psi = (C.transpose() * eps) / n;
    const MatrixXd Jpe = (C.transpose() * (eps.asDiagonal() * Eta)) / n;
    const VectorXd seff = sbar_psi - Bmat * sbar_eta;
    MatrixXd V = Jpp - Jpe * Bmat.transpose() - Bmat * Jpe.transpose() +
                 Bmat * Jee * Bmat.transpose();
    maybe_ridge(V);
    const double t = n * seff.dot(V.ldlt().solve(seff));
    return std::max(t, 0.0);
  };

  res.T = statistic(eps0, B);
  res.p_asymptotic = chi_squared_upper_tail(res.T, p);

  if (config.n_permutations > 0) {
    res.n_permutations = config.n_permutations;
    res.perm_stats.reserve(config.n_permutations);
    std::vector<int> partner;
    if (config.paired) {
      partner.resize(data.n0());
      for (int i = 0; i < data.n0(); ++i)
        partner[i] = data.n0() + (data.pairing.empty() ? i : data.pairing[i]);
    }
    std::vector<int> lab = rfit.labels;
    int count = 0;
    for (int b = 0; b < config.n_permutations; ++b) {
      VectorXd eps(n);
      if (config.paired) {
        for (int i = 0; i < data.n0(); ++i) {
          const bool flip = rng.uniform01() < 0.5;
          eps[i] = flip ? 1.0 : -1.0;
          eps[partner[i]] = -eps[i];
        }
      } else {
        for (int i = n - 1; i > 0; --i) {
          const int j = static_cast<int>(
              rng.next_u64() % static_cast<std::uint64_t>(i + 1));
          std::swap(lab[i], lab[j]);
        }
        for (int i = 0; i < n; ++i) eps[i] = lab[i] == 0 ? -1.0 : 1.0;
      }
      double tp;
      if (keep) {
        MatrixXd hpe_p = MatrixXd::Zero(p, q);
        for (int i = 0; i < n; ++i) hpe_p += eps[i] * G[i];
        hpe_p *= -(1.0 / n);
        const MatrixXd bp = hee.solve(hpe_p.transpose()).transpose();
        tp = statistic(eps, bp);
      } else {
        tp = statistic(eps, B);
      }
      res.perm_stats.push_back(tp);
      if (tp >= res.T) ++count;
    }
    res.p_permutation = (1.0 + count) / (1.0 + config.n_permutations);
  }
  return res;
}

std::string ScoreTestResult::to_json() const {
  nlohmann::json j;
  j["T"] = T;
  j["df"] = df;
  j["p_asymptotic"] = p_asymptotic;
  if (p_permutation >= 0.0)
    j["p_permutation"] = p_permutation;
  else
    j["p_permutation"] = nullptr;
  j["n_permutations"] = n_permutations;
  j["method_flags"] = {{"ridge_applied", ridge_applied},
                       {"paired", paired},
                       {"plug_in_permutation", plug_in_permutation},
                       {"fit_converged", fit_converged},
                       {"hessian_check", hessian_check}};
  return j.dump(2);
}

double bray_curtis(const VectorXd& x, const VectorXd& y) {
  const double num = (x - y).cwiseAbs().sum();
  const double den = (x + y).sum();
  return den > 0.0 ? num / den : 0.0;
}

MatrixXd bray_curtis_distance_matrix(
    const std::vector<RRFBObservation>& data) {
  const int n = static_cast<int>(data.size());
  std::vector<VectorXd> comp(n);
  for (int i = 0; i < n; ++i)
    comp[i] = data[i].x.array().square().matrix();
  MatrixXd D = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = bray_curtis(comp[i], comp[j]);
      D(i, j) = d;
      D(j, i) = d;
    }
  return D;
}

MatrixXd sqrt_euclidean_distance_matrix(
    const std::vector<RRFBObservation>& data) {
  const int n = static_cast<int>(data.size());
  MatrixXd D = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = (data[i].x - data[j].x).norm();
      D(i, j) = d;
      D(j, i) = d;
    }
  return D;
}

PermanovaResult permanova(const MatrixXd& D, const std::vector<int>& labels,
                          int n_perm, Rng& rng) {
  const int n = static_cast<int>(D.rows());
  if (D.cols() != n) throw std::invalid_argument("permanova: D not square");
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("permanova: labels length mismatch");
  std::vector<int> uniq(labels);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  const int g = static_cast<int>(uniq.size());
  if (g < 2) throw std::invalid_argument("permanova: need >= 2 groups");
  for (int gi = 0; gi < g; ++gi) {
    const long c = std::count(labels.begin(), labels.end(), uniq[gi]);
    if (c < 2) throw std::invalid_argument("permanova: group of size < 2");
  }

  const MatrixXd M = D.array().square().matrix();
  const double ss_total = M.sum() / (2.0 * n);

  auto fstat = [&](const std::vector<int>& lab) {
    double ss_w = 0.0;
    for (int gi = 0; gi < g; ++gi) {
      VectorXd v = VectorXd::Zero(n);
      int ng = 0;
      for (int i = 0; i < n; ++i)
        if (lab[i] == uniq[gi]) {
          v[i] = 1.0;
          ++ng;
        }
      ss_w += v.dot(M * v) / (2.0 * ng);
    }
    const double ss_b = std::max(ss_total - ss_w, 0.0);
    if (ss_w <= 0.0)
      return ss_b > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return (ss_b / (g - 1)) / (ss_w / (n - g));
  };

  PermanovaResult out;
  out.pseudo_F = fstat(labels);
  out.n_permutations = n_perm;
  if (n_perm > 0) {
    std::vector<int> lab = labels;
    int count = 0;
    for (int b = 0; b < n_perm; ++b) {
      for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_u64() %
                                       static_cast<std::uint64_t>(i + 1));
        std::swap(lab[i], lab[j]);
      }
      if (fstat(lab) >= out.pseudo_F) ++count;
    }
    out.p_value = (1.0 + count) / (1.0 + n_perm);
  }
  return out;
}

}  // namespace rrfb
