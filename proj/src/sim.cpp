#include "rrfb/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "rrfb/geometry.hpp"

namespace rrfb {

namespace {

VectorXd vec(std::initializer_list<double> v) {
  VectorXd x(static_cast<long>(v.size()));
  int i = 0;
  for (double d : v) x[i++] = d;
  return x;
}

std::vector<Scenario> build_registry() {
  using Pairs = std::vector<std::pair<int, int>>;
  const Pairs pairs3 = {{1, 2}, {2, 3}};
  const Pairs pairs5 = {{1, 2}, {2, 3}, {4, 5}};
  const Pairs pairs10 = {{1, 2}, {2, 3}, {3, 4}, {5, 6}, {7, 8}, {9, 10}};
  std::vector<Scenario> reg;
  auto add = [&reg](int p, int c, VectorXd lam, VectorXd gam, bool rotated,
                    const Pairs& pr) {
    Scenario s;
    s.p = p;
    s.case_id = c;
    s.lambda = std::move(lam);
    s.gamma_raw = std::move(gam);
    s.gamma_rotated = rotated;
    s.givens_pairs = pr;
    s.givens_theta = 0.35;
    reg.push_back(std::move(s));
  };
  add(3, 1, vec({0, 2, 6}), vec({1, 2, 4}), false, pairs3);
  add(3, 2, vec({0, 2, 6}), vec({8, 2, 4}), false, pairs3);
  add(3, 3, vec({0, 1.5, 4}), vec({2.2, 2, 0.25}), true, pairs3);
  add(5, 1, vec({0, 2, 4, 6, 8}), vec({7, 6, 5, 5, 6}), false, pairs5);
  add(5, 2, vec({0, 4, 4.5, 8, 12}), vec({1, 2, 3, 4, 5}), false, pairs5);
  add(5, 3, vec({0, 1, 2.5, 4.5, 7}), vec({2.4, 2, 1.6, 0.35, 0.2}), true,
      pairs5);
  add(10, 1, vec({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}),
      vec({7, 6.5, 6, 5.5, 5, 6, 7.5, 8.5, 9, 9}), false, pairs10);
  add(10, 2, vec({0, 1, 2, 3, 4, 5, 6, 7, 7.05, 7.10}),
      vec({7, 6.5, 6, 5.5, 5, 6, 7.5, 8.5, 9, 9}), false, pairs10);
  add(10, 3, vec({0, 0.6, 1.2, 2, 3, 4.2, 5.5, 6.8, 8.2, 10}),
      vec({2.8, 2.5, 2.2, 1.9, 1.3, 1.0, 0.7, 0.35, 0.2, 0.1}), true,
      pairs10);
  return reg;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& raw, int lineno) {
  const std::string s = trim(raw);
  std::size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("row " + std::to_string(lineno) +
                             ": not a number: '" + raw + "'");
  }
  if (pos != s.size() || !std::isfinite(v))
    throw std::invalid_argument("row " + std::to_string(lineno) +
                             ": not a number: '" + raw + "'");
  return v;
}

}  // namespace

std::string Scenario::name() const {
  return "p" + std::to_string(p) + "_case" + std::to_string(case_id);
}

const std::vector<Scenario>& scenario_registry() {
  static const std::vector<Scenario> reg = build_registry();
  return reg;
}

const Scenario& get_scenario(int p, int case_id) {
  for (const auto& s : scenario_registry())
    if (s.p == p && s.case_id == case_id) return s;
  throw std::invalid_argument("unknown scenario p=" + std::to_string(p) +
                              " case=" + std::to_string(case_id));
}

FBParams scenario_params(const Scenario& sc) {
  FBParams params;
  params.Q = build_givens_Q(sc.givens_pairs, sc.givens_theta, sc.p);
  params.lambda = sc.lambda;
  params.gamma_tilde =
      sc.gamma_rotated ? sc.gamma_raw
                       : VectorXd(params.Q.transpose() * sc.gamma_raw);
  params.validate();
  return params;
}

int perturbed_coord_count(int p) {
  if (p == 3) return 1;
  if (p == 5) return 2;
  if (p == 10) return 3;
  throw std::invalid_argument("perturbed_coord_count: p must be 3, 5, or 10");
}

FBParams perturbed_params(const Scenario& sc, double d) {
  FBParams base = scenario_params(sc);
  const int k = perturbed_coord_count(sc.p);
  for (int i = sc.p - k; i < sc.p; ++i) base.gamma_tilde[i] -= d;
  return base;
}

std::vector<RRFBObservation> simulate_observations(const FBParams& params,
                                                   int n, Rng& rng) {
  RRFBSampler sampler(params);
  std::vector<RRFBObservation> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sampler.sample(rng));
  return out;
}

VectorXd run_zero_table(const Scenario& sc, int n_samples, Rng& rng) {
  const FBParams params = scenario_params(sc);
  RRFBSampler sampler(params);
  VectorXd counts = VectorXd::Zero(sc.p);
  for (int s = 0; s < n_samples; ++s) {
    const RRFBObservation obs = sampler.sample(rng);
    for (int j = 0; j < sc.p; ++j)
      if (obs.x[j] == 0.0) counts[j] += 1.0;
  }
  return counts / n_samples;
}

std::vector<LogScoreResult> run_logscore(const Scenario& sc, int n,
                                         int replicates, long B,
                                         const FitConfig& fit_config,
                                         Rng& rng) {
  if (B < 1000)
    throw std::invalid_argument("run_logscore: B must be at least 1000");
  const FBParams truth = scenario_params(sc);
  std::vector<LogScoreResult> out(replicates);
  for (int rep = 0; rep < replicates; ++rep) {
    const Rng rep_rng = rng.split(static_cast<std::uint64_t>(rep));
    LogScoreResult r;
    r.replicate = rep;
    r.n = n;
    r.B = B;

    Rng sim_rng = rep_rng.split(1);
    const std::vector<RRFBObservation> data =
        simulate_observations(truth, n, sim_rng);

    FitConfig fc = fit_config;
    fc.seed = rep_rng.split(2).next_u64();
    FBParams hat;
    bool ok = true;
    try {
      FitResult fres = fit(data, fc);
      hat = std::move(fres.params);
      r.fit_converged = fres.trace.converged;
    } catch (const std::exception&) {
      ok = false;
    }
    if (!ok) {
      r.fit_converged = false;
      r.delta_hat = std::numeric_limits<double>::quiet_NaN();
      r.mc_se = std::numeric_limits<double>::quiet_NaN();
      out[rep] = r;
      continue;
    }

    Rng fresh_rng = rep_rng.split(3);
    std::vector<RRFBObservation> fresh =
        simulate_observations(truth, static_cast<int>(B), fresh_rng);
    const LoglikContext ctx(std::move(fresh),
                            LoglikScheme{fc.loglik_nodes, fc.loglik_K},
                            rep_rng.split(4).next_u64(),
                            fc.cache_budget_doubles, fc.threads);
    VectorXd under_truth, under_fit;
    ctx.total(truth, &under_truth);
    ctx.total(hat, &under_fit);
    const VectorXd diff = under_truth - under_fit;
    r.delta_hat = diff.mean();
    r.mc_se = B > 1 ? std::sqrt((diff.array() - r.delta_hat).square().sum() /
                                (static_cast<double>(B) * (B - 1.0)))
                    : 0.0;
    out[rep] = r;
  }
  return out;
}

std::vector<PowerReplicate> run_power_replicates(const Scenario& sc,
                                                 const PowerConfig& config,
                                                 Rng& rng) {
  const FBParams theta0 = scenario_params(sc);
  std::vector<PowerReplicate> out;
  out.reserve(config.d_grid.size() * config.replicates);
  for (std::size_t di = 0; di < config.d_grid.size(); ++di) {
    const double d = config.d_grid[di];
    const FBParams theta1 = perturbed_params(sc, d);
    const Rng d_rng = rng.split(di);
    for (int rep = 0; rep < config.replicates; ++rep) {
      const Rng rep_rng = d_rng.split(static_cast<std::uint64_t>(rep));
      PowerReplicate pr;
      pr.d = d;
      pr.replicate = rep;

      Rng g0 = rep_rng.split(1);
      Rng g1 = rep_rng.split(2);
      TwoSampleData ts;
      ts.group0 = simulate_observations(theta0, config.n_per_group, g0);
      ts.group1 = simulate_observations(theta1, config.n_per_group, g1);

      ScoreTestConfig stc;
      stc.fit = config.fit;
      stc.fit.seed = rep_rng.split(3).next_u64();
      stc.n_permutations = config.rrfb_permutations;
      Rng perm_rng = rep_rng.split(4);
      try {
        const ScoreTestResult st = score_test(ts, stc, perm_rng);
        pr.p_rrfb_asym = st.p_asymptotic;
        pr.p_rrfb_perm = st.p_permutation;
        pr.fit_converged = st.fit_converged;
      } catch (const std::exception&) {
        pr.p_rrfb_asym = std::numeric_limits<double>::quiet_NaN();
        pr.p_rrfb_perm = std::numeric_limits<double>::quiet_NaN();
        pr.fit_converged = false;
      }

      std::vector<RRFBObservation> pooled = ts.group0;
      pooled.insert(pooled.end(), ts.group1.begin(), ts.group1.end());
      std::vector<int> labels(ts.group0.size(), 0);
      labels.insert(labels.end(), ts.group1.size(), 1);
      Rng bc_rng = rep_rng.split(5);
      Rng h_rng = rep_rng.split(6);
      pr.p_permanova_bc =
          permanova(bray_curtis_distance_matrix(pooled), labels,
                    config.permanova_permutations, bc_rng)
              .p_value;
      pr.p_permanova_h =
          permanova(sqrt_euclidean_distance_matrix(pooled), labels,
                    config.permanova_permutations, h_rng)
              .p_value;
      out.push_back(pr);
    }
  }
  return out;
}

std::vector<PowerCell> aggregate_power(const std::vector<PowerReplicate>& reps,
                                       const PowerConfig& config) {
  std::vector<PowerCell> cells;
  const bool with_perm = config.rrfb_permutations > 0;
  for (std::size_t di = 0; di < config.d_grid.size(); ++di) {
    const std::size_t lo = di * config.replicates;
    auto fraction = [&](auto pick) {
      int hits = 0;
      for (int r = 0; r < config.replicates; ++r) {
        const double pv = pick(reps[lo + r]);
        if (pv >= 0.0 && pv < config.alpha) ++hits;
      }
      return static_cast<double>(hits) / config.replicates;
    };
    auto push = [&](const std::string& method, double power) {
      PowerCell c;
      c.d = config.d_grid[di];
      c.method = method;
      c.n_per_group = config.n_per_group;
      c.replicates = config.replicates;
      c.power = power;
      cells.push_back(std::move(c));
    };
    push("rrfb_asym",
         fraction([](const PowerReplicate& r) { return r.p_rrfb_asym; }));
    if (with_perm)
      push("rrfb_perm",
           fraction([](const PowerReplicate& r) { return r.p_rrfb_perm; }));
    push("permanova_bc",
         fraction([](const PowerReplicate& r) { return r.p_permanova_bc; }));
    push("permanova_hellinger",
         fraction([](const PowerReplicate& r) { return r.p_permanova_h; }));
  }
  return cells;
}

std::vector<PowerCell> run_power(const Scenario& sc,
                                 const PowerConfig& config, Rng& rng) {
  return aggregate_power(run_power_replicates(sc, config, rng), config);
}

IngestResult ingest_compositions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty file: " + path);
  std::vector<std::string> header = split_csv(trim(line));
  if (header.size() < 4)
    throw std::invalid_argument(
        "header must be mode=simplex|sphere,group,<at least two components>");
  IngestResult res;
  const std::string mode_cell = trim(header[0]);
  if (mode_cell == "mode=simplex")
    res.mode = "simplex";
  else if (mode_cell == "mode=sphere")
    res.mode = "sphere";
  else
    throw std::invalid_argument(
        "first header cell must be mode=simplex or mode=sphere, got '" +
        mode_cell + "'");
  if (trim(header[1]) != "group")
    throw std::invalid_argument("second header cell must be 'group'");
  for (std::size_t j = 2; j < header.size(); ++j)
    res.columns.push_back(trim(header[j]));
  const int p = static_cast<int>(res.columns.size());

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty()) continue;
    const std::vector<std::string> cells = split_csv(t);
    if (static_cast<int>(cells.size()) != p + 2)
      throw std::invalid_argument("row " + std::to_string(lineno) +
                               ": expected " + std::to_string(p + 2) +
                               " fields, got " +
                               std::to_string(cells.size()));
    VectorXd v(p);
    for (int j = 0; j < p; ++j) v[j] = parse_number(cells[j + 2], lineno);
    if (v.minCoeff() < 0.0)
      throw std::invalid_argument("row " + std::to_string(lineno) +
                               ": negative entry");
    if (res.mode == "simplex") {
      const double s = v.sum();
      if (std::abs(s - 1.0) > 1e-6)
        throw std::invalid_argument("row " + std::to_string(lineno) +
                                 ": simplex row sums to " +
                                 std::to_string(s));
      v /= s;
      v = v.cwiseSqrt();
    } else {
      const double nrm = v.norm();
      if (std::abs(nrm - 1.0) > 1e-6)
        throw std::invalid_argument("row " + std::to_string(lineno) +
                                 ": sphere row has norm " +
                                 std::to_string(nrm));
      v /= nrm;
    }
    res.observations.push_back(RRFBObservation{v, decompose(v)});
    res.groups.push_back(trim(cells[1]));
  }
  if (res.observations.empty())
    throw std::invalid_argument("no data rows in " + path);
  return res;
}

}  // namespace rrfb
