#include "rrfb/cli.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrfb/sim.hpp"

namespace rrfb {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

json fit_config_json(const FitConfig& fc) {
  return json{{"max_iter", fc.max_iter},
              {"rel_tol_loglik", fc.rel_tol_loglik},
              {"rel_tol_params", fc.rel_tol_params},
              {"estep_nodes", fc.estep_nodes},
              {"estep_K", fc.estep_K},
              {"ess_floor", fc.ess_floor},
              {"loglik_nodes", fc.loglik_nodes},
              {"loglik_K", fc.loglik_K},
              {"gamma_max_iter", fc.gamma_max_iter},
              {"lambda_max_iter", fc.lambda_max_iter},
              {"q_max_steps", fc.q_max_steps},
              {"c_gamma", fc.c_gamma},
              {"c_lambda", fc.c_lambda},
              {"cache_budget_doubles", fc.cache_budget_doubles},
              {"seed", fc.seed},
              {"threads", fc.threads}};
}

void apply_config_file(FitConfig& fc, const std::string& path) {
  if (path.empty()) return;
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  json j;
  in >> j;  // json::exception on malformed input
  for (const auto& [k, v] : j.items()) {
    if (k == "max_iter")
      fc.max_iter = v.get<int>();
    else if (k == "rel_tol_loglik")
      fc.rel_tol_loglik = v.get<double>();
    else if (k == "rel_tol_params")
      fc.rel_tol_params = v.get<double>();
    else if (k == "estep_nodes")
      fc.estep_nodes = v.get<int>();
    else if (k == "estep_K")
      fc.estep_K = v.get<long>();
    else if (k == "ess_floor")
      fc.ess_floor = v.get<long>();
    else if (k == "loglik_nodes")
      fc.loglik_nodes = v.get<int>();
    else if (k == "loglik_K")
      fc.loglik_K = v.get<long>();
    else if (k == "gamma_max_iter")
      fc.gamma_max_iter = v.get<int>();
    else if (k == "lambda_max_iter")
      fc.lambda_max_iter = v.get<int>();
    else if (k == "q_max_steps")
      fc.q_max_steps = v.get<int>();
    else if (k == "c_gamma")
      fc.c_gamma = v.get<double>();
    else if (k == "c_lambda")
      fc.c_lambda = v.get<double>();
    else if (k == "cache_budget_doubles")
      fc.cache_budget_doubles = v.get<long>();
    else
      throw std::invalid_argument("config: unknown key '" + k + "'");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& out_dir, const std::string& subcommand,
                    const std::vector<std::string>& argv,
                    const json& effective_config, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  json m;
  m["command"] = argv;
  m["subcommand"] = subcommand;
  m["config"] = effective_config;
  m["config_hash"] = fnv1a_hex(effective_config.dump());
  m["seed"] = seed;
  m["outputs"] = outputs;
  m["versions"] = {{"tool", kToolVersion}, {"manifest_schema", 1}};
  write_text(out_dir / (subcommand + "_manifest.json"), m.dump(2) + "\n");
}

// Maps file group labels to {0,1,...} by first appearance.
std::vector<int> integer_labels(const std::vector<std::string>& groups,
                                std::vector<std::string>* order = nullptr) {
  std::vector<std::string> seen;
  std::vector<int> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    int idx = -1;
    for (std::size_t k = 0; k < seen.size(); ++k)
      if (seen[k] == g) {
        idx = static_cast<int>(k);
        break;
      }
    if (idx < 0) {
      idx = static_cast<int>(seen.size());
      seen.push_back(g);
    }
    out.push_back(idx);
  }
  if (order) *order = seen;
  return out;
}

struct Global {
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
  std::string config_path;
  bool paper_scale = false;
  std::vector<std::string> argv;

  FitConfig fit_config() const {
    FitConfig fc;
    fc.seed = seed;
    fc.threads = threads;
    apply_config_file(fc, config_path);
    return fc;
  }
  fs::path out() const {
    fs::create_directories(out_dir);
    return fs::path(out_dir);
  }
};

int do_simulate(const Global& g, int p, int case_id, int n, int n2,
                double d) {
  const Scenario& sc = get_scenario(p, case_id);
  const FBParams theta0 = scenario_params(sc);
  const Rng base(g.seed, 0x51AULL);

  std::ostringstream csv;
  csv << "mode=sphere,group";
  for (int j = 1; j <= p; ++j) csv << ",x" << j;
  csv << "\n";
  int row = 0;
  auto emit = [&](const std::vector<RRFBObservation>& obs,
                  const char* label) {
    for (const auto& o : obs) {
      csv << row++ << "," << label;
      for (int j = 0; j < p; ++j) csv << "," << fmt_g(o.x[j]);
      csv << "\n";
    }
  };
  Rng r0 = base.split(0);
  emit(simulate_observations(theta0, n, r0), "g0");
  if (n2 > 0) {
    Rng r1 = base.split(1);
    emit(simulate_observations(perturbed_params(sc, d), n2, r1), "g1");
  }
  const fs::path dir = g.out();
  write_text(dir / "simulate.csv", csv.str());
  const json cfg = {{"p", p},   {"case", case_id}, {"n", n},
                    {"n2", n2}, {"d", d},          {"threads", g.threads}};
  write_manifest(dir, "simulate", g.argv, cfg, g.seed, {"simulate.csv"});
  std::cout << "wrote " << (dir / "simulate.csv").string() << "\n";
  return 0;
}

int do_zeros(const Global& g, int p, int case_id, int n_samples) {
  const Scenario& sc = get_scenario(p, case_id);
  Rng rng(g.seed, 0x2E05ULL);
  const VectorXd props = run_zero_table(sc, n_samples, rng);
  std::ostringstream csv;
  csv << "p,case,coordinate,proportion\n";
  for (int j = 0; j < p; ++j)
    csv << p << "," << case_id << "," << (j + 1) << "," << fmt_g(props[j])
        << "\n";
  const fs::path dir = g.out();
  write_text(dir / "zeros.csv", csv.str());
  const json cfg = {{"p", p},
                    {"case", case_id},
                    {"samples", n_samples},
                    {"threads", g.threads}};
  write_manifest(dir, "zeros", g.argv, cfg, g.seed, {"zeros.csv"});
  std::cout << "wrote " << (dir / "zeros.csv").string() << "\n";
  return 0;
}

int do_fit(const Global& g, const std::string& input, int p, int case_id,
           int n) {
  std::vector<RRFBObservation> data;
  json source;
  if (!input.empty()) {
    IngestResult ing = ingest_compositions(input);
    data = std::move(ing.observations);
    source = {{"input", input}, {"mode", ing.mode}};
  } else {
    const Scenario& sc = get_scenario(p, case_id);
    const Rng base(g.seed, 0x51AULL);
    Rng r0 = base.split(0);
    data = simulate_observations(scenario_params(sc), n, r0);
    source = {{"p", p}, {"case", case_id}, {"n", n}};
  }
  const FitConfig fc = g.fit_config();
  const FitResult res = fit(data, fc);
  const fs::path dir = g.out();
  write_text(dir / "fit.json", fit_result_to_json(res, g.seed) + "\n");
  json cfg = {{"source", source}, {"fit", fit_config_json(fc)}};
  write_manifest(dir, "fit", g.argv, cfg, g.seed, {"fit.json"});
  std::cout << "wrote " << (dir / "fit.json").string()
            << " (converged=" << (res.trace.converged ? "true" : "false")
            << ", loglik=" << fmt_g(res.trace.final_loglik) << ")\n";
  return 0;
}

int do_test(const Global& g, const std::string& input,
            const std::string& method, const std::string& distance,
            int perms, bool paired, bool full_perms) {
  const IngestResult ing = ingest_compositions(input);
  std::vector<std::string> label_order;
  const std::vector<int> labels = integer_labels(ing.groups, &label_order);
  json out;
  if (method == "score") {
    if (label_order.size() != 2)
      throw std::invalid_argument("score test needs exactly two groups, file has " +
                                  std::to_string(label_order.size()));
    TwoSampleData ts;
    for (std::size_t i = 0; i < ing.observations.size(); ++i)
      (labels[i] == 0 ? ts.group0 : ts.group1)
          .push_back(ing.observations[i]);
    ScoreTestConfig stc;
    stc.fit = g.fit_config();
    stc.n_permutations = perms;
    stc.paired = paired;
    stc.full_permutations = full_perms;
    Rng prng(g.seed, 0x7E57ULL);
    const ScoreTestResult res = score_test(ts, stc, prng);
    out = json::parse(res.to_json());
    out["method"] = "score";
    out["groups"] = label_order;
  } else if (method == "permanova") {
    MatrixXd D;
    if (distance == "bray-curtis")
      D = bray_curtis_distance_matrix(ing.observations);
    else if (distance == "hellinger")
      D = sqrt_euclidean_distance_matrix(ing.observations);
    else
      throw std::invalid_argument("unknown distance '" + distance +
                                  "' (use bray-curtis or hellinger)");
    Rng prng(g.seed, 0x7E57ULL);
    const PermanovaResult res = permanova(D, labels, perms, prng);
    out = {{"method", "permanova"},
           {"distance", distance},
           {"pseudo_F", res.pseudo_F},
           {"p_value", res.p_value},
           {"n_permutations", res.n_permutations},
           {"groups", label_order}};
  } else {
    throw std::invalid_argument("unknown method '" + method +
                                "' (use score or permanova)");
  }
  const fs::path dir = g.out();
  write_text(dir / "test.json", out.dump(2) + "\n");
  json cfg = {{"input", input},       {"method", method},
              {"distance", distance}, {"perms", perms},
              {"paired", paired},     {"full_perms", full_perms},
              {"fit", fit_config_json(g.fit_config())}};
  write_manifest(dir, "test", g.argv, cfg, g.seed, {"test.json"});
  std::cout << "wrote " << (dir / "test.json").string() << "\n";
  return 0;
}

int do_logscore(const Global& g, int p, int case_id, int n, int replicates,
                long B) {
  const Scenario& sc = get_scenario(p, case_id);
  const FitConfig fc = g.fit_config();
  Rng rng(g.seed, 0x106ULL);
  const std::vector<LogScoreResult> results =
      run_logscore(sc, n, replicates, B, fc, rng);

  std::ostringstream csv;
  csv << "replicate,n,B,delta_hat,mc_se,fit_converged\n";
  double sum = 0.0, sum2 = 0.0;
  int finite = 0;
  for (const auto& r : results) {
    csv << r.replicate << "," << r.n << "," << r.B << ","
        << fmt_g(r.delta_hat) << "," << fmt_g(r.mc_se) << ","
        << (r.fit_converged ? 1 : 0) << "\n";
    if (std::isfinite(r.delta_hat)) {
      sum += r.delta_hat;
      sum2 += r.delta_hat * r.delta_hat;
      ++finite;
    }
  }
  const double mean = finite > 0 ? sum / finite : 0.0;
  const double se =
      finite > 1 ? std::sqrt((sum2 - finite * mean * mean) /
                             (finite * (finite - 1.0)))
                 : 0.0;
  json summary = {{"p", p},
                  {"case", case_id},
                  {"n", n},
                  {"B", B},
                  {"replicates", replicates},
                  {"finite_replicates", finite},
                  {"mean_delta", mean},
                  {"se_mean_delta", se}};
  const fs::path dir = g.out();
  write_text(dir / "logscore.csv", csv.str());
  write_text(dir / "logscore_summary.json", summary.dump(2) + "\n");
  json cfg = {{"p", p},
              {"case", case_id},
              {"n", n},
              {"B", B},
              {"replicates", replicates},
              {"paper_scale", g.paper_scale},
              {"fit", fit_config_json(fc)}};
  write_manifest(dir, "logscore", g.argv, cfg, g.seed,
                 {"logscore.csv", "logscore_summary.json"});
  std::cout << "wrote " << (dir / "logscore.csv").string()
            << " (mean delta=" << fmt_g(mean) << ")\n";
  return 0;
}

std::vector<double> parse_d_grid(const std::string& spec) {
  if (spec == "auto") {
    std::vector<double> grid;
    for (int i = 0; i < 11; ++i) grid.push_back(-1.5 + 3.0 * i / 10.0);
    return grid;
  }
  std::vector<double> grid;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    std::size_t pos = 0;
    double v;
    try {
      v = std::stod(tok, &pos);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad --d-grid entry '" + tok + "'");
    }
    if (pos != tok.size() || !std::isfinite(v))
      throw std::invalid_argument("bad --d-grid entry '" + tok + "'");
    grid.push_back(v);
  }
  if (grid.empty()) throw std::invalid_argument("empty --d-grid");
  return grid;
}

int do_power(const Global& g, int p, int case_id, int n_per_group,
             int replicates, const std::string& d_grid_spec, double alpha,
             int rrfb_perms, int permanova_perms) {
  const Scenario& sc = get_scenario(p, case_id);
  PowerConfig pc;
  pc.d_grid = parse_d_grid(d_grid_spec);
  pc.n_per_group = n_per_group;
  pc.replicates = replicates;
  pc.alpha = alpha;
  pc.rrfb_permutations = rrfb_perms;
  pc.permanova_permutations = permanova_perms;
  pc.fit = g.fit_config();
  Rng rng(g.seed, 0x90EULL);
  const std::vector<PowerReplicate> reps = run_power_replicates(sc, pc, rng);
  const std::vector<PowerCell> cells = aggregate_power(reps, pc);

  std::ostringstream rep_csv;
  rep_csv << "d,replicate,p_rrfb_asym,p_rrfb_perm,p_permanova_bc,"
             "p_permanova_hellinger,fit_converged\n";
  for (const auto& r : reps)
    rep_csv << fmt_g(r.d) << "," << r.replicate << ","
            << fmt_g(r.p_rrfb_asym) << "," << fmt_g(r.p_rrfb_perm) << ","
            << fmt_g(r.p_permanova_bc) << "," << fmt_g(r.p_permanova_h)
            << "," << (r.fit_converged ? 1 : 0) << "\n";
  std::ostringstream csv;
  csv << "method,d,n_per_group,replicates,power\n";
  for (const auto& c : cells)
    csv << c.method << "," << fmt_g(c.d) << "," << c.n_per_group << ","
        << c.replicates << "," << fmt_g(c.power) << "\n";

  const fs::path dir = g.out();
  write_text(dir / "power.csv", csv.str());
  write_text(dir / "power_replicates.csv", rep_csv.str());
  json cfg = {{"p", p},
              {"case", case_id},
              {"n_per_group", n_per_group},
              {"replicates", replicates},
              {"d_grid", pc.d_grid},
              {"alpha", alpha},
              {"rrfb_permutations", rrfb_perms},
              {"permanova_permutations", permanova_perms},
              {"paper_scale", g.paper_scale},
              {"fit", fit_config_json(pc.fit)}};
  write_manifest(dir, "power", g.argv, cfg, g.seed,
                 {"power.csv", "power_replicates.csv"});
  std::cout << "wrote " << (dir / "power.csv").string() << "\n";
  return 0;
}

int do_rerun(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in)
    throw std::invalid_argument("cannot open manifest " + manifest_path);
  json m;
  in >> m;
  if (!m.contains("command") || !m["command"].is_array())
    throw std::invalid_argument("manifest has no command array");
  const std::vector<std::string> argv =
      m["command"].get<std::vector<std::string>>();
  return run_cli(argv);
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Spherical model for compositions with exact zeros"};
  app.name("rrfb_cli");
  app.require_subcommand(1);

  Global g;
  g.argv = args;
  app.add_option("--seed", g.seed, "RNG seed (default 0)");
  app.add_option("--threads", g.threads, "worker threads (default 1)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", g.out_dir, "output directory (default .)");
  app.add_option("--config", g.config_path,
                 "JSON file overriding estimation settings");
  app.add_flag("--paper-scale", g.paper_scale,
               "paper-scale replicate counts instead of desk-scale");

  auto* c_sim = app.add_subcommand("simulate", "draw samples from a scenario");
  c_sim->fallthrough();
  int sim_p = 3, sim_case = 1, sim_n = 100, sim_n2 = 0;
  double sim_d = 0.0;
  c_sim->add_option("--p", sim_p, "dimension (3, 5, or 10)");
  c_sim->add_option("--case", sim_case, "scenario case (1, 2, or 3)");
  c_sim->add_option("--n", sim_n, "samples for group g0")
      ->check(CLI::PositiveNumber);
  c_sim->add_option("--n2", sim_n2,
                    "samples for a second group from perturbed parameters");
  c_sim->add_option("--d", sim_d, "perturbation size for the second group");

  auto* c_zeros = app.add_subcommand("zeros", "component-wise zero frequencies");
  c_zeros->fallthrough();
  int z_p = 3, z_case = 1, z_samples = 10000;
  c_zeros->add_option("--p", z_p, "dimension (3, 5, or 10)");
  c_zeros->add_option("--case", z_case, "scenario case (1, 2, or 3)");
  c_zeros->add_option("--samples", z_samples, "number of draws")
      ->check(CLI::PositiveNumber);

  auto* c_fit = app.add_subcommand("fit", "estimate parameters, emit JSON");
  c_fit->fallthrough();
  std::string fit_input;
  int fit_p = 3, fit_case = 1, fit_n = 200;
  c_fit->add_option("--input", fit_input, "composition CSV to fit");
  c_fit->add_option("--p", fit_p, "scenario dimension when simulating");
  c_fit->add_option("--case", fit_case, "scenario case when simulating");
  c_fit->add_option("--n", fit_n, "samples to simulate when no --input")
      ->check(CLI::PositiveNumber);

  auto* c_test =
      app.add_subcommand("test", "two-group test on ingested compositions");
  c_test->fallthrough();
  std::string t_input, t_method = "score", t_distance = "bray-curtis";
  int t_perms = -1;
  bool t_paired = false, t_full = false;
  c_test->add_option("--input", t_input, "composition CSV with two groups")
      ->required();
  c_test->add_option("--method", t_method, "score or permanova");
  c_test->add_option("--distance", t_distance,
                     "permanova distance: bray-curtis or hellinger");
  c_test->add_option("--perms", t_perms,
                     "label permutations (default 499, paper scale 999)");
  c_test->add_flag("--paired", t_paired, "paired design (within-pair flips)");
  c_test->add_flag("--full-perms", t_full,
                   "recompute the information cross-block per permutation");

  auto* c_log =
      app.add_subcommand("logscore", "predictive log-score gap to the truth");
  c_log->fallthrough();
  int l_p = 3, l_case = 1, l_n = 100, l_reps = -1;
  long l_B = -1;
  c_log->add_option("--p", l_p, "dimension (3, 5, or 10)");
  c_log->add_option("--case", l_case, "scenario case (1, 2, or 3)");
  c_log->add_option("--n", l_n, "sample size per replicate")
      ->check(CLI::PositiveNumber);
  c_log->add_option("--replicates", l_reps,
                    "replicates (default 20, paper scale 100)");
  c_log->add_option("--B", l_B,
                    "fresh evaluation samples (default 2000, paper 10000)");

  auto* c_pow = app.add_subcommand("power", "two-group rejection rates");
  c_pow->fallthrough();
  int pw_p = 3, pw_case = 3, pw_n = 500, pw_reps = -1, pw_rrfb_perms = -1,
      pw_perm_perms = -1;
  double pw_alpha = 0.05;
  std::string pw_grid = "auto";
  c_pow->add_option("--p", pw_p, "dimension (3, 5, or 10)");
  c_pow->add_option("--case", pw_case, "scenario case (1, 2, or 3)");
  c_pow->add_option("--n", pw_n, "samples per group")
      ->check(CLI::PositiveNumber);
  c_pow->add_option("--replicates", pw_reps,
                    "replicates (default 20, paper scale 500)");
  c_pow->add_option("--d-grid", pw_grid,
                    "comma-separated shifts, or auto = 11 points on "
                    "[-1.5,1.5]");
  c_pow->add_option("--alpha", pw_alpha, "rejection level");
  c_pow->add_option("--rrfb-perms", pw_rrfb_perms,
                    "score-test permutations (default 199, paper 999)");
  c_pow->add_option("--permanova-perms", pw_perm_perms,
                    "permanova permutations (default 499, paper 999)");

  auto* c_rerun =
      app.add_subcommand("rerun", "re-execute the command from a manifest");
  std::string rerun_path;
  c_rerun->add_option("manifest", rerun_path, "manifest JSON path")
      ->required();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("rrfb_cli");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(c_sim))
      return do_simulate(g, sim_p, sim_case, sim_n, sim_n2, sim_d);
    if (app.got_subcommand(c_zeros))
      return do_zeros(g, z_p, z_case, z_samples);
    if (app.got_subcommand(c_fit))
      return do_fit(g, fit_input, fit_p, fit_case, fit_n);
    if (app.got_subcommand(c_test)) {
      const int perms = t_perms >= 0 ? t_perms : (g.paper_scale ? 999 : 499);
      return do_test(g, t_input, t_method, t_distance, perms, t_paired,
                     t_full);
    }
    if (app.got_subcommand(c_log)) {
      const int reps = l_reps > 0 ? l_reps : (g.paper_scale ? 100 : 20);
      const long B = l_B > 0 ? l_B : (g.paper_scale ? 10000 : 2000);
      return do_logscore(g, l_p, l_case, l_n, reps, B);
    }
    if (app.got_subcommand(c_pow)) {
      const int reps = pw_reps > 0 ? pw_reps : (g.paper_scale ? 500 : 20);
      const int rrfb_perms =
          pw_rrfb_perms >= 0 ? pw_rrfb_perms : (g.paper_scale ? 999 : 199);
      const int perm_perms =
          pw_perm_perms >= 0 ? pw_perm_perms : (g.paper_scale ? 999 : 499);
      return do_power(g, pw_p, pw_case, pw_n, reps, pw_grid, pw_alpha,
                      rrfb_perms, perm_perms);
    }
    if (app.got_subcommand(c_rerun)) return do_rerun(rerun_path);
    std::cerr << app.help();
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace rrfb
