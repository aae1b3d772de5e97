// drsr: doubly robust sparse regression from the command line.
//
// Exit codes: 0 ok, 2 input/parse error, 3 solver failure, 4 configuration error.

#include "drsr/drsr.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>

#include <iostream>
#include <sstream>

namespace {

using namespace drsr;

constexpr int kExitInput = 2;
constexpr int kExitSolver = 3;
constexpr int kExitConfig = 4;

struct Common {
  std::string data;
  std::string response = "y";
  bool no_intercept = false;
  std::string out;
  std::uint64_t seed = 1;
  int jobs = 1;
  int starts = 500;
  int keep = 10;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--data", c.data, "CSV file with a header row")->required();
  cmd->add_option("--response", c.response, "response column name");
  cmd->add_flag("--no-intercept", c.no_intercept, "do not prepend an intercept column");
  cmd->add_option("--out", c.out, "output path (stdout when absent)");
  cmd->add_option("--seed", c.seed, "seed for the random elemental starts");
  cmd->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--starts", c.starts, "random elemental starts")->check(CLI::PositiveNumber);
  cmd->add_option("--keep", c.keep, "candidates iterated to convergence")->check(CLI::PositiveNumber);
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty())
    std::cout << content;
  else
    write_atomic(path, content);
}

/// A fraction in [0, 1) becomes floor(frac * n); anything else must be a count.
Index parse_trim(const std::string& s, Index n) {
  double v;
  if (!detail::parse_double(s, v) || v < 0.0) throw ConfigError("--trim: expected a fraction or count, got '" + s + "'");
  Index k;
  if (v < 1.0)
    k = static_cast<Index>(std::floor(v * static_cast<double>(n)));
  else if (v == std::floor(v))
    k = static_cast<Index>(v);
  else
    throw ConfigError("--trim: counts must be integers, got '" + s + "'");
  if (k >= n - 2) throw ConfigError("--trim: trimming count " + std::to_string(k) + " leaves fewer than 3 rows");
  return k;
}

std::vector<double> parse_list(const std::string& s, const char* flag) {
  std::vector<double> out;
  for (const auto& x : detail::split(s, ',')) {
    double v;
    if (!detail::parse_double(x, v)) throw ConfigError(std::string(flag) + ": cannot parse '" + x + "'");
    out.push_back(v);
  }
  return out;
}

IndexSet parse_units(const std::string& s, Index n, const char* flag) {
  IndexSet out;
  if (detail::trim(s).empty()) return out;
  for (const auto& x : detail::split(s, ',')) {
    double v;
    if (!detail::parse_double(x, v) || v != std::floor(v) || v < 0 || v >= static_cast<double>(n))
      throw ConfigError(std::string(flag) + ": invalid unit index '" + x + "'");
    out.push_back(static_cast<Index>(v));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

PipelineConfig base_config(const Common& c, Index k_n) {
  PipelineConfig cfg;
  cfg.step1.k_n = k_n;
  cfg.step1.seed = c.seed;
  cfg.step1.n_starts = c.starts;
  cfg.step1.n_keep = std::min(c.keep, c.starts);
  cfg.jobs = c.jobs;
  return cfg;
}

/// --lambda: a number, "auto", or a comma list tuned by the robust BIC.
void apply_lambda(PipelineConfig& cfg, const std::string& lambda) {
  if (lambda == "auto") {
    cfg.auto_lambda1 = true;
  } else if (lambda.find(',') != std::string::npos) {
    cfg.auto_lambda1 = true;
    cfg.lambda_values = parse_list(lambda, "--lambda");
  } else {
    double v;
    if (!detail::parse_double(lambda, v) || v < 0.0) throw ConfigError("--lambda: expected a value, a list or 'auto'");
    cfg.auto_lambda1 = false;
    cfg.step1.penalty.lambda = v;
  }
}

std::string manifest_json() {
  json m;
  m["program"] = "drsr";
  m["version"] = kVersion;
  m["compiler"] = __VERSION__;
  m["cxx_standard"] = static_cast<long>(__cplusplus);
  m["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  m["boost"] = BOOST_LIB_VERSION;
  PipelineConfig d;
  m["defaults"] = {{"n_starts", d.step1.n_starts},
                   {"n_keep", d.step1.n_keep},
                   {"lla_iters", d.step1.lla_iters},
                   {"scad_a", d.step1.penalty.a},
                   {"lambda_grid_size", d.lambda_grid_size},
                   {"lambda_ratio", d.lambda_ratio},
                   {"omega_upper_bound", kOmegaUpperBound},
                   {"step2_criterion", to_string(d.step2_tuning.criterion)},
                   {"proxy_initial", "log(n) * I"},
                   {"proxy_update", kProxyUpdateRule}};
  return m.dump(2) + "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Doubly robust sparse regression: feature selection with mean-shift and variance-inflation outliers"};
  app.require_subcommand(0, 1);
  bool version = false, manifest = false;
  app.add_flag("--version", version, "print the version and exit");
  app.add_flag("--manifest", manifest, "print build and default-configuration provenance as JSON");

  // fit
  Common fc;
  std::string method = "scadws", trim = "0.1", lambda = "auto", lambda2 = "auto", criterion = "hq";
  auto* fit_cmd = app.add_subcommand("fit", "fit a model and write the result document (JSON)");
  add_common(fit_cmd, fc);
  fit_cmd->add_option("--method", method, "scadws | scad2s | heur | lasso | sparselts | ols");
  fit_cmd->add_option("--trim", trim, "trimming fraction (< 1) or count");
  fit_cmd->add_option("--lambda", lambda, "selection penalty: value, comma list, or auto");
  fit_cmd->add_option("--lambda2", lambda2, "outlier penalty: value or auto");
  fit_cmd->add_option("--criterion", criterion, "outlier-threshold criterion: hq | bic");

  // tune
  Common tc;
  std::string t_method = "scadws", trim_grid = "0,0.05,0.1,0.15,0.2,0.25", lambda_grid_s = "auto", fix, t_trim = "0.1",
              t_lambda = "0";
  auto* tune_cmd = app.add_subcommand("tune", "robust BIC grid over trimming and penalty level (CSV)");
  add_common(tune_cmd, tc);
  tune_cmd->add_option("--method", t_method, "estimator evaluated at each grid point");
  tune_cmd->add_option("--trim-grid", trim_grid, "comma list of trimming fractions or counts");
  tune_cmd->add_option("--lambda-grid", lambda_grid_s, "comma list of penalty levels, or auto");
  tune_cmd->add_option("--fix", fix, "hold one parameter fixed: trim | lambda")->check(CLI::IsMember({"trim", "lambda"}));
  tune_cmd->add_option("--trim", t_trim, "fixed trimming when --fix trim");
  tune_cmd->add_option("--lambda", t_lambda, "fixed penalty level when --fix lambda");

  // simulate
  std::string scen, s_out, s_manifest, s_est;
  int s_reps = 0, s_jobs = 1;
  std::uint64_t s_seed = 0;
  bool s_seed_set = false, quiet = false;
  auto* sim_cmd = app.add_subcommand("simulate", "run a Monte Carlo scenario and write metric tables (CSV)");
  sim_cmd->add_option("--scenario", scen, "scenario file (key = value)")->required();
  sim_cmd->add_option("--estimators", s_est, "comma list: opt,ols,lasso,sparselts,heur,scadws,scad2s,scadopt");
  sim_cmd->add_option("--reps", s_reps, "replications (overrides the file)");
  auto* seed_opt = sim_cmd->add_option("--seed", s_seed, "seed (overrides the file)");
  sim_cmd->add_option("--jobs", s_jobs, "worker threads")->check(CLI::PositiveNumber);
  sim_cmd->add_option("--out", s_out, "metrics CSV path (stdout when absent)");
  sim_cmd->add_option("--manifest-out", s_manifest, "run manifest path (default: <out>.manifest.json)");
  sim_cmd->add_flag("--quiet", quiet, "no progress on stderr");

  // weights
  Common wc;
  std::string w_features = "all", w_msom, w_viom;
  bool plugin = false;
  double c1 = -1.0;
  auto* w_cmd = app.add_subcommand("weights", "estimate variance-inflation weights for declared units (CSV)");
  add_common(w_cmd, wc);
  w_cmd->add_option("--features", w_features, "comma list of predictor names, or all");
  w_cmd->add_option("--msom", w_msom, "comma list of mean-shift unit indices (0-based)");
  w_cmd->add_option("--viom", w_viom, "comma list of variance-inflation unit indices (0-based)");
  w_cmd->add_flag("--plugin", plugin, "closed-form weights (1 + gamma^2 c1 / sigma^2)^-1 instead of REML");
  w_cmd->add_option("--c1", c1, "plug-in constant (default 1/n)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (version) {
    std::cout << "drsr " << kVersion << "\n";
    return 0;
  }
  if (manifest) {
    std::cout << manifest_json();
    return 0;
  }

  if (fit_cmd->parsed()) {
    const NamedDataset nd = dataset_from_table(read_csv(fc.data), fc.response, !fc.no_intercept);
    const Method m = parse_method(method);
    PipelineConfig cfg = base_config(fc, m == Method::Lasso ? 0 : parse_trim(trim, nd.data.n()));
    apply_lambda(cfg, lambda);
    if (lambda2 != "auto") {
      double v;
      if (!detail::parse_double(lambda2, v) || v < 0.0) throw ConfigError("--lambda2: expected a value or 'auto'");
      cfg.auto_lambda2 = false;
      cfg.step2.penalty.lambda = v;
    }
    if (criterion == "hq")
      cfg.step2_tuning.criterion = Step2Criterion::HannanQuinn;
    else if (criterion == "bic")
      cfg.step2_tuning.criterion = Step2Criterion::BIC;
    else
      throw ConfigError("--criterion: expected hq or bic");
    const FitResult f = fit(nd.data, m, cfg);
    emit(fc.out, to_json(f, nd.feature_names).dump(2) + "\n");
    return 0;
  }

  if (tune_cmd->parsed()) {
    const NamedDataset nd = dataset_from_table(read_csv(tc.data), tc.response, !tc.no_intercept);
    const Index n = nd.data.n();
    const Method m = parse_method(t_method);
    std::vector<Index> kn;
    if (fix == "trim") {
      kn.push_back(parse_trim(t_trim, n));
    } else {
      for (const auto& x : detail::split(trim_grid, ',')) kn.push_back(parse_trim(x, n));
    }
    std::vector<double> lambdas;
    if (fix == "lambda") {
      lambdas = parse_list(t_lambda, "--lambda");
      if (lambdas.size() != 1) throw ConfigError("--lambda: a single value is required with --fix lambda");
    } else if (lambda_grid_s == "auto") {
      PipelineConfig probe = base_config(tc, *std::min_element(kn.begin(), kn.end()));
      const Dataset sd = Standardizer(nd.data).apply(nd.data);
      const double lmax = robust_lambda_max(sd, ProxyMatrices::log_n(n), probe.step1.k_n);
      lambdas = lambda_grid(lmax > 0.0 ? lmax : 1.0, probe.lambda_grid_size, probe.lambda_ratio);
    } else {
      lambdas = parse_list(lambda_grid_s, "--lambda-grid");
    }
    for (double l : lambdas)
      if (l < 0.0) throw ConfigError("--lambda-grid: values must be >= 0");
    auto est = [&](Index k, double l) {
      PipelineConfig cfg = base_config(tc, k);
      cfg.auto_lambda1 = false;
      cfg.step1.penalty.lambda = l;
      cfg.jobs = 1;
      return fit(nd.data, m, cfg);
    };
    const GridTable t = grid_search(n, kn, lambdas, est, tc.jobs);
    std::ostringstream os;
    write_grid_csv(os, t);
    emit(tc.out, os.str());
    const GridRow& b = t.best_row();
    std::cerr << "argmax: k_n=" << b.k_n << " lambda=" << b.lambda << " k_p=" << b.k_p << " bicr=" << b.bicr << "\n";
    return 0;
  }

  if (sim_cmd->parsed()) {
    ScenarioFile sf = read_scenario(scen);
    if (s_reps > 0) sf.scenario.reps = s_reps;
    s_seed_set = seed_opt->count() > 0;
    if (s_seed_set) sf.scenario.seed = s_seed;
    std::vector<std::string> est = sf.estimators;
    if (!s_est.empty()) est = detail::split(s_est, ',');
    if (est.empty()) est = known_estimators();
    for (const auto& e : est)
      if (std::find(known_estimators().begin(), known_estimators().end(), e) == known_estimators().end())
        throw ConfigError("--estimators: unknown estimator '" + e + "'");
    auto log = [&](const std::string& msg) {
      if (!quiet) std::cerr << msg << "\n";
    };
    const ScenarioReport rep = run_scenario(sf.scenario, est, s_jobs, log);
    for (const auto& e : rep.errors) std::cerr << "excluded replicate: " << e << "\n";
    std::ostringstream os;
    write_metrics_csv(os, rep);
    emit(s_out, os.str());

    const Scenario& s = sf.scenario;
    json mf;
    mf["program"] = "drsr";
    mf["version"] = kVersion;
    mf["scenario"] = {{"name", s.name}, {"id", s.id},       {"n_grid", s.n_grid},   {"p", s.p},
                      {"p0", s.p0},     {"snr", s.snr},     {"mv_frac", s.mv_frac}, {"mm_frac", s.mm_frac},
                      {"v", s.v},       {"mu_eps", s.mu_eps}, {"mu_x", s.mu_x},     {"reps", s.reps},
                      {"seed", s.seed}, {"beta", detail::vec_json(s.true_beta())},
                      {"n_starts", s.n_starts}, {"n_keep", s.n_keep}, {"lambda_grid_size", s.lambda_grid_size}};
    mf["estimators"] = est;
    mf["excluded_replicates"] = rep.errors.size();
    const std::string mpath = !s_manifest.empty() ? s_manifest : (!s_out.empty() ? s_out + ".manifest.json" : "");
    if (!mpath.empty()) write_atomic(mpath, mf.dump(2) + "\n");
    return 0;
  }

  if (w_cmd->parsed()) {
    const NamedDataset nd = dataset_from_table(read_csv(wc.data), wc.response, !wc.no_intercept);
    const Dataset& d = nd.data;
    const Index n = d.n();
    IndexSet feats;
    if (w_features == "all") {
      feats = iota_set(d.p());
    } else {
      if (d.intercept()) feats.push_back(0);
      for (const auto& name : detail::split(w_features, ',')) {
        const auto it = std::find(nd.feature_names.begin(), nd.feature_names.end(), name);
        if (it == nd.feature_names.end()) throw ConfigError("--features: unknown column '" + name + "'");
        feats.push_back(it - nd.feature_names.begin());
      }
      std::sort(feats.begin(), feats.end());
      feats.erase(std::unique(feats.begin(), feats.end()), feats.end());
    }
    const IndexSet msom = parse_units(w_msom, n, "--msom"), viom = parse_units(w_viom, n, "--viom");
    for (Index i : viom)
      if (std::binary_search(msom.begin(), msom.end(), i))
        throw ConfigError("unit " + std::to_string(i) + " is declared both --msom and --viom");
    std::ostringstream os;
    os.precision(17);
    os << "unit,omega,weight,at_bound\n";
    if (plugin) {
      IndexSet flagged = msom;
      flagged.insert(flagged.end(), viom.begin(), viom.end());
      std::sort(flagged.begin(), flagged.end());
      const IndexSet clean = complement(flagged, n);
      const MatrixXd Xs = select_cols(d.X(), feats);
      const WlsResult w = wls_fit(select_rows(Xs, clean), select_rows(d.y(), clean), VectorXd::Ones(static_cast<Index>(clean.size())));
      const double cc = c1 >= 0.0 ? c1 : 1.0 / static_cast<double>(n);
      for (Index i : viom) {
        const double g = d.y()(i) - Xs.row(i).dot(w.beta);
        const double wt = plugin_weight(g, w.sigma2, cc);
        os << i << ',' << (1.0 / wt - 1.0) << ',' << wt << ",0\n";
      }
    } else {
      const ViomWeights vw = estimate_viom_weights(d, feats, msom, viom, wc.jobs);
      for (size_t t = 0; t < vw.units.size(); ++t)
        os << vw.units[t] << ',' << vw.fits[t].omega_hat << ',' << vw.fits[t].weight << ','
           << (vw.fits[t].at_bound ? 1 : 0) << '\n';
    }
    emit(wc.out, os.str());
    return 0;
  }

  std::cout << app.help();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const drsr::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const drsr::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const drsr::ParameterError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return kExitSolver;
  }
}
