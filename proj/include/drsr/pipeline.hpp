#pragma once

// Full estimators: SCADws (steps 1 -> 2 -> 3), SCAD2s (two passes with proxy
// updates), the heuristic variant, and the lasso / sparseLTS / OLS special cases.

#include "drsr/linalg.hpp"
#include "drsr/step1.hpp"
#include "drsr/step2.hpp"
#include "drsr/step3.hpp"
#include "drsr/tuning.hpp"
#include "drsr/types.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace drsr {

struct PipelineConfig {
  Step1Config step1;          // k_n, penalty (lambda used when auto_lambda1 is off), search settings
  Step2Config step2;          // gamma penalty family; lambda used when auto_lambda2 is off
  Step2Tuning step2_tuning;
  bool auto_lambda1 = true;
  int lambda_grid_size = 15;
  double lambda_ratio = 1e-3;
  std::vector<double> lambda_values;  // explicit grid; overrides the automatic one when nonempty
  bool auto_lambda2 = true;
  bool standardize = true;
  int jobs = 1;
};

// ---------------------------------------------------------------------------
// Stage labels on errors

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  const std::string pre = std::string(stage) + ": ";
  auto label = [&](const char* what) {
    const std::string m = what;
    return m.rfind(pre, 0) == 0 ? m : pre + m;
  };
  try {
    return f();
  } catch (const RankDeficientError& e) {
    throw RankDeficientError(label(e.message().c_str()), e.columns());
  } catch (const ParameterError& e) {
    throw ParameterError(label(e.what()));
  } catch (const ConvergenceError& e) {
    throw ConvergenceError(label(e.what()));
  } catch (const NumericalError& e) {
    throw NumericalError(label(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Column standardization for the selection step

class Standardizer {
 public:
  explicit Standardizer(const Dataset& data) : intercept_(data.intercept()) {
    const Index p = data.p();
    center_ = VectorXd::Zero(p);
    scale_ = VectorXd::Ones(p);
    const double n = static_cast<double>(data.n());
    for (Index j = intercept_ ? 1 : 0; j < p; ++j) {
      const double m = intercept_ ? data.X().col(j).mean() : 0.0;
      const double ss = (data.X().col(j).array() - m).square().sum() / n;
      center_(j) = m;
      if (ss > 0.0) scale_(j) = std::sqrt(ss);
    }
  }

  Dataset apply(const Dataset& data) const {
    MatrixXd X = data.X();
    for (Index j = intercept_ ? 1 : 0; j < X.cols(); ++j) X.col(j) = (X.col(j).array() - center_(j)) / scale_(j);
    return Dataset(std::move(X), data.y(), intercept_);
  }

  VectorXd back(const VectorXd& b) const {
    VectorXd out = b.cwiseQuotient(scale_);
    if (intercept_) {
      for (Index j = 1; j < b.size(); ++j) out(0) -= out(j) * center_(j);
    }
    return out;
  }

 private:
  bool intercept_;
  VectorXd center_, scale_;
};

// ---------------------------------------------------------------------------
// Step 1 with optional lambda tuning

struct Step1Outcome {
  Step1Result res;
  double lambda = 0.0;
  double rss_h = 0.0;  // unweighted trimmed RSS on the original scale
  std::optional<GridTable> table;
};

inline Step1Outcome run_step1_at(const Dataset& data, const ProxyMatrices& proxy, Step1Config c1, double lambda,
                                 bool standardize, int jobs) {
  c1.penalty.lambda = lambda;
  c1.jobs = jobs;
  Step1Outcome out;
  out.lambda = lambda;
  if (standardize) {
    const Standardizer st(data);
    out.res = solve_step1(st.apply(data), proxy, c1);
    out.res.beta = st.back(out.res.beta);
  } else {
    out.res = solve_step1(data, proxy, c1);
  }
  const VectorXd r = data.y() - data.X() * out.res.beta;
  for (Index i : out.res.retained) out.rss_h += r(i) * r(i);
  return out;
}

inline Step1Outcome tuned_step1(const Dataset& data, const ProxyMatrices& proxy, const PipelineConfig& cfg) {
  cfg.step1.validate(data.n());
  if (!cfg.auto_lambda1)
    return run_step1_at(data, proxy, cfg.step1, cfg.step1.penalty.lambda, cfg.standardize, cfg.jobs);
  std::vector<double> grid = cfg.lambda_values;
  if (grid.empty()) {
    const Dataset sd = cfg.standardize ? Standardizer(data).apply(data) : data;
    const double lmax = robust_lambda_max(sd, proxy, cfg.step1.k_n);
    grid = lambda_grid(lmax > 0.0 ? lmax : 1.0, cfg.lambda_grid_size, cfg.lambda_ratio);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<std::optional<Step1Outcome>> keep(grid.size());
  auto est = [&](Index, double lambda) {
    const size_t pos = static_cast<size_t>(std::lower_bound(grid.begin(), grid.end(), lambda) - grid.begin());
    Step1Outcome o = run_step1_at(data, proxy, cfg.step1, lambda, cfg.standardize, 1);
    FitResult f;
    f.support = o.res.support;
    f.rss_h = o.rss_h;
    f.sigma2_hat = o.rss_h / static_cast<double>(std::max<Index>(1, data.n() - cfg.step1.k_n - static_cast<Index>(f.support.size())));
    keep[pos] = std::move(o);
    return f;
  };
  GridTable t = grid_search(data.n(), {cfg.step1.k_n}, grid, est, cfg.jobs);
  Step1Outcome best = std::move(*keep[static_cast<size_t>(t.best)]);
  best.table = std::move(t);
  return best;
}

// ---------------------------------------------------------------------------
// Shared steps 2 and 3

namespace detail {

struct ViomOutcome {
  Step2Result s2;
  double lambda2 = 0.0;
};

inline FitResult finish_with_weights(const Dataset& data, const Step1Outcome& s1, const ViomOutcome& v, int jobs) {
  const Index n = data.n();
  const ViomWeights vw =
      in_stage("step3", [&] { return estimate_viom_weights(data, s1.res.support, s1.res.msom, v.s2.viom, jobs); });
  VectorXd weights = VectorXd::Ones(n);
  for (Index i : s1.res.msom) weights(i) = 0.0;
  VectorXd omega = VectorXd::Zero(n);
  IndexSet viom, deflagged, at_bound;
  for (size_t t = 0; t < vw.units.size(); ++t) {
    const Index i = vw.units[t];
    const SingleWeight& sw = vw.fits[t];
    if (sw.omega_hat == 0.0) {
      deflagged.push_back(i);
      continue;
    }
    viom.push_back(i);
    omega(i) = sw.omega_hat;
    weights(i) = sw.weight;
    if (sw.at_bound) at_bound.push_back(i);
  }
  FitResult fr = in_stage("refit", [&] { return refit_with_weights(data, s1.res.support, s1.res.msom, weights); });
  fr.omega_hat = omega;
  fr.outliers.viom = viom;
  for (Index i : viom) fr.outliers.gamma_hat(i) = v.s2.gamma_hat(i);
  fr.outliers.phi_hat = s1.res.phi_hat;
  fr.deflagged = deflagged;
  fr.weight_at_bound = at_bound;
  fr.objective_trace = s1.res.trace_l1;
  fr.objective_trace.insert(fr.objective_trace.end(), s1.res.trace_lla.begin(), s1.res.trace_lla.end());
  fr.step2_trace = v.s2.trace;
  fr.k_n = static_cast<Index>(s1.res.msom.size());
  fr.tuning.lambda1 = s1.lambda;
  fr.tuning.lambda2 = v.lambda2;
  fr.tuning.step1_csteps = s1.res.csteps;
  fr.tuning.step2_iterations = v.s2.sweeps;
  fr.step1_objective = s1.res.objective;
  fr.rss_h = s1.rss_h;
  return fr;
}

}  // namespace detail

inline FitResult fit_scadws(const Dataset& data, const PipelineConfig& cfg, const ProxyMatrices& proxies) {
  const Index n = data.n();
  proxies.validate(n);
  const Step1Outcome s1 = in_stage("step1", [&] { return tuned_step1(data, proxies, cfg); });
  const Index k_n = static_cast<Index>(s1.res.msom.size());
  detail::ViomOutcome v = in_stage("step2", [&] {
    const MatrixXd Xbar = build_augmented_design(data, s1.res.support, s1.res.msom);
    const GammaSolver g(Xbar, data.y(), s1.res.msom);
    const VectorXd ridge = proxies.m_gamma.cwiseInverse();
    detail::ViomOutcome out;
    if (cfg.auto_lambda2) {
      const double mult = static_cast<double>(n - k_n);
      Step2Selection sel = select_step2(g, ridge, k_n, cfg.step2, cfg.step2_tuning,
                                        [&](double thr) { return 2.0 * thr / mult; });
      out.s2 = std::move(sel.best);
      out.lambda2 = sel.lambda;
    } else {
      out.s2 = solve_step2(g, ridge, k_n, cfg.step2);
      out.lambda2 = cfg.step2.penalty.lambda;
    }
    return out;
  });
  FitResult fr = detail::finish_with_weights(data, s1, v, cfg.jobs);
  fr.method = "scadws";
  fr.tuning.a = cfg.step1.penalty.a;
  fr.proxies = proxies;
  fr.proxy_rule = "initial";
  return fr;
}

inline const char* kProxyUpdateRule =
    "m_r[i] <- w[i] (1 for MSOM units); m_gamma[i] <- omega[i] for VIOM units with omega > 0, log(n) otherwise";

/// Proxies for the second pass, built from a first-pass fit.
inline ProxyMatrices update_proxies(const FitResult& fit, Index n) {
  ProxyMatrices p = ProxyMatrices::log_n(n);
  p.m_r = fit.weights;
  for (Index i : fit.outliers.msom) p.m_r(i) = 1.0;
  for (Index i : fit.outliers.viom)
    if (fit.omega_hat(i) > 0.0) p.m_gamma(i) = fit.omega_hat(i);
  return p;
}

inline FitResult fit_scad2s(const Dataset& data, const PipelineConfig& cfg, const ProxyMatrices& proxies) {
  const FitResult first = fit_scadws(data, cfg, proxies);
  const ProxyMatrices upd = update_proxies(first, data.n());
  FitResult second = fit_scadws(data, cfg, upd);
  second.method = "scad2s";
  second.proxy_rule = kProxyUpdateRule;
  second.previous_objectives = {first.step1_objective};
  return second;
}

inline FitResult fit_scad2s(const Dataset& data, const PipelineConfig& cfg) {
  return fit_scad2s(data, cfg, ProxyMatrices::log_n(data.n()));
}

inline FitResult fit_scadws(const Dataset& data, const PipelineConfig& cfg) {
  return fit_scadws(data, cfg, ProxyMatrices::log_n(data.n()));
}

/// Heuristic variant: unweighted step 1, adaptive lasso on gamma with beta
/// unpenalized (weights from the reduced-data OLS residuals), then step 3.
inline FitResult fit_heur(const Dataset& data, const PipelineConfig& cfg) {
  const Index n = data.n();
  const ProxyMatrices ident = ProxyMatrices::identity(n);
  const Step1Outcome s1 = in_stage("step1", [&] { return tuned_step1(data, ident, cfg); });
  const Index k_n = static_cast<Index>(s1.res.msom.size());
  detail::ViomOutcome v = in_stage("step2", [&] {
    const MatrixXd Xbar = build_augmented_design(data, s1.res.support, s1.res.msom);
    const GammaSolver g(Xbar, data.y(), s1.res.msom);
    const VectorXd e = g.project(data.y());
    Step2Config c2 = cfg.step2;
    c2.penalty.family = PenaltyFamily::AdaptiveL1;
    c2.penalty.adaptive_weights = (e.array().abs() + 1e-6).inverse().matrix();
    const VectorXd ridge = VectorXd::Zero(n);
    const double mult = static_cast<double>(n - k_n);
    detail::ViomOutcome out;
    if (cfg.auto_lambda2) {
      Step2Selection sel = select_step2(g, ridge, k_n, c2, cfg.step2_tuning,
                                        [&](double thr) { return 2.0 * thr * thr / mult; });
      out.s2 = std::move(sel.best);
      out.lambda2 = sel.lambda;
    } else {
      out.s2 = solve_step2(g, ridge, k_n, c2);
      out.lambda2 = c2.penalty.lambda;
    }
    return out;
  });
  FitResult fr = detail::finish_with_weights(data, s1, v, cfg.jobs);
  fr.method = "heur";
  fr.tuning.a = cfg.step1.penalty.a;
  fr.proxies = ident;
  fr.proxy_rule = "identity";
  return fr;
}

/// Step 1 alone under the L1 penalty and identity proxy: the lasso when
/// k_n = 0, a sparseLTS-type estimator otherwise.
inline FitResult fit_step1_only(const Dataset& data, const PipelineConfig& cfg, const char* name) {
  const Index n = data.n();
  PipelineConfig c = cfg;
  c.step1.penalty.family = PenaltyFamily::L1;
  const ProxyMatrices ident = ProxyMatrices::identity(n);
  const Step1Outcome s1 = in_stage("step1", [&] { return tuned_step1(data, ident, c); });
  FitResult fr;
  fr.method = name;
  fr.beta = s1.res.beta;
  fr.support = s1.res.support;
  fr.outliers.msom = s1.res.msom;
  fr.outliers.phi_hat = s1.res.phi_hat;
  fr.outliers.gamma_hat = VectorXd::Zero(n);
  fr.omega_hat = VectorXd::Zero(n);
  fr.weights = VectorXd::Ones(n);
  for (Index i : s1.res.msom) fr.weights(i) = 0.0;
  const Index dof = n - static_cast<Index>(s1.res.msom.size()) - static_cast<Index>(fr.support.size());
  fr.sigma2_hat = dof > 0 ? s1.rss_h / static_cast<double>(dof) : std::numeric_limits<double>::quiet_NaN();
  fr.objective_trace = s1.res.trace_l1;
  fr.k_n = static_cast<Index>(s1.res.msom.size());
  fr.tuning.lambda1 = s1.lambda;
  fr.tuning.step1_csteps = s1.res.csteps;
  fr.step1_objective = s1.res.objective;
  fr.rss_h = s1.rss_h;
  fr.proxies = ident;
  fr.proxy_rule = "identity";
  return fr;
}

inline FitResult fit_lasso(const Dataset& data, PipelineConfig cfg) {
  cfg.step1.k_n = 0;
  return fit_step1_only(data, cfg, "lasso");
}

inline FitResult fit_sparselts(const Dataset& data, const PipelineConfig& cfg) {
  return fit_step1_only(data, cfg, "sparselts");
}

/// Unpenalized fit on every column with the given weights (all ones: OLS).
inline FitResult fit_weighted_full(const Dataset& data, const VectorXd& weights, const IndexSet& support,
                                   const IndexSet& msom, const char* name) {
  FitResult fr = refit_with_weights(data, support, msom, weights);
  fr.method = name;
  const VectorXd r = data.y() - data.X() * fr.beta;
  fr.rss_h = 0.0;
  for (Index i : complement(msom, data.n())) fr.rss_h += r(i) * r(i);
  fr.proxies = ProxyMatrices::identity(data.n());
  fr.proxy_rule = "none";
  return fr;
}

inline FitResult fit_ols(const Dataset& data) {
  return fit_weighted_full(data, VectorXd::Ones(data.n()), iota_set(data.p()), {}, "ols");
}

enum class Method { SCADws, SCAD2s, Heur, Lasso, SparseLTS, OLS };

inline Method parse_method(const std::string& s) {
  if (s == "scadws") return Method::SCADws;
  if (s == "scad2s") return Method::SCAD2s;
  if (s == "heur") return Method::Heur;
  if (s == "lasso") return Method::Lasso;
  if (s == "sparselts") return Method::SparseLTS;
  if (s == "ols") return Method::OLS;
  throw ParameterError("unknown method '" + s + "' (expected scadws, scad2s, heur, lasso, sparselts or ols)");
}

inline FitResult fit(const Dataset& data, Method m, const PipelineConfig& cfg) {
  switch (m) {
    case Method::SCADws: return fit_scadws(data, cfg);
    case Method::SCAD2s: return fit_scad2s(data, cfg);
    case Method::Heur: return fit_heur(data, cfg);
    case Method::Lasso: return fit_lasso(data, cfg);
    case Method::SparseLTS: return fit_sparselts(data, cfg);
    case Method::OLS: return fit_ols(data);
  }
  throw ParameterError("unknown method");
}

}  // namespace drsr
