#pragma once

// Monte Carlo harness: data generation with variance-inflation and mean-shift
// contamination, performance metrics, and scenario runs.

#include "drsr/pipeline.hpp"
#include "drsr/rng.hpp"
#include "drsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace drsr {

struct Scenario {
  std::string name = "scenario";
  std::uint64_t id = 0;
  std::vector<Index> n_grid{100};
  Index p = 2;            // columns of X including the intercept
  Index p0 = 2;           // active columns including the intercept
  VectorXd beta;          // length p; defaults to 2 on the first p0 entries
  double snr = 3.0;
  double mv_frac = 0.0;
  double mm_frac = 0.0;
  double v = 10.0;
  double mu_eps = 0.0;
  double mu_x = 0.0;
  int reps = 30;
  std::uint64_t seed = 1;
  // Estimator settings used by run_scenario.
  int n_starts = 500;
  int n_keep = 10;
  int lambda_grid_size = 15;

  VectorXd true_beta() const {
    if (beta.size() == p) return beta;
    VectorXd b = VectorXd::Zero(p);
    b.head(p0).setConstant(2.0);
    return b;
  }

  void validate() const {
    if (n_grid.empty()) throw ParameterError("scenario: empty n grid");
    for (Index n : n_grid)
      if (n < 5) throw ParameterError("scenario: every n must be >= 5");
    if (p < 1 || p0 < 1 || p0 > p) throw ParameterError("scenario: need 1 <= p0 <= p");
    if (beta.size() != 0 && beta.size() != p) throw ParameterError("scenario: beta must have length p");
    if (!(snr > 0.0)) throw ParameterError("scenario: snr must be > 0");
    if (mv_frac < 0.0 || mm_frac < 0.0 || mv_frac + mm_frac >= 1.0)
      throw ParameterError("scenario: contamination fractions must be >= 0 and sum below 1");
    if (!(v > 1.0)) throw ParameterError("scenario: inflation factor v must exceed 1");
    if (reps < 1) throw ParameterError("scenario: reps must be >= 1");
    if (n_starts < 1 || n_keep < 1 || n_keep > n_starts || lambda_grid_size < 1)
      throw ParameterError("scenario: invalid estimator settings");
  }
};

struct Truth {
  VectorXd beta;
  IndexSet support;
  OutlierSets outliers;
  VectorXd weights;   // 1/v for VIOM, 0 for MSOM, 1 otherwise
  double sigma2 = 0.0;
};

struct Replicate {
  Dataset data;
  Truth truth;
};

/// Noise variance implied by the signal-to-noise ratio for unit-variance,
/// independent features: sum of squared slopes over snr.
inline double snr_sigma2(const VectorXd& beta, double snr) {
  return beta.tail(beta.size() - 1).squaredNorm() / snr;
}

inline Replicate generate(const Scenario& sc, Index n, int replicate) {
  sc.validate();
  SplitMix64 rng(derive_seed({sc.seed, sc.id, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(replicate)}));
  const Index p = sc.p;
  const VectorXd beta = sc.true_beta();
  const double s2 = snr_sigma2(beta, sc.snr);

  MatrixXd X(n, p);
  X.col(0).setOnes();
  for (Index i = 0; i < n; ++i)
    for (Index j = 1; j < p; ++j) X(i, j) = rng.normal();
  VectorXd eps(n);
  for (Index i = 0; i < n; ++i) eps(i) = std::sqrt(s2) * rng.normal();

  const Index mv = static_cast<Index>(std::floor(sc.mv_frac * static_cast<double>(n)));
  const Index mm = static_cast<Index>(std::floor(sc.mm_frac * static_cast<double>(n)));
  IndexSet perm = iota_set(n);
  for (Index i = 0; i < mv + mm; ++i) {
    const Index j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]);
  }
  IndexSet viom(perm.begin(), perm.begin() + mv), msom(perm.begin() + mv, perm.begin() + mv + mm);
  std::sort(viom.begin(), viom.end());
  std::sort(msom.begin(), msom.end());

  for (Index i : viom) eps(i) = std::sqrt(s2 * sc.v) * rng.normal();
  for (Index i : msom) eps(i) += sc.mu_eps;
  VectorXd y = X * beta + eps;
  // Bad leverage: the response was generated from the unshifted predictors.
  for (Index i : msom)
    for (Index j = 1; j < p; ++j)
      if (beta(j) != 0.0) X(i, j) += sc.mu_x;

  Truth t;
  t.beta = beta;
  for (Index j = 0; j < p; ++j)
    if (beta(j) != 0.0) t.support.push_back(j);
  t.outliers.viom = viom;
  t.outliers.msom = msom;
  t.outliers.phi_hat = VectorXd::Zero(n);
  t.outliers.gamma_hat = VectorXd::Zero(n);
  t.weights = VectorXd::Ones(n);
  for (Index i : viom) t.weights(i) = 1.0 / sc.v;
  for (Index i : msom) t.weights(i) = 0.0;
  t.sigma2 = s2;
  return {Dataset(std::move(X), std::move(y), true), std::move(t)};
}

// ---------------------------------------------------------------------------
// Metrics

struct MseSplit {
  VectorXd mse, variance, bias2;  // per coefficient
  double mse_avg = 0.0, variance_avg = 0.0, bias2_avg = 0.0;
};

/// Rows of `estimates` are replicates.
inline MseSplit mse_decomposition(const MatrixXd& estimates, const VectorXd& truth) {
  const Index t = estimates.rows(), p = estimates.cols();
  if (t < 2) throw ParameterError("mse_decomposition: need at least 2 replicates");
  if (truth.size() != p) throw ParameterError("mse_decomposition: truth length mismatch");
  MseSplit s{VectorXd(p), VectorXd(p), VectorXd(p)};
  for (Index j = 0; j < p; ++j) {
    const double mean = estimates.col(j).mean();
    s.mse(j) = (estimates.col(j).array() - truth(j)).square().mean();
    s.variance(j) = (estimates.col(j).array() - mean).square().mean();
    s.bias2(j) = (mean - truth(j)) * (mean - truth(j));
  }
  s.mse_avg = s.mse.mean();
  s.variance_avg = s.variance.mean();
  s.bias2_avg = s.bias2.mean();
  return s;
}

struct Rates {
  std::optional<double> fpr, fnr;  // empty when the denominator is zero
};

/// FPR over the clean items, FNR over the contaminated (or active) items.
inline Rates detection_rates(const IndexSet& detected, const IndexSet& truth, Index total) {
  std::vector<char> det(static_cast<size_t>(total), 0), tru(static_cast<size_t>(total), 0);
  for (Index i : detected) {
    if (i < 0 || i >= total) throw ParameterError("detection_rates: index out of range");
    det[static_cast<size_t>(i)] = 1;
  }
  for (Index i : truth) {
    if (i < 0 || i >= total) throw ParameterError("detection_rates: index out of range");
    tru[static_cast<size_t>(i)] = 1;
  }
  Index clean = 0, fp = 0, dirty = 0, fn = 0;
  for (size_t i = 0; i < det.size(); ++i) {
    if (tru[i]) {
      ++dirty;
      if (!det[i]) ++fn;
    } else {
      ++clean;
      if (det[i]) ++fp;
    }
  }
  Rates r;
  if (clean > 0) r.fpr = static_cast<double>(fp) / static_cast<double>(clean);
  if (dirty > 0) r.fnr = static_cast<double>(fn) / static_cast<double>(dirty);
  return r;
}

inline Rates outlier_rates(const IndexSet& detected, const IndexSet& truth, Index n) {
  return detection_rates(detected, truth, n);
}

inline Rates selection_rates(const IndexSet& selected, const IndexSet& truth, Index p) {
  return detection_rates(selected, truth, p);
}

struct PredictionErrors {
  double mape = 0.0;
  double tmspe = 0.0;
};

inline PredictionErrors prediction_errors(const VectorXd& y_test, const VectorXd& y_pred, double trim_frac = 0.10) {
  if (y_test.size() != y_pred.size() || y_test.size() == 0) throw ParameterError("prediction_errors: length mismatch");
  if (!(trim_frac >= 0.0 && trim_frac < 1.0)) throw ParameterError("prediction_errors: trim_frac must lie in [0, 1)");
  const VectorXd e = y_test - y_pred;
  PredictionErrors out;
  out.mape = e.cwiseAbs().mean();
  std::vector<double> sq(static_cast<size_t>(e.size()));
  for (Index i = 0; i < e.size(); ++i) sq[static_cast<size_t>(i)] = e(i) * e(i);
  std::sort(sq.begin(), sq.end());
  const size_t m = sq.size();
  const size_t drop = static_cast<size_t>(std::ceil(trim_frac * static_cast<double>(m) - 1e-12));
  const size_t keep = m - std::min(drop, m - 1);
  double s = 0.0;
  for (size_t i = 0; i < keep; ++i) s += sq[i];
  out.tmspe = s / static_cast<double>(keep);
  return out;
}

// ---------------------------------------------------------------------------
// Scenario runs

inline const std::vector<std::string>& known_estimators() {
  static const std::vector<std::string> names{"opt", "ols", "lasso", "sparselts", "heur", "scadws", "scad2s", "scadopt"};
  return names;
}

/// Fits one estimator on one replicate. Robust estimators use the true trimming level.
inline FitResult fit_estimator(const std::string& name, const Replicate& rep, const Scenario& sc, int jobs = 1) {
  const Dataset& d = rep.data;
  const Index n = d.n();
  PipelineConfig cfg;
  cfg.step1.k_n = static_cast<Index>(rep.truth.outliers.msom.size());
  cfg.step1.n_starts = sc.n_starts;
  cfg.step1.n_keep = sc.n_keep;
  cfg.step1.seed = derive_seed({sc.seed, 0x5e1ec7ULL});
  cfg.lambda_grid_size = sc.lambda_grid_size;
  cfg.step2.penalty.family = PenaltyFamily::SCAD;
  cfg.jobs = jobs;
  if (name == "opt")
    return fit_weighted_full(d, rep.truth.weights, rep.truth.support, rep.truth.outliers.msom, "opt");
  if (name == "ols") return fit_ols(d);
  if (name == "lasso") return fit_lasso(d, cfg);
  if (name == "sparselts") {
    // Without mean-shift outliers the trimmed baseline trims the inflated units instead.
    if (cfg.step1.k_n == 0) cfg.step1.k_n = static_cast<Index>(rep.truth.outliers.viom.size());
    return fit_sparselts(d, cfg);
  }
  if (name == "heur") return fit_heur(d, cfg);
  if (name == "scadws") return fit_scadws(d, cfg);
  if (name == "scad2s") return fit_scad2s(d, cfg);
  if (name == "scadopt") {
    ProxyMatrices pm = ProxyMatrices::log_n(n);
    for (Index i = 0; i < n; ++i) pm.m_r(i) = rep.truth.weights(i) > 0.0 ? rep.truth.weights(i) : 1.0;
    for (Index i : rep.truth.outliers.viom) pm.m_gamma(i) = sc.v - 1.0;
    FitResult f = fit_scadws(d, cfg, pm);
    f.method = "scadopt";
    f.proxy_rule = "population weights";
    return f;
  }
  throw ParameterError("unknown estimator '" + name + "'");
}

struct MetricRow {
  std::string estimator;
  Index n = 0;
  std::string metric;
  double value = 0.0;
  std::optional<double> variance, bias2;
  Index count = 0;   // replicates contributing
  Index failed = 0;  // replicates excluded after an error
};

struct ScenarioReport {
  std::vector<MetricRow> rows;
  std::vector<std::string> errors;  // "estimator n=.. rep=..: message"
};

namespace detail {

struct RepOutcome {
  bool ok = false;
  std::string error;
  VectorXd beta;
  double sigma2 = 0.0;
  Rates outl, viom, sel;
  bool all_msom = false;
};

inline void push_rate(std::vector<MetricRow>& rows, const std::string& est, Index n, const std::string& metric,
                      const std::vector<RepOutcome>& outs, std::optional<double> Rates::*field, const Rates RepOutcome::*which,
                      Index failed) {
  double s = 0.0;
  Index c = 0;
  for (const auto& o : outs) {
    if (!o.ok) continue;
    const auto& v = (o.*which).*field;
    if (v) {
      s += *v;
      ++c;
    }
  }
  if (c == 0) return;
  MetricRow r;
  r.estimator = est;
  r.n = n;
  r.metric = metric;
  r.value = s / static_cast<double>(c);
  r.count = c;
  r.failed = failed;
  rows.push_back(r);
}

}  // namespace detail

inline ScenarioReport run_scenario(const Scenario& sc, const std::vector<std::string>& estimators, int jobs = 1,
                                   const std::function<void(const std::string&)>& log = {}) {
  sc.validate();
  for (const auto& e : estimators)
    if (std::find(known_estimators().begin(), known_estimators().end(), e) == known_estimators().end())
      throw ParameterError("unknown estimator '" + e + "'");
  ScenarioReport rep;
  const VectorXd beta_true = sc.true_beta();
  for (Index n : sc.n_grid) {
    // outs[e][r]
    std::vector<std::vector<detail::RepOutcome>> outs(estimators.size(), std::vector<detail::RepOutcome>(static_cast<size_t>(sc.reps)));
    auto one = [&](int r) {
      const Replicate R = generate(sc, n, r);
      IndexSet tau = R.truth.outliers.msom;
      tau.insert(tau.end(), R.truth.outliers.viom.begin(), R.truth.outliers.viom.end());
      std::sort(tau.begin(), tau.end());
      for (size_t e = 0; e < estimators.size(); ++e) {
        detail::RepOutcome& o = outs[e][static_cast<size_t>(r)];
        try {
          const FitResult f = fit_estimator(estimators[e], R, sc, 1);
          o.beta = f.beta;
          o.sigma2 = f.sigma2_hat;
          IndexSet det = f.outliers.msom;
          det.insert(det.end(), f.outliers.viom.begin(), f.outliers.viom.end());
          std::sort(det.begin(), det.end());
          o.outl = outlier_rates(det, tau, n);
          o.viom = outlier_rates(det, R.truth.outliers.viom, n);
          o.sel = selection_rates(f.support, R.truth.support, sc.p);
          o.all_msom = std::includes(f.outliers.msom.begin(), f.outliers.msom.end(), R.truth.outliers.msom.begin(),
                                     R.truth.outliers.msom.end());
          o.ok = true;
        } catch (const std::exception& ex) {
          o.ok = false;
          o.error = ex.what();
        }
      }
    };
    const int nj = std::max(1, std::min(jobs, sc.reps));
    if (nj == 1) {
      for (int r = 0; r < sc.reps; ++r) one(r);
    } else {
      std::vector<std::thread> pool;
      for (int j = 0; j < nj; ++j)
        pool.emplace_back([&, j] {
          for (int r = j; r < sc.reps; r += nj) one(r);
        });
      for (auto& th : pool) th.join();
    }

    for (size_t e = 0; e < estimators.size(); ++e) {
      const auto& o = outs[e];
      std::vector<const detail::RepOutcome*> good;
      Index failed = 0;
      for (int r = 0; r < sc.reps; ++r) {
        if (o[static_cast<size_t>(r)].ok) {
          good.push_back(&o[static_cast<size_t>(r)]);
        } else {
          ++failed;
          rep.errors.push_back(estimators[e] + " n=" + std::to_string(n) + " rep=" + std::to_string(r) + ": " +
                               o[static_cast<size_t>(r)].error);
        }
      }
      if (log) log(estimators[e] + " n=" + std::to_string(n) + " done (" + std::to_string(failed) + " failed)");
      if (good.size() >= 2) {
        MatrixXd B(static_cast<Index>(good.size()), sc.p);
        for (size_t r = 0; r < good.size(); ++r) B.row(static_cast<Index>(r)) = good[r]->beta.transpose();
        const MseSplit m = mse_decomposition(B, beta_true);
        rep.rows.push_back({estimators[e], n, "mse_beta", m.mse_avg, m.variance_avg, m.bias2_avg,
                            static_cast<Index>(good.size()), failed});
        if (sc.mm_frac == 0.0) {
          MatrixXd S(static_cast<Index>(good.size()), 1);
          for (size_t r = 0; r < good.size(); ++r) S(static_cast<Index>(r), 0) = good[r]->sigma2;
          VectorXd st(1);
          st(0) = snr_sigma2(beta_true, sc.snr);
          const MseSplit ms = mse_decomposition(S, st);
          rep.rows.push_back({estimators[e], n, "mse_sigma2", ms.mse_avg, ms.variance_avg, ms.bias2_avg,
                              static_cast<Index>(good.size()), failed});
        }
      }
      detail::push_rate(rep.rows, estimators[e], n, "outlier_fpr", o, &Rates::fpr, &detail::RepOutcome::outl, failed);
      detail::push_rate(rep.rows, estimators[e], n, "outlier_fnr", o, &Rates::fnr, &detail::RepOutcome::outl, failed);
      detail::push_rate(rep.rows, estimators[e], n, "viom_fnr", o, &Rates::fnr, &detail::RepOutcome::viom, failed);
      detail::push_rate(rep.rows, estimators[e], n, "selection_fpr", o, &Rates::fpr, &detail::RepOutcome::sel, failed);
      detail::push_rate(rep.rows, estimators[e], n, "selection_fnr", o, &Rates::fnr, &detail::RepOutcome::sel, failed);
      if (!good.empty() && sc.mm_frac > 0.0) {
        double s = 0.0;
        for (const auto* g : good) s += g->all_msom ? 1.0 : 0.0;
        MetricRow r;
        r.estimator = estimators[e];
        r.n = n;
        r.metric = "msom_all_detected";
        r.value = s / static_cast<double>(good.size());
        r.count = static_cast<Index>(good.size());
        r.failed = failed;
        rep.rows.push_back(r);
      }
    }
  }
  return rep;
}

inline void write_metrics_csv(std::ostream& os, const ScenarioReport& rep) {
  os << "estimator,n,metric,value,variance,bias2,count,failed\n";
  auto num = [&](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
  };
  for (const auto& r : rep.rows) {
    os << r.estimator << ',' << r.n << ',' << r.metric << ',';
    num(r.value);
    os << ',';
    if (r.variance) num(*r.variance); else os << "NA";
    os << ',';
    if (r.bias2) num(*r.bias2); else os << "NA";
    os << ',' << r.count << ',' << r.failed << '\n';
  }
}

}  // namespace drsr
