#pragma once

// Step 1: feature selection and mean-shift outlier detection.
//
// Minimizes the proxy-weighted trimmed loss
//     1/2 sum_{i in H} m_i (y_i - x_i^T beta)^2 + (n - k_n) sum_j R_lambda(|beta_j|),   |H| = n - k_n,
// which is the L0-constrained mean-shift formulation with phi recovered as the
// trimmed residuals. The search is sparseLTS-style (elemental starts, two warm
// C-steps, best candidates iterated to a fixed point) on the lasso, followed by
// LLA rounds for SCAD, each interleaved with C-steps.

#include "drsr/linalg.hpp"
#include "drsr/penalty.hpp"
#include "drsr/rng.hpp"
#include "drsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <thread>
#include <tuple>
#include <vector>

namespace drsr {

struct Step1Config {
  Index k_n = 0;
  PenaltySpec penalty;
  int n_starts = 500;
  int n_keep = 10;
  int max_csteps = 200;
  double cd_tol = 1e-11;
  int cd_max_iter = 100000;
  int lla_iters = 2;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate(Index n) const {
    penalty.validate();
    if (k_n < 0 || k_n >= n) throw ParameterError("step1: trimming count must lie in [0, n-1]");
    if (n - k_n < 3) throw ParameterError("step1: need n - k_n >= 3");
    if (n_starts < 1 || n_keep < 1 || n_keep > n_starts) throw ParameterError("step1: need 1 <= n_keep <= n_starts");
    if (!(cd_tol > 0.0) || cd_max_iter < 1 || max_csteps < 1) throw ParameterError("step1: tolerances and caps must be positive");
    if (lla_iters < 0) throw ParameterError("step1: lla_iters must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Proxy transform

/// Rows scaled by sqrt(m_r). The result carries no intercept flag since the
/// first column becomes sqrt(m_r); callers track the unpenalized column.
inline Dataset transform_by_proxy(const Dataset& data, const ProxyMatrices& proxy) {
  if (proxy.m_r.size() != data.n()) throw ParameterError("transform_by_proxy: proxy length mismatch");
  if (!proxy.m_r.allFinite() || (proxy.m_r.array() <= 0.0).any())
    throw ParameterError("transform_by_proxy: proxy entries must be strictly positive");
  const VectorXd s = proxy.m_r.cwiseSqrt();
  return Dataset(s.asDiagonal() * data.X(), s.cwiseProduct(data.y()), false);
}

// ---------------------------------------------------------------------------
// Weighted-lasso coordinate descent

struct CdResult {
  VectorXd beta;
  int sweeps = 0;
  bool converged = false;
};

/// Minimizes 1/2 sum_i w_i (y_i - x_i^T b)^2 + sum_j l1_j |b_j| by cyclic
/// coordinate descent with an active-set inner loop. Stops when the largest
/// change in any fitted-value direction, sqrt(sum_i w_i x_ij^2) |db_j|, falls
/// below tol * sqrt(sum_i w_i y_i^2).
inline CdResult penalized_wls_cd(const MatrixXd& X, const VectorXd& y, const VectorXd& row_weights,
                                 const VectorXd& l1_weights, double tol, int max_iter,
                                 const VectorXd* warm_start = nullptr) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n || row_weights.size() != n || l1_weights.size() != p)
    throw ParameterError("penalized_wls_cd: dimension mismatch");
  if ((l1_weights.array() < 0.0).any()) throw ParameterError("penalized_wls_cd: l1 weights must be >= 0");

  const MatrixXd WX = row_weights.asDiagonal() * X;
  VectorXd curv(p);
  for (Index j = 0; j < p; ++j) curv(j) = WX.col(j).dot(X.col(j));

  CdResult out;
  out.beta = warm_start ? *warm_start : VectorXd::Zero(p);
  VectorXd r = y - X * out.beta;
  const double yscale = std::sqrt(row_weights.dot(y.cwiseAbs2()));
  const double stop = tol * (yscale > 0.0 ? yscale : 1.0);

  auto update = [&](Index j) -> double {
    if (curv(j) <= 0.0) {
      if (out.beta(j) != 0.0) {
        r += X.col(j) * out.beta(j);
        out.beta(j) = 0.0;
      }
      return 0.0;
    }
    const double old = out.beta(j);
    const double rho = WX.col(j).dot(r) + curv(j) * old;
    const double fresh = soft_threshold(rho, l1_weights(j)) / curv(j);
    const double delta = fresh - old;
    if (delta != 0.0) {
      r.noalias() -= X.col(j) * delta;
      out.beta(j) = fresh;
    }
    return std::sqrt(curv(j)) * std::abs(delta);
  };

  while (out.sweeps < max_iter) {
    // Full sweep.
    double change = 0.0;
    for (Index j = 0; j < p; ++j) change = std::max(change, update(j));
    ++out.sweeps;
    if (change <= stop) {
      out.converged = true;
      break;
    }
    // Iterate on the active set until it settles, then re-check with a full sweep.
    std::vector<Index> active;
    for (Index j = 0; j < p; ++j)
      if (out.beta(j) != 0.0) active.push_back(j);
    while (out.sweeps < max_iter) {
      double inner = 0.0;
      for (Index j : active) inner = std::max(inner, update(j));
      ++out.sweeps;
      if (inner <= stop) break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Concentration step

/// Indices of the n - k_n smallest squared residuals; ties go to the lower index.
inline IndexSet cstep(const MatrixXd& X, const VectorXd& y, const VectorXd& beta, Index k_n) {
  const Index n = X.rows();
  const Index h = n - k_n;
  const VectorXd r2 = (y - X * beta).array().square();
  IndexSet idx = iota_set(n);
  auto less = [&](Index a, Index b) { return r2(a) < r2(b) || (r2(a) == r2(b) && a < b); };
  if (h < n) std::nth_element(idx.begin(), idx.begin() + h, idx.end(), less);
  idx.resize(static_cast<size_t>(h));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// Solver

struct Step1Result {
  VectorXd beta;
  IndexSet support;
  IndexSet msom;                 // S_phi = complement of retained
  VectorXd phi_hat;              // trimmed residuals on original scale
  IndexSet retained;             // H
  double objective = 0.0;        // objective at the solution under the configured penalty
  double rss_h = 0.0;            // proxy-weighted RSS over H
  std::vector<double> trace_l1;  // lasso-phase objective after each C-step of the winner
  std::vector<double> trace_lla; // penalty-family objective along the LLA phase
  int csteps = 0;
  Index best_start = -1;
  bool converged = true;
};

class TrimmedSelector {
 public:
  TrimmedSelector(const Dataset& data, const ProxyMatrices& proxy, Step1Config cfg)
      : data_(data), cfg_(std::move(cfg)), star_(transform_by_proxy(data, proxy)) {
    cfg_.validate(data.n());
    if (cfg_.penalty.family == PenaltyFamily::AdaptiveL1 && cfg_.penalty.adaptive_weights->size() != data.p())
      throw ParameterError("step1: adaptive weights must have length p");
    penalized_ = VectorXd::Ones(data.p());
    if (data.intercept()) penalized_(0) = 0.0;
    // L1 weights of the first (lasso or adaptive lasso) pass, per unit of row count.
    base_l1_ = cfg_.penalty.lambda * penalized_;
    if (cfg_.penalty.family == PenaltyFamily::AdaptiveL1) base_l1_ = base_l1_.cwiseProduct(*cfg_.penalty.adaptive_weights);
  }

  const Dataset& transformed() const { return star_; }
  const VectorXd& penalized_mask() const { return penalized_; }
  Index h() const { return data_.n() - cfg_.k_n; }

  /// Trimmed objective on retained rows H under the configured penalty family.
  double objective(const VectorXd& beta, const IndexSet& H) const {
    return 0.5 * loss(beta, H) + static_cast<double>(h()) * penalty_sum(beta, cfg_.penalty);
  }

  /// Same objective with the plain lasso penalty (first LLA step).
  double lasso_objective(const VectorXd& beta, const IndexSet& H) const {
    if (cfg_.penalty.family != PenaltyFamily::SCAD) return objective(beta, H);
    PenaltySpec l1 = cfg_.penalty;
    l1.family = PenaltyFamily::L1;
    return 0.5 * loss(beta, H) + static_cast<double>(h()) * penalty_sum(beta, l1);
  }

  Step1Result solve() const {
    const Index n = data_.n();
    Step1Result res;

    Candidate best;
    if (cfg_.k_n == 0) {
      best.H = iota_set(n);
      best.fit = fit_rows(best.H, base_l1_ * static_cast<double>(h()), nullptr);
      best.objective = lasso_objective(best.fit.beta, best.H);
      best.start = 0;
      best.trace.push_back(best.objective);
    } else {
      best = search();
    }
    res.trace_l1 = best.trace;
    res.best_start = best.start;
    res.csteps = best.csteps;

    VectorXd beta = best.fit.beta;
    IndexSet H = best.H;
    bool converged = best.fit.converged;

    if (cfg_.penalty.family == PenaltyFamily::SCAD && cfg_.lla_iters > 0) {
      res.trace_lla.push_back(objective(beta, H));
      int round = 0;
      for (int it = 0; it < cfg_.max_csteps + cfg_.lla_iters; ++it) {
        VectorXd l1 = lla_weights(beta, cfg_.penalty).cwiseProduct(penalized_) * static_cast<double>(h());
        CdResult fit = fit_rows(H, l1, &beta);
        converged = fit.converged;
        beta = fit.beta;
        ++round;
        IndexSet next = cstep(star_.X(), star_.y(), beta, cfg_.k_n);
        res.trace_lla.push_back(objective(beta, next));
        ++res.csteps;
        if (next == H && round >= cfg_.lla_iters) break;
        H = std::move(next);
      }
    }

    res.beta = beta;
    res.retained = H;
    res.converged = converged;
    res.objective = objective(beta, H);
    res.rss_h = loss(beta, H);
    for (Index j = 0; j < data_.p(); ++j)
      if (beta(j) != 0.0 || (j == 0 && data_.intercept())) res.support.push_back(j);
    res.msom = complement(H, n);
    res.phi_hat = VectorXd::Zero(n);
    const VectorXd resid = data_.y() - data_.X() * beta;
    for (Index i : res.msom) res.phi_hat(i) = resid(i);
    return res;
  }

 private:
  struct Candidate {
    CdResult fit;
    IndexSet H;
    double objective = std::numeric_limits<double>::infinity();
    Index start = -1;
    int csteps = 0;
    std::vector<double> trace;
  };

  double loss(const VectorXd& beta, const IndexSet& H) const {
    double s = 0.0;
    for (Index i : H) {
      const double r = star_.y()(i) - star_.X().row(i).dot(beta);
      s += r * r;
    }
    return s;
  }

  double penalty_sum(const VectorXd& beta, const PenaltySpec& spec) const {
    double s = 0.0;
    for (Index j = 0; j < beta.size(); ++j)
      if (penalized_(j) != 0.0) s += penalty_value(spec, std::abs(beta(j)), j);
    return s;
  }

  static constexpr double kScreenTol = 1e-6;
  static constexpr int kScreenSweeps = 500;

  CdResult fit_rows(const IndexSet& rows, const VectorXd& l1, const VectorXd* warm) const {
    return fit_rows(rows, l1, warm, cfg_.cd_tol, cfg_.cd_max_iter);
  }

  CdResult fit_rows(const IndexSet& rows, const VectorXd& l1, const VectorXd* warm, double tol, int max_iter) const {
    const MatrixXd Xs = select_rows(star_.X(), rows);
    const VectorXd ys = select_rows(star_.y(), rows);
    return penalized_wls_cd(Xs, ys, VectorXd::Ones(Xs.rows()), l1, tol, max_iter, warm);
  }

  IndexSet elemental_subset(Index start) const {
    const Index n = data_.n();
    const Index size = std::min<Index>(3, h());
    SplitMix64 rng(derive_seed({cfg_.seed, static_cast<std::uint64_t>(start)}));
    IndexSet s;
    while (static_cast<Index>(s.size()) < size) {
      const Index c = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
      if (std::find(s.begin(), s.end(), c) == s.end()) s.push_back(c);
    }
    std::sort(s.begin(), s.end());
    return s;
  }

  Candidate run_start(Index start) const {
    const VectorXd full_l1 = base_l1_ * static_cast<double>(h());
    IndexSet sub = elemental_subset(start);
    // Starts only rank candidates, so they run at screening precision;
    // concentrate() refits the survivors to cd_tol.
    CdResult fit = fit_rows(sub, base_l1_ * static_cast<double>(sub.size()), nullptr, kScreenTol, kScreenSweeps);
    Candidate c;
    c.start = start;
    for (int s = 0; s < 2; ++s) {
      c.H = cstep(star_.X(), star_.y(), fit.beta, cfg_.k_n);
      fit = fit_rows(c.H, full_l1, &fit.beta, kScreenTol, kScreenSweeps);
      ++c.csteps;
    }
    c.fit = std::move(fit);
    c.objective = lasso_objective(c.fit.beta, c.H);
    return c;
  }

  void concentrate(Candidate& c) const {
    const VectorXd full_l1 = base_l1_ * static_cast<double>(h());
    c.fit = fit_rows(c.H, full_l1, &c.fit.beta);
    c.objective = lasso_objective(c.fit.beta, c.H);
    c.trace.push_back(c.objective);
    for (int s = 0; s < cfg_.max_csteps; ++s) {
      IndexSet next = cstep(star_.X(), star_.y(), c.fit.beta, cfg_.k_n);
      if (next == c.H) break;
      c.H = std::move(next);
      c.fit = fit_rows(c.H, full_l1, &c.fit.beta);
      c.objective = lasso_objective(c.fit.beta, c.H);
      c.trace.push_back(c.objective);
      ++c.csteps;
    }
  }

  template <class Fn>
  void parallel_for(Index count, Fn&& fn) const {
    const int jobs = std::max(1, std::min<int>(cfg_.jobs, static_cast<int>(count)));
    if (jobs == 1) {
      for (Index i = 0; i < count; ++i) fn(i);
      return;
    }
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t)
      pool.emplace_back([&, t] {
        for (Index i = t; i < count; i += jobs) fn(i);
      });
    for (auto& th : pool) th.join();
  }

  static bool better(const Candidate& a, const Candidate& b) {
    return std::tie(a.objective, a.start) < std::tie(b.objective, b.start);
  }

  /// Rows ordered by robust outlyingness in the predictors: sum over
  /// non-intercept columns of squared median/MAD z-scores.
  IndexSet low_leverage_rows(Index count) const {
    const Index n = data_.n(), p = data_.p();
    VectorXd score = VectorXd::Zero(n);
    std::vector<double> col(static_cast<size_t>(n)), dev(static_cast<size_t>(n));
    auto median = [](std::vector<double>& v) {
      auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
      std::nth_element(v.begin(), mid, v.end());
      return *mid;
    };
    for (Index j = data_.intercept() ? 1 : 0; j < p; ++j) {
      for (Index i = 0; i < n; ++i) col[static_cast<size_t>(i)] = data_.X()(i, j);
      const double med = median(col);
      for (Index i = 0; i < n; ++i) dev[static_cast<size_t>(i)] = std::abs(data_.X()(i, j) - med);
      double mad = 1.482602218505602 * median(dev);
      if (!(mad > 0.0)) mad = 1.0;
      for (Index i = 0; i < n; ++i) {
        const double z = (data_.X()(i, j) - med) / mad;
        score(i) += z * z;
      }
    }
    IndexSet idx = iota_set(n);
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return score(a) < score(b); });
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  /// Deterministic extra start from the h least outlying rows in X, so that
  /// bad leverage points with unremarkable responses do not capture every start.
  Candidate leverage_start() const {
    const VectorXd full_l1 = base_l1_ * static_cast<double>(h());
    Candidate c;
    c.start = cfg_.n_starts;
    c.H = low_leverage_rows(h());
    CdResult fit = fit_rows(c.H, full_l1, nullptr);
    for (int s = 0; s < 2; ++s) {
      c.H = cstep(star_.X(), star_.y(), fit.beta, cfg_.k_n);
      fit = fit_rows(c.H, full_l1, &fit.beta);
      ++c.csteps;
    }
    c.fit = std::move(fit);
    c.objective = lasso_objective(c.fit.beta, c.H);
    return c;
  }

  Candidate search() const {
    std::vector<Candidate> cands(static_cast<size_t>(cfg_.n_starts));
    parallel_for(cfg_.n_starts, [&](Index s) { cands[static_cast<size_t>(s)] = run_start(s); });
    std::sort(cands.begin(), cands.end(), better);
    // Distinct retained sets only; duplicates converge to the same point.
    std::vector<Candidate> keep;
    auto add = [&](Candidate&& c) {
      for (const auto& k : keep)
        if (k.H == c.H && k.objective == c.objective) return;
      keep.push_back(std::move(c));
    };
    for (auto& c : cands) {
      if (static_cast<int>(keep.size()) >= cfg_.n_keep) break;
      add(std::move(c));
    }
    add(leverage_start());
    parallel_for(static_cast<Index>(keep.size()), [&](Index i) { concentrate(keep[static_cast<size_t>(i)]); });
    std::vector<const Candidate*> ok;
    for (const auto& c : keep)
      if (c.fit.converged) ok.push_back(&c);
    if (ok.empty()) throw ConvergenceError("step1: no candidate converged (increase cd_max_iter or loosen cd_tol)");
    const Candidate* winner = ok.front();
    for (const Candidate* c : ok)
      if (better(*c, *winner)) winner = c;
    return *winner;
  }

  const Dataset& data_;
  Step1Config cfg_;
  Dataset star_;
  VectorXd penalized_;
  VectorXd base_l1_;
};

inline Step1Result solve_step1(const Dataset& data, const ProxyMatrices& proxy, const Step1Config& cfg) {
  return TrimmedSelector(data, proxy, cfg).solve();
}

}  // namespace drsr
