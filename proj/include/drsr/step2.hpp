#pragma once

// Step 2: variance-inflation outlier detection.
//
// With Xbar = [X_{S_beta}, D_{S_phi}] and P = I - Xbar (Xbar^T Xbar)^{-1} Xbar^T, solves
//     min_gamma (y - gamma)^T P (y - gamma) + gamma^T M_gamma^{-1} gamma + (n - k_n) sum_{i not in S_phi} R(|gamma_i|)
// by LLA rounds around cyclic coordinate descent. P is never formed: with the
// thin Q of Xbar we keep r = y - gamma and w = Q^T r, so (P r)_i = r_i - q_i^T w
// and every coordinate update costs O(k).

#include "drsr/linalg.hpp"
#include "drsr/penalty.hpp"
#include "drsr/step1.hpp"
#include "drsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace drsr {

inline MatrixXd build_augmented_design(const Dataset& data, const IndexSet& S_beta, const IndexSet& S_phi) {
  const Index n = data.n();
  const Index kp = static_cast<Index>(S_beta.size()), kn = static_cast<Index>(S_phi.size());
  for (Index j : S_beta)
    if (j < 0 || j >= data.p()) throw ParameterError("augmented design: feature index out of range");
  for (Index i : S_phi)
    if (i < 0 || i >= n) throw ParameterError("augmented design: unit index out of range");
  if (n - kn < kp) throw RankDeficientError("augmented design: fewer retained rows than selected features", S_beta);
  MatrixXd Xbar = MatrixXd::Zero(n, kp + kn);
  Xbar.leftCols(kp) = select_cols(data.X(), S_beta);
  for (Index c = 0; c < kn; ++c) Xbar(S_phi[static_cast<size_t>(c)], kp + c) = 1.0;
  QrFactor check(Xbar);  // throws with the dependent columns
  (void)check;
  return Xbar;
}

/// Shared solver for min (y-g)^T P (y-g) + sum ridge_i g_i^2 + sum l1_i |g_i|
/// with g fixed at 0 on the excluded units.
class GammaSolver {
 public:
  GammaSolver(const MatrixXd& Xbar, const VectorXd& y, const IndexSet& excluded)
      : y_(y), excluded_(static_cast<size_t>(y.size()), false) {
    if (Xbar.rows() != y.size()) throw ParameterError("step2: Xbar and y row mismatch");
    if (Xbar.cols() > 0) {
      Q_ = QrFactor(Xbar).thin_q();
    } else {
      Q_ = MatrixXd::Zero(y.size(), 0);
    }
    pdiag_ = (1.0 - Q_.rowwise().squaredNorm().array()).cwiseMax(0.0);
    for (Index i : excluded) excluded_[static_cast<size_t>(i)] = true;
  }

  Index n() const { return y_.size(); }
  Index cols() const { return Q_.cols(); }
  const VectorXd& p_diag() const { return pdiag_; }
  bool excluded(Index i) const { return excluded_[static_cast<size_t>(i)]; }

  /// P v.
  VectorXd project(const VectorXd& v) const { return v - Q_ * (Q_.transpose() * v); }

  /// (y - g)^T P (y - g).
  double quad(const VectorXd& gamma) const {
    const VectorXd r = y_ - gamma;
    return std::max(0.0, r.squaredNorm() - (Q_.transpose() * r).squaredNorm());
  }

  CdResult solve(const VectorXd& ridge, const VectorXd& l1, double tol, int max_iter,
                 const VectorXd* warm = nullptr) const {
    const Index n = y_.size();
    if (ridge.size() != n || l1.size() != n) throw ParameterError("step2: weight length mismatch");
    CdResult out;
    out.beta = warm ? *warm : VectorXd::Zero(n);
    for (Index i = 0; i < n; ++i)
      if (excluded(i)) out.beta(i) = 0.0;
    VectorXd r = y_ - out.beta;
    VectorXd w = Q_.transpose() * r;
    const double yscale = std::sqrt(std::max(quad(VectorXd::Zero(n)), 0.0));
    const double stop = tol * (yscale > 0.0 ? yscale : 1.0);

    VectorXd curv(n);
    for (Index i = 0; i < n; ++i) {
      if (excluded(i)) continue;
      curv(i) = pdiag_(i) + ridge(i);
      if (!(curv(i) > 1e-12)) throw NumericalError("step2: nonpositive curvature for unit " + std::to_string(i));
    }

    auto update = [&](Index i) -> double {
      const double old = out.beta(i);
      const double u = r(i) - Q_.row(i).dot(w);
      const double z = u + pdiag_(i) * old;
      const double fresh = soft_threshold(z, 0.5 * l1(i)) / curv(i);
      const double delta = fresh - old;
      if (delta != 0.0) {
        out.beta(i) = fresh;
        r(i) -= delta;
        w.noalias() -= delta * Q_.row(i).transpose();
      }
      return std::sqrt(curv(i)) * std::abs(delta);
    };

    while (out.sweeps < max_iter) {
      double change = 0.0;
      for (Index i = 0; i < n; ++i)
        if (!excluded(i)) change = std::max(change, update(i));
      ++out.sweeps;
      if (change <= stop) {
        out.converged = true;
        break;
      }
      std::vector<Index> active;
      for (Index i = 0; i < n; ++i)
        if (out.beta(i) != 0.0) active.push_back(i);
      while (out.sweeps < max_iter) {
        double inner = 0.0;
        for (Index i : active) inner = std::max(inner, update(i));
        ++out.sweeps;
        if (inner <= stop) break;
      }
    }
    return out;
  }

  /// Residual sum of squares after additionally absorbing the units in S with
  /// their own dummies (equivalently, dropping those rows).
  double refit_rss(const IndexSet& S) const {
    if (S.empty()) return quad(VectorXd::Zero(n()));
    MatrixXd A(n(), Q_.cols() + static_cast<Index>(S.size()));
    A.leftCols(Q_.cols()) = Q_;
    A.rightCols(static_cast<Index>(S.size())).setZero();
    for (size_t c = 0; c < S.size(); ++c) A(S[c], Q_.cols() + static_cast<Index>(c)) = 1.0;
    return QrFactor(A).residual_quadratic(y_);
  }

  /// Robust scale of the projected residuals P y / sqrt(P_ii) over eligible units.
  double robust_scale() const {
    const VectorXd u = project(y_);
    std::vector<double> z;
    for (Index i = 0; i < n(); ++i)
      if (!excluded(i) && pdiag_(i) > 1e-12) z.push_back(std::abs(u(i)) / std::sqrt(pdiag_(i)));
    if (z.empty()) return 0.0;
    auto mid = z.begin() + static_cast<std::ptrdiff_t>(z.size() / 2);
    std::nth_element(z.begin(), mid, z.end());
    double med = *mid;
    if (z.size() % 2 == 0) med = 0.5 * (med + *std::max_element(z.begin(), mid));
    return 1.482602218505602 * med;
  }

 private:
  VectorXd y_;
  MatrixXd Q_;
  VectorXd pdiag_;
  std::vector<bool> excluded_;
};

struct Step2Config {
  PenaltySpec penalty;   // lambda on the per-observation scale of the (n - k_n) multiplier
  double tol = 1e-11;
  int max_iter = 100000;
  int lla_iters = 2;
};

struct Step2Result {
  VectorXd gamma_hat;
  IndexSet viom;
  double objective = 0.0;
  std::vector<double> trace;  // full objective after each LLA round (first entry: L1 pass)
  int sweeps = 0;
  bool converged = true;
};

namespace detail {

inline double step2_penalty(const PenaltySpec& spec, const VectorXd& gamma, const GammaSolver& g, double mult) {
  double s = 0.0;
  for (Index i = 0; i < gamma.size(); ++i)
    if (!g.excluded(i)) s += penalty_value(spec, std::abs(gamma(i)), i);
  return mult * s;
}

}  // namespace detail

/// Full objective; `ridge` holds the diagonal of M_gamma^{-1} (zeros allowed).
inline double step2_objective(const GammaSolver& g, const VectorXd& gamma, const VectorXd& ridge,
                              const PenaltySpec& spec, Index k_n) {
  const double rq = (gamma.array().square() * ridge.array()).sum();
  return g.quad(gamma) + rq + detail::step2_penalty(spec, gamma, g, static_cast<double>(g.n() - k_n));
}

inline double step2_objective(const GammaSolver& g, const VectorXd& gamma, const ProxyMatrices& proxy,
                              const PenaltySpec& spec, Index k_n) {
  return step2_objective(g, gamma, VectorXd(proxy.m_gamma.cwiseInverse()), spec, k_n);
}

inline Step2Result solve_step2(const GammaSolver& g, const VectorXd& ridge, Index k_n, const Step2Config& cfg,
                               const VectorXd* warm = nullptr) {
  cfg.penalty.validate();
  const Index n = g.n();
  if (ridge.size() != n || !ridge.allFinite() || (ridge.array() < 0.0).any())
    throw ParameterError("step2: ridge diagonal must be length n, finite and >= 0");
  if (cfg.penalty.family == PenaltyFamily::AdaptiveL1 && cfg.penalty.adaptive_weights->size() != n)
    throw ParameterError("step2: adaptive weights must have length n");
  const double mult = static_cast<double>(n - k_n);

  VectorXd l1(n);
  for (Index i = 0; i < n; ++i) {
    if (cfg.penalty.family == PenaltyFamily::AdaptiveL1)
      l1(i) = mult * cfg.penalty.lambda * (*cfg.penalty.adaptive_weights)(i);
    else
      l1(i) = mult * cfg.penalty.lambda;
  }

  Step2Result res;
  CdResult fit = g.solve(ridge, l1, cfg.tol, cfg.max_iter, warm);
  res.sweeps += fit.sweeps;
  res.converged = fit.converged;
  res.trace.push_back(step2_objective(g, fit.beta, ridge, cfg.penalty, k_n));

  if (cfg.penalty.family == PenaltyFamily::SCAD) {
    for (int it = 0; it < cfg.lla_iters; ++it) {
      const VectorXd lw = lla_weights(fit.beta, cfg.penalty) * mult;
      CdResult next = g.solve(ridge, lw, cfg.tol, cfg.max_iter, &fit.beta);
      res.sweeps += next.sweeps;
      res.converged = res.converged && next.converged;
      fit = std::move(next);
      res.trace.push_back(step2_objective(g, fit.beta, ridge, cfg.penalty, k_n));
    }
  }

  res.gamma_hat = fit.beta;
  for (Index i = 0; i < n; ++i)
    if (res.gamma_hat(i) != 0.0) res.viom.push_back(i);
  res.objective = res.trace.back();
  return res;
}

inline Step2Result solve_step2(const GammaSolver& g, const ProxyMatrices& proxy, Index k_n, const Step2Config& cfg,
                               const VectorXd* warm = nullptr) {
  proxy.validate(g.n());
  return solve_step2(g, VectorXd(proxy.m_gamma.cwiseInverse()), k_n, cfg, warm);
}

/// Convenience overload building the augmented design from the step-1 output.
inline Step2Result solve_step2(const Dataset& data, const IndexSet& S_beta, const IndexSet& S_phi,
                               const ProxyMatrices& proxy, const Step2Config& cfg) {
  const MatrixXd Xbar = build_augmented_design(data, S_beta, S_phi);
  GammaSolver g(Xbar, data.y(), S_phi);
  return solve_step2(g, proxy, static_cast<Index>(S_phi.size()), cfg);
}

// ---------------------------------------------------------------------------
// Threshold selection for the gamma penalty

enum class Step2Criterion { BIC, HannanQuinn };

inline const char* to_string(Step2Criterion c) { return c == Step2Criterion::BIC ? "bic" : "hq"; }

struct Step2Tuning {
  std::vector<double> taus{4.0, 3.5, 3.0, 2.75, 2.5, 2.25, 2.0, 1.75, 1.5};  // thresholds in robust-scale units
  Step2Criterion criterion = Step2Criterion::HannanQuinn;
};

struct Step2GridPoint {
  double tau = 0.0;
  double lambda = 0.0;
  Index n_viom = 0;
  double criterion = 0.0;
};

struct Step2Selection {
  Step2Result best;
  double lambda = 0.0;
  double tau = 0.0;
  std::vector<Step2GridPoint> grid;
};

/// Detection criterion on the refit that gives each detected unit its own
/// dummy: m log(RSS / m) + kappa |S|, m = number of eligible rows.
inline double step2_criterion(const GammaSolver& g, const IndexSet& S, Index eligible, Step2Criterion c) {
  const double m = static_cast<double>(eligible);
  const double rss = g.refit_rss(S);
  const double kappa = c == Step2Criterion::BIC ? std::log(m) : 2.0 * std::log(std::log(std::max(m, 3.0)));
  if (!(rss > 0.0)) return -std::numeric_limits<double>::infinity();
  return m * std::log(rss / m) + kappa * static_cast<double>(S.size());
}

/// Runs the solver over a decreasing grid of thresholds tau * sigma_robust and
/// keeps the point minimizing the criterion (ties: fewer detected units, then larger tau).
/// `lambda_of_tau` maps a threshold to the penalty level of `base`.
template <class LambdaOfTau>
Step2Selection select_step2(const GammaSolver& g, const VectorXd& ridge, Index k_n, const Step2Config& base,
                            const Step2Tuning& tuning, LambdaOfTau&& lambda_of_tau) {
  if (tuning.taus.empty()) throw ParameterError("step2: empty threshold grid");
  const double scale = g.robust_scale();
  const Index eligible = g.n() - g.cols();

  Step2Selection sel;
  bool have = false;
  double best_crit = 0.0;
  VectorXd warm = VectorXd::Zero(g.n());
  for (double tau : tuning.taus) {
    Step2Config cfg = base;
    cfg.penalty.lambda = scale > 0.0 ? lambda_of_tau(tau * scale) : 0.0;
    Step2Result r = solve_step2(g, ridge, k_n, cfg, &warm);
    warm = r.gamma_hat;
    const double crit = step2_criterion(g, r.viom, std::max<Index>(eligible, 1), tuning.criterion);
    sel.grid.push_back({tau, cfg.penalty.lambda, static_cast<Index>(r.viom.size()), crit});
    const bool better = !have || crit < best_crit - 1e-12 ||
                        (std::abs(crit - best_crit) <= 1e-12 && r.viom.size() < sel.best.viom.size());
    if (better) {
      have = true;
      best_crit = crit;
      sel.best = std::move(r);
      sel.lambda = cfg.penalty.lambda;
      sel.tau = tau;
    }
  }
  return sel;
}

}  // namespace drsr
