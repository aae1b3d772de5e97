#pragma once

// Step 3: per-unit variance-inflation weights by restricted maximum likelihood
// and the weighted refit.
//
// For var(eps) = sigma^2 (I + omega e_i e_i^T) the REML criterion with sigma^2
// profiled out only depends on the OLS quantities e_i, h_ii and RSS_0:
//   sigma^2(omega) = (RSS_0 - omega e_i^2 / (1 + omega (1 - h_ii))) / (n - k)
//   log|V| + log|Xbar^T V^{-1} Xbar| = log(1 + omega (1 - h_ii)) + log|Xbar^T Xbar|

#include "drsr/linalg.hpp"
#include "drsr/types.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <vector>

namespace drsr {

inline constexpr double kOmegaUpperBound = 1e8;

/// Precomputed OLS pieces of the REML profile for one design.
class RemlProfile {
 public:
  RemlProfile(const MatrixXd& Xbar, const VectorXd& y) : ols_(Xbar, y) {
    if (ols_.n() <= ols_.k()) throw ParameterError("REML: need more rows than columns");
    logdet_xtx_ = ols_.qr().log_gram_det();
  }

  const OlsFit& ols() const { return ols_; }

  double loglik(Index i, double omega) const {
    if (i < 0 || i >= ols_.n()) throw ParameterError("REML: unit index out of range");
    if (!(omega >= 0.0)) throw ParameterError("REML: omega must be >= 0");
    const double dof = static_cast<double>(ols_.n() - ols_.k());
    const double u = std::max(0.0, 1.0 - ols_.hat()(i));
    const double e = ols_.residuals()(i);
    const double inflate = 1.0 + omega * u;
    const double rss = std::max(ols_.rss() - omega * e * e / inflate, 0.0);
    const double s2 = rss / dof;
    return -0.5 * (dof * std::log(2.0 * std::numbers::pi * s2) + std::log(inflate) + logdet_xtx_ + dof);
  }

 private:
  OlsFit ols_;
  double logdet_xtx_ = 0.0;
};

/// Profile restricted log-likelihood of y = Xbar theta + eps, var(eps) = sigma^2 (I + omega e_i e_i^T).
inline double restricted_loglik(const MatrixXd& Xbar, const VectorXd& y, Index i, double omega) {
  return RemlProfile(Xbar, y).loglik(i, omega);
}

struct SingleWeight {
  double omega_hat = 0.0;
  double weight = 1.0;
  bool at_bound = false;
};

/// Maximizes the profile over omega in [0, 1e8] with Brent's method on log(1 + omega).
inline SingleWeight estimate_single_weight(const RemlProfile& prof, Index i) {
  const double theta_max = std::log1p(kOmegaUpperBound);
  auto negll = [&](double theta) { return -prof.loglik(i, std::expm1(theta)); };
  const auto [theta, fmin] = boost::math::tools::brent_find_minima(negll, 0.0, theta_max,
                                                                    std::numeric_limits<double>::digits / 2);
  SingleWeight out;
  double best_theta = theta, best = fmin;
  if (negll(0.0) <= best) {
    best_theta = 0.0;
    best = negll(0.0);
  }
  if (negll(theta_max) < best) {
    best_theta = theta_max;
    best = negll(theta_max);
  }
  out.omega_hat = best_theta == 0.0 ? 0.0 : std::expm1(best_theta);
  out.at_bound = best_theta == theta_max || theta_max - best_theta < 1e-6;
  if (out.at_bound) out.omega_hat = kOmegaUpperBound;
  out.weight = 1.0 / (1.0 + out.omega_hat);
  return out;
}

inline SingleWeight estimate_single_weight(const MatrixXd& Xbar, const VectorXd& y, Index i) {
  return estimate_single_weight(RemlProfile(Xbar, y), i);
}

/// Closed-form weight (1 + gamma^2 c1 / sigma^2)^{-1}; c1 = 1/n is the usual choice.
inline double plugin_weight(double gamma_i, double sigma2, double c1) {
  if (!(sigma2 > 0.0)) throw ParameterError("plugin_weight: sigma2 must be > 0");
  if (!(c1 >= 0.0)) throw ParameterError("plugin_weight: c1 must be >= 0");
  return 1.0 / (1.0 + gamma_i * gamma_i * c1 / sigma2);
}

struct ViomWeights {
  IndexSet units;                    // detected units, in order
  std::vector<SingleWeight> fits;    // one per unit
};

/// Each detected unit is estimated on its own: the design uses the selected
/// features on every row that is neither an MSOM nor another detected unit,
/// plus the unit itself.
inline ViomWeights estimate_viom_weights(const Dataset& data, const IndexSet& S_beta, const IndexSet& S_phi,
                                         const IndexSet& S_gamma, int jobs = 1) {
  ViomWeights out;
  out.units = S_gamma;
  out.fits.resize(S_gamma.size());
  if (S_gamma.empty()) return out;
  IndexSet flagged = S_phi;
  flagged.insert(flagged.end(), S_gamma.begin(), S_gamma.end());
  std::sort(flagged.begin(), flagged.end());
  const IndexSet base = complement(flagged, data.n());
  const MatrixXd Xs = select_cols(data.X(), S_beta);

  auto one = [&](size_t t) {
    IndexSet rows = base;
    const Index unit = S_gamma[t];
    rows.insert(std::lower_bound(rows.begin(), rows.end(), unit), unit);
    const Index pos = std::lower_bound(rows.begin(), rows.end(), unit) - rows.begin();
    out.fits[t] = estimate_single_weight(select_rows(Xs, rows), select_rows(data.y(), rows), pos);
  };
  const int nj = std::max(1, std::min<int>(jobs, static_cast<int>(S_gamma.size())));
  if (nj == 1) {
    for (size_t t = 0; t < S_gamma.size(); ++t) one(t);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < nj; ++j)
      pool.emplace_back([&, j] {
        for (size_t t = static_cast<size_t>(j); t < S_gamma.size(); t += static_cast<size_t>(nj)) one(t);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

/// WLS on the non-MSOM rows with the selected features. sigma2_hat is the
/// weighted variance estimate sum w e^2 / (n' - k_p) / (sum w / n'), n' = retained rows.
inline FitResult refit_with_weights(const Dataset& data, const IndexSet& S_beta, const IndexSet& S_phi,
                                    const VectorXd& weights) {
  const Index n = data.n();
  if (weights.size() != n) throw ParameterError("refit: weights must have length n");
  for (Index i : S_phi)
    if (weights(i) != 0.0) throw ParameterError("refit: MSOM units must carry weight 0");
  const IndexSet rows = complement(S_phi, n);
  for (Index i : rows)
    if (!(weights(i) > 0.0 && weights(i) <= 1.0)) throw ParameterError("refit: weights outside MSOM must lie in (0, 1]");
  if (S_beta.empty()) throw ParameterError("refit: empty feature set");

  const MatrixXd Xr = select_rows(select_cols(data.X(), S_beta), rows);
  const VectorXd yr = select_rows(data.y(), rows);
  const VectorXd wr = select_rows(weights, rows);
  const WlsResult w = wls_fit(Xr, yr, wr);

  FitResult res;
  res.beta = VectorXd::Zero(data.p());
  for (size_t c = 0; c < S_beta.size(); ++c) res.beta(S_beta[c]) = w.beta(static_cast<Index>(c));
  res.support = S_beta;
  res.weights = weights;
  res.omega_hat = VectorXd::Zero(n);
  const double np = static_cast<double>(rows.size());
  const double dof = np - static_cast<double>(S_beta.size());
  const double wsum = wr.sum();
  res.sigma2_hat = dof > 0.0 ? (wr.array() * w.residuals.array().square()).sum() / dof / (wsum / np)
                             : std::numeric_limits<double>::quiet_NaN();
  res.outliers.msom = S_phi;
  res.outliers.phi_hat = VectorXd::Zero(n);
  res.outliers.gamma_hat = VectorXd::Zero(n);
  const VectorXd resid = data.y() - data.X() * res.beta;
  for (Index i : S_phi) res.outliers.phi_hat(i) = resid(i);
  res.k_n = static_cast<Index>(S_phi.size());
  return res;
}

}  // namespace drsr
