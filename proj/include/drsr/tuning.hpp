#pragma once

// Robust BIC for trimmed fits, its truncated-normal consistency factor, and
// grid search over (k_n, lambda).

#include "drsr/step1.hpp"
#include "drsr/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace drsr {

// ---------------------------------------------------------------------------
// Gaussian functions

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against erfc.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0, 1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double plow = 0.02425, phigh = 1.0 - plow;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement; work in the tail that keeps the CDF difference accurate.
  const double e = p < 0.5 ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// Variance of the standard normal truncated to its central h/n mass.
inline double consistency_factor(Index h, Index n) {
  if (n < 1 || h < 1 || h > n) throw ParameterError("consistency_factor: need 1 <= h <= n");
  if (h == n) return 1.0;
  const double dn = static_cast<double>(n), dh = static_cast<double>(h);
  const double q = normal_quantile((dn + dh) / (2.0 * dn));
  return 1.0 - (2.0 * dn / dh) * q * normal_pdf(q);
}

/// Robust BIC of a trimmed fit; larger is better.
inline double bicr(double rss_h, Index h, Index n, Index k_p, Index k_n) {
  if (!(rss_h > 0.0) || !std::isfinite(rss_h)) throw NumericalError("bicr: degenerate fit (trimmed RSS must be > 0)");
  const double dn = static_cast<double>(n);
  return -dn * std::log(rss_h / (consistency_factor(h, n) * static_cast<double>(h))) -
         static_cast<double>(k_p + k_n) * std::log(dn);
}

// ---------------------------------------------------------------------------
// Grid search

struct GridRow {
  Index k_n = 0;
  double lambda = 0.0;
  Index k_p = 0;
  double bicr = -std::numeric_limits<double>::infinity();
  double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
  Index n_viom = 0;
  bool ok = false;
  std::string error;
};

struct GridTable {
  std::vector<GridRow> rows;  // sorted by (k_n, lambda)
  Index best = -1;            // row index of the argmax
  std::vector<FitResult> fits;  // parallel to rows (empty FitResult on failure)

  const GridRow& best_row() const { return rows.at(static_cast<size_t>(best)); }
};

/// Maps a grid point (k_n, lambda) to a fit. The fit must report support and
/// the trimmed RSS on its retained rows (rss_h).
using GridEstimator = std::function<FitResult(Index k_n, double lambda)>;

inline GridTable grid_search(Index n, std::vector<Index> kn_grid, std::vector<double> lambda_grid,
                             const GridEstimator& est, int jobs = 1) {
  if (kn_grid.empty() || lambda_grid.empty()) throw ParameterError("grid_search: empty grid");
  std::sort(kn_grid.begin(), kn_grid.end());
  std::sort(lambda_grid.begin(), lambda_grid.end());
  GridTable t;
  for (Index k : kn_grid)
    for (double l : lambda_grid) {
      GridRow r;
      r.k_n = k;
      r.lambda = l;
      t.rows.push_back(r);
    }
  t.fits.resize(t.rows.size());

  auto eval = [&](size_t idx) {
    GridRow& r = t.rows[idx];
    try {
      FitResult f = est(r.k_n, r.lambda);
      r.k_p = static_cast<Index>(f.support.size());
      r.sigma2_hat = f.sigma2_hat;
      r.n_viom = static_cast<Index>(f.outliers.viom.size());
      r.bicr = bicr(f.rss_h, n - r.k_n, n, r.k_p, r.k_n);
      r.ok = true;
      t.fits[idx] = std::move(f);
    } catch (const std::exception& e) {
      r.ok = false;
      r.error = e.what();
    }
  };
  const int nj = std::max(1, std::min<int>(jobs, static_cast<int>(t.rows.size())));
  if (nj == 1) {
    for (size_t i = 0; i < t.rows.size(); ++i) eval(i);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < nj; ++j)
      pool.emplace_back([&, j] {
        for (size_t i = static_cast<size_t>(j); i < t.rows.size(); i += static_cast<size_t>(nj)) eval(i);
      });
    for (auto& th : pool) th.join();
  }

  for (size_t i = 0; i < t.rows.size(); ++i) {
    const GridRow& r = t.rows[i];
    if (!r.ok) continue;
    if (t.best < 0) {
      t.best = static_cast<Index>(i);
      continue;
    }
    const GridRow& b = t.rows[static_cast<size_t>(t.best)];
    if (r.bicr > b.bicr || (r.bicr == b.bicr && r.k_p + r.k_n < b.k_p + b.k_n)) t.best = static_cast<Index>(i);
  }
  if (t.best < 0) {
    std::string msg = "grid_search: every grid point failed";
    if (!t.rows.empty()) msg += " (first error: " + t.rows.front().error + ")";
    throw ConvergenceError(msg);
  }
  return t;
}

inline void write_grid_csv(std::ostream& os, const GridTable& t) {
  os << "k_n,lambda,k_p,bicr,sigma2_hat,n_viom\n";
  os.precision(17);
  for (const auto& r : t.rows) {
    os << r.k_n << ',' << r.lambda << ',' << r.k_p << ',';
    if (r.ok)
      os << r.bicr << ',' << r.sigma2_hat << ',' << r.n_viom << '\n';
    else
      os << "NA,NA,NA\n";
  }
}

// ---------------------------------------------------------------------------
// Lambda grid

/// Smallest lambda that zeroes every penalized coefficient of the trimmed
/// lasso, evaluated on the n - k_n rows whose response is closest to the
/// (proxy-weighted) median so that gross outliers do not inflate it.
inline double robust_lambda_max(const Dataset& data, const ProxyMatrices& proxy, Index k_n) {
  const Dataset star = transform_by_proxy(data, proxy);
  const Index n = data.n(), h = n - k_n;
  std::vector<double> ys(data.y().data(), data.y().data() + n);
  std::nth_element(ys.begin(), ys.begin() + n / 2, ys.end());
  const double med = ys[static_cast<size_t>(n / 2)];
  IndexSet idx = iota_set(n);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return std::abs(data.y()(a) - med) < std::abs(data.y()(b) - med); });
  idx.resize(static_cast<size_t>(h));
  std::sort(idx.begin(), idx.end());
  const MatrixXd X = select_rows(star.X(), idx);
  const VectorXd y = select_rows(star.y(), idx);
  VectorXd r = y;
  if (data.intercept()) {
    const VectorXd c = X.col(0);
    r = y - c * (c.dot(y) / c.squaredNorm());
  }
  double lmax = 0.0;
  for (Index j = data.intercept() ? 1 : 0; j < X.cols(); ++j) lmax = std::max(lmax, std::abs(X.col(j).dot(r)));
  return lmax / static_cast<double>(h);
}

/// Log-spaced grid from lambda_max down to ratio * lambda_max (descending).
inline std::vector<double> lambda_grid(double lambda_max, int size, double ratio) {
  if (size < 1 || !(ratio > 0.0 && ratio < 1.0) || !(lambda_max > 0.0))
    throw ParameterError("lambda_grid: need size >= 1, ratio in (0,1), lambda_max > 0");
  std::vector<double> g;
  for (int s = 0; s < size; ++s) {
    const double f = size == 1 ? 0.0 : static_cast<double>(s) / (size - 1);
    g.push_back(lambda_max * std::pow(ratio, f));
  }
  return g;
}

}  // namespace drsr
