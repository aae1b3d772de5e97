#pragma once

// Dense least-squares kernels shared by the solvers. Everything goes through a
// Householder QR of the (row-weighted) design; normal equations are never formed.

#include "drsr/types.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>

namespace drsr {

inline constexpr double kRankTolerance = 1e-10;

/// Thin QR factorization with a rank check on the diagonal of R.
class QrFactor {
 private:
  auto upper() const {
    return qr_.matrixQR().topLeftCorner(cols_, cols_).template triangularView<Eigen::Upper>();
  }

 public:
  explicit QrFactor(const MatrixXd& A) : qr_(A), rows_(A.rows()), cols_(A.cols()) {
    if (cols_ > rows_) {
      IndexSet extra;
      for (Index j = rows_; j < cols_; ++j) extra.push_back(j);
      throw RankDeficientError("QR: more columns than rows", extra);
    }
    double dmax = 0.0;
    for (Index j = 0; j < cols_; ++j) dmax = std::max(dmax, std::abs(qr_.matrixQR()(j, j)));
    IndexSet bad;
    for (Index j = 0; j < cols_; ++j)
      if (!(std::abs(qr_.matrixQR()(j, j)) >= kRankTolerance * dmax) || dmax == 0.0) bad.push_back(j);
    if (!bad.empty()) throw RankDeficientError("QR: rank-deficient design", bad);
  }

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }

  /// Least-squares coefficients for right-hand side b.
  VectorXd solve(const VectorXd& b) const {
    VectorXd qtb = qr_.householderQ().adjoint() * b;
    return upper().solve(qtb.head(cols_));
  }

  /// (A^T A)^{-1} v = R^{-1} R^{-T} v.
  VectorXd gram_solve(const VectorXd& v) const {
    VectorXd t = upper().adjoint().solve(v);
    return upper().solve(t);
  }

  /// Thin Q (rows x cols).
  MatrixXd thin_q() const {
    return qr_.householderQ() * MatrixXd::Identity(rows_, cols_);
  }

  /// Diagonal of the hat matrix A (A^T A)^{-1} A^T.
  VectorXd hat_diagonal() const { return thin_q().rowwise().squaredNorm(); }

  /// log det(A^T A).
  double log_gram_det() const {
    double s = 0.0;
    for (Index j = 0; j < cols_; ++j) s += 2.0 * std::log(std::abs(qr_.matrixQR()(j, j)));
    return s;
  }

  /// ||(I - H) v||^2, computed from the trailing part of Q^T v.
  double residual_quadratic(const VectorXd& v) const {
    VectorXd qtv = qr_.householderQ().adjoint() * v;
    return qtv.tail(rows_ - cols_).squaredNorm();
  }

 private:

  Eigen::HouseholderQR<MatrixXd> qr_;
  Index rows_;
  Index cols_;
};

struct WlsResult {
  VectorXd beta;
  VectorXd residuals;  // y - X beta on every row, unweighted
  double sigma2 = std::numeric_limits<double>::quiet_NaN();
};

/// Weighted least squares via QR of sqrt(W) X. sigma2 uses
/// sum w e^2 / (#{w > 0} - k); it is NaN when that count does not exceed k.
inline WlsResult wls_fit(const MatrixXd& X, const VectorXd& y, const VectorXd& w) {
  if (X.rows() != y.size() || y.size() != w.size()) throw ParameterError("wls_fit: dimension mismatch");
  if ((w.array() < 0.0).any() || !w.allFinite()) throw ParameterError("wls_fit: weights must be finite and >= 0");
  const VectorXd sw = w.cwiseSqrt();
  QrFactor qr(sw.asDiagonal() * X);
  WlsResult out;
  out.beta = qr.solve(sw.cwiseProduct(y));
  out.residuals = y - X * out.beta;
  const Index used = (w.array() > 0.0).count();
  const Index dof = used - X.cols();
  if (dof > 0) out.sigma2 = (w.array() * out.residuals.array().square()).sum() / static_cast<double>(dof);
  return out;
}

/// Ordinary least-squares fit that keeps its factorization around for
/// leave-one-out and rank-one reweighting identities.
class OlsFit {
 public:
  OlsFit(const MatrixXd& X, const VectorXd& y) : X_(X), qr_(X) {
    beta_ = qr_.solve(y);
    residuals_ = y - X * beta_;
    hat_ = qr_.hat_diagonal();
    rss_ = residuals_.squaredNorm();
  }

  const MatrixXd& X() const { return X_; }
  const VectorXd& beta() const { return beta_; }
  const VectorXd& residuals() const { return residuals_; }
  const VectorXd& hat() const { return hat_; }
  double rss() const { return rss_; }
  Index n() const { return X_.rows(); }
  Index k() const { return X_.cols(); }
  const QrFactor& qr() const { return qr_; }

 private:
  MatrixXd X_;
  QrFactor qr_;
  VectorXd beta_;
  VectorXd residuals_;
  VectorXd hat_;
  double rss_ = 0.0;
};

/// WLS coefficients when unit i alone gets weight w_i and every other unit
/// weight 1, obtained from the OLS fit by a rank-one correction.
inline VectorXd single_weight_downdate(const OlsFit& ols, Index i, double w_i) {
  if (i < 0 || i >= ols.n()) throw ParameterError("single_weight_downdate: unit index out of range");
  if (!(w_i >= 0.0 && w_i <= 1.0)) throw ParameterError("single_weight_downdate: weight must lie in [0, 1]");
  const double shrink = 1.0 - w_i;
  if (shrink == 0.0) return ols.beta();
  const double denom = 1.0 - shrink * ols.hat()(i);
  if (std::abs(denom) < 1e-12) throw NumericalError("single_weight_downdate: degenerate leverage (1 - (1 - w) h = 0)");
  const VectorXd g = ols.qr().gram_solve(ols.X().row(i).transpose());
  return ols.beta() - g * (ols.residuals()(i) * shrink / denom);
}

struct DeletionResiduals {
  VectorXd t;                  // NaN where undefined
  std::vector<bool> undefined; // leverage 1 (or no residual degrees of freedom left)
};

/// Externally studentized (deletion) residuals from the leave-one-out identities.
inline DeletionResiduals deletion_residuals(const MatrixXd& X, const VectorXd& y) {
  const Index n = X.rows(), k = X.cols();
  if (n < k + 2) throw ParameterError("deletion_residuals: need n >= p + 2");
  OlsFit ols(X, y);
  DeletionResiduals out{VectorXd(n), std::vector<bool>(static_cast<size_t>(n), false)};
  const double dof = static_cast<double>(n - k - 1);
  for (Index i = 0; i < n; ++i) {
    const double u = 1.0 - ols.hat()(i);
    const double e = ols.residuals()(i);
    if (u < 1e-12) {
      out.t(i) = std::numeric_limits<double>::quiet_NaN();
      out.undefined[static_cast<size_t>(i)] = true;
      continue;
    }
    const double s2 = (ols.rss() - e * e / u) / dof;
    if (!(s2 > 0.0)) {
      out.t(i) = std::numeric_limits<double>::quiet_NaN();
      out.undefined[static_cast<size_t>(i)] = true;
      continue;
    }
    out.t(i) = e / std::sqrt(s2 * u);
  }
  return out;
}

/// v^T P v with P = I - Xbar (Xbar^T Xbar)^{-1} Xbar^T.
inline double projection_residual_quadratic(const MatrixXd& Xbar, const VectorXd& v) {
  if (Xbar.rows() != v.size()) throw ParameterError("projection_residual_quadratic: dimension mismatch");
  return QrFactor(Xbar).residual_quadratic(v);
}

// Row/column selection helpers.

inline MatrixXd select_rows(const MatrixXd& A, const IndexSet& rows) {
  MatrixXd out(static_cast<Index>(rows.size()), A.cols());
  for (size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = A.row(rows[r]);
  return out;
}

inline VectorXd select_rows(const VectorXd& v, const IndexSet& rows) {
  VectorXd out(static_cast<Index>(rows.size()));
  for (size_t r = 0; r < rows.size(); ++r) out(static_cast<Index>(r)) = v(rows[r]);
  return out;
}

inline MatrixXd select_cols(const MatrixXd& A, const IndexSet& cols) {
  MatrixXd out(A.rows(), static_cast<Index>(cols.size()));
  for (size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Index>(c)) = A.col(cols[c]);
  return out;
}

inline IndexSet complement(const IndexSet& set, Index n) {
  IndexSet out;
  out.reserve(static_cast<size_t>(n) - std::min(set.size(), static_cast<size_t>(n)));
  size_t s = 0;
  for (Index i = 0; i < n; ++i) {
    while (s < set.size() && set[s] < i) ++s;
    if (s < set.size() && set[s] == i) continue;
    out.push_back(i);
  }
  return out;
}

inline IndexSet iota_set(Index n) {
  IndexSet out(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) out[static_cast<size_t>(i)] = i;
  return out;
}

}  // namespace drsr
