#pragma once

#include "drsr/drsr.hpp"

#include <Eigen/LU>

namespace drsr::test {

inline MatrixXd random_matrix(SplitMix64& g, Index n, Index p) {
  MatrixXd A(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) A(i, j) = g.normal();
  return A;
}

inline VectorXd random_vector(SplitMix64& g, Index n) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = g.normal();
  return v;
}

/// Intercept plus p-1 Gaussian columns; y = X beta + sigma * noise.
inline Dataset random_dataset(SplitMix64& g, Index n, Index p, const VectorXd& beta, double sigma) {
  MatrixXd X(n, p);
  X.col(0).setOnes();
  X.rightCols(p - 1) = random_matrix(g, n, p - 1);
  VectorXd y = X * beta + sigma * random_vector(g, n);
  return Dataset(std::move(X), std::move(y), true);
}

/// Normal-equations weighted least squares via a dense LU solve.
inline VectorXd normal_equations(const MatrixXd& X, const VectorXd& y, const VectorXd& w) {
  const MatrixXd A = X.transpose() * w.asDiagonal() * X;
  const VectorXd b = X.transpose() * w.asDiagonal() * y;
  return A.fullPivLu().solve(b);
}

/// Dense projector I - X (X^T X)^{-1} X^T.
inline MatrixXd dense_projector(const MatrixXd& X) {
  const Index n = X.rows();
  return MatrixXd::Identity(n, n) - X * (X.transpose() * X).fullPivLu().inverse() * X.transpose();
}

/// REML with sigma^2 profiled, evaluated from explicit n x n matrices.
inline double dense_reml(const MatrixXd& X, const VectorXd& y, Index i, double omega) {
  const Index n = X.rows(), k = X.cols();
  MatrixXd V = MatrixXd::Identity(n, n);
  V(i, i) += omega;
  const MatrixXd Vi = V.inverse();
  const MatrixXd XtViX = X.transpose() * Vi * X;
  const MatrixXd P = Vi - Vi * X * XtViX.inverse() * X.transpose() * Vi;
  const double dof = static_cast<double>(n - k);
  const double s2 = y.dot(P * y) / dof;
  const double pi = 3.14159265358979323846;
  return -0.5 * (dof * std::log(2.0 * pi * s2) + std::log(V.determinant()) + std::log(XtViX.determinant()) + dof);
}

/// Weighted-lasso stationarity residual: max over coordinates of the KKT violation.
inline double kkt_violation(const MatrixXd& X, const VectorXd& y, const VectorXd& w, const VectorXd& l1,
                            const VectorXd& beta) {
  const VectorXd grad = -(X.transpose() * w.asDiagonal() * (y - X * beta));
  double worst = 0.0;
  for (Index j = 0; j < beta.size(); ++j) {
    if (beta(j) == 0.0)
      worst = std::max(worst, std::abs(grad(j)) - l1(j));
    else
      worst = std::max(worst, std::abs(grad(j) + (beta(j) > 0 ? 1.0 : -1.0) * l1(j)));
  }
  return worst;
}

inline std::vector<IndexSet> combinations(Index n, Index k) {
  std::vector<IndexSet> out;
  IndexSet c(static_cast<size_t>(k));
  for (Index i = 0; i < k; ++i) c[static_cast<size_t>(i)] = i;
  while (true) {
    out.push_back(c);
    Index i = k - 1;
    while (i >= 0 && c[static_cast<size_t>(i)] == n - k + i) --i;
    if (i < 0) break;
    ++c[static_cast<size_t>(i)];
    for (Index j = i + 1; j < k; ++j) c[static_cast<size_t>(j)] = c[static_cast<size_t>(j - 1)] + 1;
  }
  return out;
}

/// Exhaustive minimum of the trimmed objective over every trimming set of size k_n
/// (identity proxy, L1 penalty, each subset solved by coordinate descent).
inline double exhaustive_trimmed_min(const Dataset& d, Index k_n, double lambda) {
  const Index n = d.n();
  VectorXd l1 = VectorXd::Constant(d.p(), lambda * static_cast<double>(n - k_n));
  l1(0) = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const IndexSet& trim : combinations(n, k_n)) {
    const IndexSet H = complement(trim, n);
    const MatrixXd X = select_rows(d.X(), H);
    const VectorXd y = select_rows(d.y(), H);
    const CdResult r = penalized_wls_cd(X, y, VectorXd::Ones(X.rows()), l1, 1e-13, 200000);
    const double obj = 0.5 * (y - X * r.beta).squaredNorm() + l1.dot(r.beta.cwiseAbs());
    best = std::min(best, obj);
  }
  return best;
}

}  // namespace drsr::test
