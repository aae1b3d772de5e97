#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace drsr {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Sorted, duplicate-free list of row or column indices.
using IndexSet = std::vector<Index>;

// ---------------------------------------------------------------------------
// Errors

class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class RankDeficientError : public std::runtime_error {
 public:
  RankDeficientError(const std::string& what, IndexSet columns)
      : std::runtime_error(what + describe(columns)), message_(what), columns_(std::move(columns)) {}

  const IndexSet& columns() const noexcept { return columns_; }
  /// Message without the column list.
  const std::string& message() const noexcept { return message_; }

 private:
  static std::string describe(const IndexSet& cols) {
    std::ostringstream os;
    os << " (dependent columns:";
    for (auto c : cols) os << ' ' << c;
    os << ')';
    return os.str();
  }
  std::string message_;
  IndexSet columns_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Dataset

/// Immutable regression input. When `intercept` is set, column 0 of X is the
/// all-ones column and is never penalized.
class Dataset {
 public:
  Dataset(MatrixXd X, VectorXd y, bool intercept) : X_(std::move(X)), y_(std::move(y)), intercept_(intercept) {
    if (X_.rows() < 1 || X_.cols() < 1) throw ParameterError("dataset: need n >= 1 and p >= 1");
    if (X_.rows() != y_.size()) throw ParameterError("dataset: X and y have different row counts");
    if (!X_.allFinite() || !y_.allFinite()) throw ParameterError("dataset: non-finite entries");
    if (intercept_ && !(X_.col(0).array() == 1.0).all())
      throw ParameterError("dataset: intercept flag set but column 0 is not all ones");
  }

  /// Prepends a column of ones to Z.
  static Dataset with_intercept(const MatrixXd& Z, VectorXd y) {
    MatrixXd X(Z.rows(), Z.cols() + 1);
    X.col(0).setOnes();
    X.rightCols(Z.cols()) = Z;
    return Dataset(std::move(X), std::move(y), true);
  }

  const MatrixXd& X() const noexcept { return X_; }
  const VectorXd& y() const noexcept { return y_; }
  bool intercept() const noexcept { return intercept_; }
  Index n() const noexcept { return X_.rows(); }
  Index p() const noexcept { return X_.cols(); }

 private:
  MatrixXd X_;
  VectorXd y_;
  bool intercept_;
};

// ---------------------------------------------------------------------------
// Penalty settings

enum class PenaltyFamily { SCAD, L1, AdaptiveL1 };

inline const char* to_string(PenaltyFamily f) {
  switch (f) {
    case PenaltyFamily::SCAD: return "scad";
    case PenaltyFamily::L1: return "l1";
    case PenaltyFamily::AdaptiveL1: return "adaptive_l1";
  }
  return "?";
}

struct PenaltySpec {
  PenaltyFamily family = PenaltyFamily::SCAD;
  double lambda = 0.0;
  double a = 3.7;
  std::optional<VectorXd> adaptive_weights;

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ParameterError("penalty: lambda must be finite and >= 0");
    if (family == PenaltyFamily::SCAD && !(a > 2.0)) throw ParameterError("penalty: SCAD requires a > 2");
    if (family == PenaltyFamily::AdaptiveL1) {
      if (!adaptive_weights) throw ParameterError("penalty: adaptive L1 requires weights");
      if (!adaptive_weights->allFinite() || (adaptive_weights->array() < 0.0).any())
        throw ParameterError("penalty: adaptive weights must be finite and >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Proxy matrices (diagonal representation)

struct ProxyMatrices {
  VectorXd m_r;      // diagonal of M_R
  VectorXd m_gamma;  // diagonal of M_gamma

  static ProxyMatrices identity(Index n) { return {VectorXd::Ones(n), VectorXd::Ones(n)}; }

  /// Default first-iteration proxies: log(n) * I for both.
  static ProxyMatrices log_n(Index n) {
    const double v = std::log(static_cast<double>(n));
    return {VectorXd::Constant(n, v), VectorXd::Constant(n, v)};
  }

  void validate(Index n) const {
    auto ok = [n](const VectorXd& v) {
      return v.size() == n && v.allFinite() && (v.array() > 0.0).all();
    };
    if (!ok(m_r)) throw ParameterError("proxy: m_r must be length n, finite and strictly positive");
    if (!ok(m_gamma)) throw ParameterError("proxy: m_gamma must be length n, finite and strictly positive");
  }
};

// ---------------------------------------------------------------------------
// Outlier sets and fit result

struct OutlierSets {
  IndexSet msom;         // S_phi
  IndexSet viom;         // S_gamma
  VectorXd phi_hat;      // length n, zero outside msom
  VectorXd gamma_hat;    // length n, zero outside viom
};

struct TuningRecord {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double a = 3.7;
  int step1_csteps = 0;
  int step2_iterations = 0;
};

struct FitResult {
  std::string method;
  VectorXd beta;                 // length p, zero outside support
  IndexSet support;              // S_beta
  OutlierSets outliers;
  VectorXd omega_hat;            // length n, REML variance-inflation per unit
  VectorXd weights;              // length n: 0 msom, (0,1) viom, 1 otherwise
  double sigma2_hat = 0.0;
  std::vector<double> objective_trace;   // step-1 trace (L1 phase then SCAD phase)
  std::vector<double> step2_trace;
  Index k_n = 0;
  TuningRecord tuning;
  double step1_objective = 0.0;
  double rss_h = 0.0;            // trimmed (proxy-weighted) RSS from step 1
  IndexSet deflagged;            // detected VIOMs moved back to the clean set (omega_hat = 0)
  IndexSet weight_at_bound;      // VIOMs whose omega_hat hit the upper bound
  std::string proxy_rule;        // how proxies were built / updated
  ProxyMatrices proxies;         // proxies used for the reported iteration
  std::vector<double> previous_objectives;  // objectives of earlier outer iterations
};

}  // namespace drsr
