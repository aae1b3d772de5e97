#pragma once

#include "drsr/types.hpp"

#include <algorithm>
#include <cmath>

namespace drsr {

inline void check_scad_args(double t, double lambda, double a) {
  if (!(a > 2.0)) throw ParameterError("SCAD: a must exceed 2");
  if (!(lambda >= 0.0)) throw ParameterError("SCAD: lambda must be >= 0");
  if (!(t >= 0.0)) throw ParameterError("SCAD: t must be >= 0");
}

/// R'_lambda(t). Kinks at t = lambda and t = a*lambda take the left limit.
inline double scad_derivative(double t, double lambda, double a) {
  check_scad_args(t, lambda, a);
  if (t <= lambda) return lambda;
  return std::max(0.0, (a * lambda - t) / (a - 1.0));
}

/// R_lambda(t), the integral of scad_derivative from 0.
inline double scad_value(double t, double lambda, double a) {
  check_scad_args(t, lambda, a);
  if (t <= lambda) return lambda * t;
  if (t <= a * lambda) return (2.0 * a * lambda * t - t * t - lambda * lambda) / (2.0 * (a - 1.0));
  return lambda * lambda * (a + 1.0) / 2.0;
}

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

/// Value of the penalty for coefficient j at magnitude t.
inline double penalty_value(const PenaltySpec& spec, double t, Index j = 0) {
  switch (spec.family) {
    case PenaltyFamily::SCAD: return scad_value(t, spec.lambda, spec.a);
    case PenaltyFamily::L1: return spec.lambda * t;
    case PenaltyFamily::AdaptiveL1: return spec.lambda * (*spec.adaptive_weights)(j) * t;
  }
  return 0.0;
}

/// Per-coefficient L1 weights of the local linear approximation at beta_current.
/// At beta = 0 every weight equals lambda, so the first LLA step is the lasso.
inline VectorXd lla_weights(const VectorXd& beta_current, const PenaltySpec& spec) {
  if (spec.family != PenaltyFamily::SCAD) throw ParameterError("lla_weights: SCAD penalty required");
  VectorXd w(beta_current.size());
  for (Index j = 0; j < beta_current.size(); ++j)
    w(j) = scad_derivative(std::abs(beta_current(j)), spec.lambda, spec.a);
  return w;
}

struct Condition1Report {
  bool zero_at_origin = false;
  bool nondecreasing = false;
  bool concave = false;
  bool positive_slope_at_origin = false;
  bool degenerate = false;  // lambda = 0, R identically zero

  bool all() const { return zero_at_origin && nondecreasing && concave && positive_slope_at_origin; }
};

/// Numerical check of the penalty regularity conditions on a sorted grid of t >= 0.
inline Condition1Report condition1_check(const PenaltySpec& spec, const std::vector<double>& grid) {
  spec.validate();
  Condition1Report rep;
  constexpr double tol = 1e-12;
  auto R = [&](double t) { return penalty_value(spec, t, 0); };
  rep.zero_at_origin = std::abs(R(0.0)) <= tol;
  rep.nondecreasing = true;
  rep.concave = true;
  for (size_t i = 1; i < grid.size(); ++i)
    if (R(grid[i]) < R(grid[i - 1]) - tol) rep.nondecreasing = false;
  // Secant slopes of a concave function are nonincreasing.
  for (size_t i = 2; i < grid.size(); ++i) {
    const double h1 = grid[i - 1] - grid[i - 2], h2 = grid[i] - grid[i - 1];
    if (h1 <= 0.0 || h2 <= 0.0) continue;
    const double s1 = (R(grid[i - 1]) - R(grid[i - 2])) / h1;
    const double s2 = (R(grid[i]) - R(grid[i - 1])) / h2;
    if (s2 > s1 + 1e-9 * std::max(1.0, std::abs(s1))) rep.concave = false;
  }
  rep.degenerate = spec.lambda == 0.0;
  if (rep.degenerate) {
    rep.positive_slope_at_origin = true;
  } else {
    const double h = 1e-9;
    rep.positive_slope_at_origin = (R(h) - R(0.0)) / h > 0.0;
  }
  return rep;
}

}  // namespace drsr
