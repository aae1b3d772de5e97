#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace drsr;
using namespace drsr::test;

TEST(RestrictedLoglik, MatchesDenseOracle) {
  SplitMix64 g(91);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd X = random_matrix(g, 10, 2);
    X.col(0).setOnes();
    const VectorXd y = random_vector(g, 10) * 2.0;
    for (double omega : {0.0, 0.3, 4.0, 150.0}) {
      const Index i = static_cast<Index>(g.below(10));
      EXPECT_NEAR(restricted_loglik(X, y, i, omega), dense_reml(X, y, i, omega), 1e-9);
    }
  }
}

TEST(RestrictedLoglik, ZeroOmegaIsHomoscedasticReml) {
  SplitMix64 g(92);
  const MatrixXd X = random_matrix(g, 15, 3);
  const VectorXd y = random_vector(g, 15);
  const double a = restricted_loglik(X, y, 4, 0.0);
  for (Index i = 0; i < 15; ++i) EXPECT_NEAR(restricted_loglik(X, y, i, 0.0), a, 1e-12);
  EXPECT_THROW(restricted_loglik(X, y, 4, -0.1), ParameterError);
}

namespace {

double grid_argmax(const MatrixXd& X, const VectorXd& y, Index i) {
  const RemlProfile prof(X, y);
  double best = prof.loglik(i, 0.0), arg = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double omega = std::pow(10.0, -4.0 + 12.0 * k / 9999.0);
    const double v = prof.loglik(i, omega);
    if (v > best) {
      best = v;
      arg = omega;
    }
  }
  return arg;
}

}  // namespace

TEST(SingleWeight, MatchesGridSearch) {
  SplitMix64 g(93);
  for (int rep = 0; rep < 10; ++rep) {
    MatrixXd X = random_matrix(g, 50, 3);
    X.col(0).setOnes();
    VectorXd y = X * Eigen::Vector3d(1, 2, -1) + random_vector(g, 50);
    y(7) += 6.0 + 4.0 * g.uniform();
    const SingleWeight w = estimate_single_weight(X, y, 7);
    const double grid = grid_argmax(X, y, 7);
    ASSERT_GT(grid, 0.0);
    EXPECT_NEAR(w.omega_hat, grid, 0.02 * grid);
    EXPECT_NEAR(w.weight, 1.0 / (1.0 + w.omega_hat), 1e-15);
    EXPECT_FALSE(w.at_bound);
    // Interior optimum: derivative vanishes.
    const RemlProfile prof(X, y);
    const double h = 1e-6 * w.omega_hat;
    const double d = (prof.loglik(7, w.omega_hat + h) - prof.loglik(7, w.omega_hat - h)) / (2 * h);
    EXPECT_LE(std::abs(d), 1e-4);
  }
}

TEST(SingleWeight, SmallResidualGivesUnitWeight) {
  SplitMix64 g(94);
  MatrixXd X = random_matrix(g, 30, 2);
  X.col(0).setOnes();
  VectorXd y = X * Eigen::Vector2d(1, 1) + random_vector(g, 30);
  const OlsFit f(X, y);
  y(5) -= f.residuals()(5);  // residual pulled to ~0
  const SingleWeight w = estimate_single_weight(X, y, 5);
  EXPECT_EQ(w.omega_hat, 0.0);
  EXPECT_EQ(w.weight, 1.0);
}

TEST(SingleWeight, InflatingResponseRaisesOmega) {
  SplitMix64 g(95);
  MatrixXd X = random_matrix(g, 40, 2);
  X.col(0).setOnes();
  VectorXd y = X * Eigen::Vector2d(0.0, 1.0) + random_vector(g, 40);
  y(3) = 4.0;
  const double a = estimate_single_weight(X, y, 3).omega_hat;
  y(3) *= 10.0;
  const double b = estimate_single_weight(X, y, 3).omega_hat;
  EXPECT_GT(b, a);
}

TEST(SingleWeight, MonotoneInDeletionResidual) {
  SplitMix64 g(96);
  MatrixXd X = random_matrix(g, 40, 2);
  X.col(0).setOnes();
  VectorXd y = X * Eigen::Vector2d(0.5, 1.0) + random_vector(g, 40);
  double prev = 2.0;
  for (double shift = 0.0; shift <= 30.0; shift += 1.5) {
    VectorXd ys = y;
    ys(11) += shift;
    const double w = estimate_single_weight(X, ys, 11).weight;
    EXPECT_GT(w, 0.0);
    EXPECT_LE(w, 1.0);
    EXPECT_LE(w, prev + 1e-12);
    prev = w;
  }
}

TEST(SingleWeight, HugeResidualFlagsBound) {
  SplitMix64 g(97);
  MatrixXd X = random_matrix(g, 20, 2);
  X.col(0).setOnes();
  VectorXd y = X * Eigen::Vector2d(1, 1) + 1e-6 * random_vector(g, 20);
  y(0) += 1e6;
  const SingleWeight w = estimate_single_weight(X, y, 0);
  EXPECT_TRUE(w.at_bound);
  EXPECT_EQ(w.omega_hat, kOmegaUpperBound);
}

TEST(PluginWeight, Formula) {
  EXPECT_EQ(plugin_weight(0.0, 2.0, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(plugin_weight(2.0, 4.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(1.0 / (1.0 + 9.0), 0.1);
  EXPECT_THROW(plugin_weight(1.0, 0.0, 0.1), ParameterError);
  EXPECT_THROW(plugin_weight(1.0, 1.0, -0.1), ParameterError);
}

TEST(ViomWeights, RowSetPerUnit) {
  SplitMix64 g(98);
  const Dataset d = random_dataset(g, 30, 3, Eigen::Vector3d(1, 2, -1), 1.0);
  const ViomWeights w = estimate_viom_weights(d, {0, 1, 2}, {4}, {2, 9});
  ASSERT_EQ(w.fits.size(), 2u);
  IndexSet rows = complement({2, 4, 9}, 30);
  rows.push_back(9);
  std::sort(rows.begin(), rows.end());
  const Index pos = std::lower_bound(rows.begin(), rows.end(), 9) - rows.begin();
  const SingleWeight direct = estimate_single_weight(select_rows(d.X(), rows), select_rows(d.y(), rows), pos);
  EXPECT_EQ(w.fits[1].omega_hat, direct.omega_hat);
  const ViomWeights par = estimate_viom_weights(d, {0, 1, 2}, {4}, {2, 9}, 3);
  EXPECT_EQ(par.fits[0].omega_hat, w.fits[0].omega_hat);
  EXPECT_EQ(par.fits[1].omega_hat, w.fits[1].omega_hat);
}

TEST(RefitWithWeights, UnitAndBinaryWeights) {
  SplitMix64 g(99);
  const Dataset d = random_dataset(g, 20, 3, Eigen::Vector3d(1, 2, 0), 1.0);
  const FitResult a = refit_with_weights(d, {0, 1}, {}, VectorXd::Ones(20));
  const VectorXd ols = OlsFit(select_cols(d.X(), {0, 1}), d.y()).beta();
  EXPECT_LT((a.beta.head(2) - ols).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.beta(2), 0.0);
  VectorXd w = VectorXd::Ones(20);
  w(3) = w(8) = 0.0;
  const FitResult b = refit_with_weights(d, {0, 1}, {3, 8}, w);
  const IndexSet keep = complement({3, 8}, 20);
  const VectorXd del = OlsFit(select_rows(select_cols(d.X(), {0, 1}), keep), select_rows(d.y(), keep)).beta();
  EXPECT_LT((b.beta.head(2) - del).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(b.sigma2_hat, OlsFit(select_rows(select_cols(d.X(), {0, 1}), keep), select_rows(d.y(), keep)).rss() / 16.0,
              1e-12);
  EXPECT_THROW(refit_with_weights(d, {0, 1}, {3}, VectorXd::Ones(20)), ParameterError);
}

TEST(RefitWithWeights, MixedWeightsMatchOracle) {
  SplitMix64 g(100);
  const Dataset d = random_dataset(g, 8, 2, Eigen::Vector2d(1, 2), 1.0);
  VectorXd w(8);
  w << 1, 0.3, 1, 0.7, 0.05, 1, 1, 0.5;
  const FitResult f = refit_with_weights(d, {0, 1}, {}, w);
  EXPECT_LT((f.beta - normal_equations(d.X(), d.y(), w)).cwiseAbs().maxCoeff(), 1e-10);
  const VectorXd e = d.y() - d.X() * f.beta;
  EXPECT_NEAR(f.sigma2_hat, (w.array() * e.array().square()).sum() / 6.0 / (w.sum() / 8.0), 1e-12);
}

TEST(SingleWeight, PositiveExactlyWhenScaledResidualExceedsOne) {
  SplitMix64 g(101);
  const Dataset d = random_dataset(g, 200, 3, Eigen::Vector3d(1, 2, -1), 1.0);
  const RemlProfile prof(d.X(), d.y());
  const OlsFit& f = prof.ols();
  const double s2 = f.rss() / 197.0;
  VectorXd w(200);
  for (Index i = 0; i < 200; ++i) {
    const double z = f.residuals()(i) * f.residuals()(i) / ((1.0 - f.hat()(i)) * s2);
    const SingleWeight sw = estimate_single_weight(prof, i);
    if (std::abs(z - 1.0) > 1e-3) {
      EXPECT_EQ(sw.omega_hat > 0.0, z > 1.0) << "unit " << i;
    }
    w(i) = z > 1.0 ? 1.0 : sw.weight;
  }
  // Units that look clean keep weight one, so the refit on them is OLS.
  EXPECT_LT((refit_with_weights(d, {0, 1, 2}, {}, w).beta - f.beta()).cwiseAbs().maxCoeff(), 1e-3);
}
