#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace drsr;

TEST(Scad, Derivative) {
  EXPECT_DOUBLE_EQ(scad_derivative(0.5, 1.0, 3.7), 1.0);
  EXPECT_NEAR(scad_derivative(2.0, 1.0, 3.7), 0.6296296296296297, 1e-15);
  EXPECT_DOUBLE_EQ(scad_derivative(5.0, 1.0, 3.7), 0.0);
  EXPECT_DOUBLE_EQ(scad_derivative(1.0, 1.0, 3.7), 1.0);  // left limit at the first kink
  EXPECT_THROW(scad_derivative(1.0, 1.0, 2.0), ParameterError);
  EXPECT_THROW(scad_derivative(-1.0, 1.0, 3.7), ParameterError);
}

TEST(Scad, Value) {
  EXPECT_DOUBLE_EQ(scad_value(0.0, 1.0, 3.7), 0.0);
  EXPECT_NEAR(scad_value(2.0, 1.0, 3.7), 1.8148148148148149, 1e-15);
  EXPECT_NEAR(scad_value(5.0, 1.0, 3.7), 2.35, 1e-15);
  EXPECT_THROW(scad_value(1.0, 1.0, 1.5), ParameterError);
}

TEST(Scad, ContinuityAndDerivativeConsistency) {
  const double lam = 1.3, a = 3.7;
  for (double t = 0.0; t < 8.0; t += 0.001) {
    const double h = 1e-3;
    EXPECT_LE(std::abs(scad_value(t + h, lam, a) - scad_value(t, lam, a)), lam * h + 1e-12);
  }
  for (double t = 0.01; t < 8.0; t += 0.0137) {
    if (std::abs(t - lam) < 1e-3 || std::abs(t - a * lam) < 1e-3) continue;
    const double h = 1e-6;
    const double num = (scad_value(t + h, lam, a) - scad_value(t - h, lam, a)) / (2 * h);
    EXPECT_NEAR(num, scad_derivative(t, lam, a), 1e-6) << "t=" << t;
  }
}

TEST(SoftThreshold, Examples) {
  EXPECT_DOUBLE_EQ(soft_threshold(3, 1), 2);
  EXPECT_DOUBLE_EQ(soft_threshold(-0.5, 1), 0);
  EXPECT_DOUBLE_EQ(soft_threshold(-3, 0), -3);
}

TEST(SoftThreshold, IsExactProximalMinimizer) {
  SplitMix64 g(31);
  for (int rep = 0; rep < 100; ++rep) {
    const double z = 6.0 * (g.uniform() - 0.5), t = 2.0 * g.uniform();
    const double s = soft_threshold(z, t);
    auto f = [&](double x) { return 0.5 * (x - z) * (x - z) + t * std::abs(x); };
    double best = std::numeric_limits<double>::infinity();
    for (double x = -4.0; x <= 4.0; x += 1e-4) best = std::min(best, f(x));
    EXPECT_LE(f(s), best + 1e-12);
  }
}

TEST(Lla, Weights) {
  PenaltySpec spec;
  spec.lambda = 1.0;
  EXPECT_EQ(lla_weights(VectorXd::Zero(4), spec), VectorXd::Ones(4));
  const VectorXd w = lla_weights((VectorXd(3) << 5.0, -2.0, 0.3).finished(), spec);
  EXPECT_DOUBLE_EQ(w(0), 0.0);
  EXPECT_NEAR(w(1), 0.6296296296296297, 1e-15);
  EXPECT_DOUBLE_EQ(w(2), 1.0);
  spec.family = PenaltyFamily::L1;
  EXPECT_THROW(lla_weights(VectorXd::Zero(2), spec), ParameterError);
}

TEST(Lla, WeightsNonincreasingInMagnitude) {
  PenaltySpec spec;
  spec.lambda = 0.7;
  VectorXd b(400);
  for (Index j = 0; j < 400; ++j) b(j) = 0.01 * static_cast<double>(j) * (j % 2 ? -1.0 : 1.0);
  const VectorXd w = lla_weights(b, spec);
  for (Index j = 1; j < 400; ++j) EXPECT_LE(w(j), w(j - 1) + 1e-15);
}

TEST(Condition1, Families) {
  std::vector<double> grid;
  for (int i = 0; i <= 1000; ++i) grid.push_back(0.01 * i);
  PenaltySpec scad;
  scad.lambda = 1.0;
  EXPECT_TRUE(condition1_check(scad, grid).all());
  PenaltySpec l1;
  l1.family = PenaltyFamily::L1;
  l1.lambda = 1.0;
  EXPECT_TRUE(condition1_check(l1, grid).all());
  PenaltySpec zero;
  zero.lambda = 0.0;
  const Condition1Report r = condition1_check(zero, grid);
  EXPECT_TRUE(r.all());
  EXPECT_TRUE(r.degenerate);
}

TEST(PenaltySpec, Validation) {
  PenaltySpec s;
  s.lambda = -1.0;
  EXPECT_THROW(s.validate(), ParameterError);
  s.lambda = 1.0;
  s.a = 2.0;
  EXPECT_THROW(s.validate(), ParameterError);
  PenaltySpec ad;
  ad.family = PenaltyFamily::AdaptiveL1;
  EXPECT_THROW(ad.validate(), ParameterError);
  ad.adaptive_weights = (VectorXd(2) << 1.0, -1.0).finished();
  EXPECT_THROW(ad.validate(), ParameterError);
}
