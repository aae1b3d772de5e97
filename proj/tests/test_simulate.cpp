#include "helpers.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace drsr;
using namespace drsr::test;

TEST(MseDecomposition, IdentityOnRandomDraws) {
  SplitMix64 g(131);
  for (int rep = 0; rep < 20; ++rep) {
    const Index t = 2 + static_cast<Index>(g.below(40)), p = 1 + static_cast<Index>(g.below(6));
    const MatrixXd est = random_matrix(g, t, p) * (1.0 + 10.0 * g.uniform());
    const VectorXd truth = random_vector(g, p);
    const MseSplit s = mse_decomposition(est, truth);
    for (Index j = 0; j < p; ++j) EXPECT_NEAR(s.mse(j), s.variance(j) + s.bias2(j), 1e-12 * std::max(1.0, s.mse(j)));
    EXPECT_NEAR(s.mse_avg, s.variance_avg + s.bias2_avg, 1e-12 * std::max(1.0, s.mse_avg));
  }
  EXPECT_THROW(mse_decomposition(MatrixXd::Zero(1, 2), VectorXd::Zero(2)), ParameterError);
  EXPECT_THROW(mse_decomposition(MatrixXd::Zero(3, 2), VectorXd::Zero(3)), ParameterError);
}

TEST(DetectionRates, HandCounts) {
  SplitMix64 g(132);
  for (int rep = 0; rep < 20; ++rep) {
    const Index total = 5 + static_cast<Index>(g.below(30));
    IndexSet det, tru;
    for (Index i = 0; i < total; ++i) {
      if (g.uniform() < 0.3) det.push_back(i);
      if (g.uniform() < 0.25) tru.push_back(i);
    }
    Index fp = 0, fn = 0, clean = 0, dirty = 0;
    for (Index i = 0; i < total; ++i) {
      const bool d = std::find(det.begin(), det.end(), i) != det.end();
      const bool t = std::find(tru.begin(), tru.end(), i) != tru.end();
      if (t) {
        ++dirty;
        fn += !d;
      } else {
        ++clean;
        fp += d;
      }
    }
    const Rates r = detection_rates(det, tru, total);
    ASSERT_EQ(r.fpr.has_value(), clean > 0);
    ASSERT_EQ(r.fnr.has_value(), dirty > 0);
    if (r.fpr) {
      EXPECT_EQ(*r.fpr, static_cast<double>(fp) / static_cast<double>(clean));
    }
    if (r.fnr) {
      EXPECT_EQ(*r.fnr, static_cast<double>(fn) / static_cast<double>(dirty));
    }
  }
  EXPECT_FALSE(detection_rates({}, {}, 4).fnr.has_value());
  EXPECT_THROW(detection_rates({4}, {}, 4), ParameterError);
}

TEST(PredictionErrors, TrimmedMean) {
  VectorXd y(10), yp = VectorXd::Zero(10);
  for (Index i = 0; i < 10; ++i) y(i) = static_cast<double>(i + 1);
  const PredictionErrors e = prediction_errors(y, yp);
  EXPECT_DOUBLE_EQ(e.mape, 5.5);
  // Largest squared error (100) dropped: mean of 1..81 squares over 9.
  EXPECT_DOUBLE_EQ(e.tmspe, 285.0 / 9.0);
}

namespace {

Scenario small_scenario() {
  Scenario sc;
  sc.name = "t";
  sc.n_grid = {40};
  sc.p = 4;
  sc.p0 = 2;
  sc.mv_frac = 0.1;
  sc.mm_frac = 0.05;
  sc.mu_eps = -10.0;
  sc.mu_x = 10.0;
  sc.reps = 4;
  sc.n_starts = 40;
  sc.lambda_grid_size = 4;
  return sc;
}

}  // namespace

TEST(Generate, ReproducibleAndShaped) {
  const Scenario sc = small_scenario();
  const Replicate a = generate(sc, 40, 3), b = generate(sc, 40, 3), c = generate(sc, 40, 4);
  EXPECT_EQ(a.data.X(), b.data.X());
  EXPECT_EQ(a.data.y(), b.data.y());
  EXPECT_NE(a.data.y(), c.data.y());
  EXPECT_EQ(a.truth.outliers.viom.size(), 4u);
  EXPECT_EQ(a.truth.outliers.msom.size(), 2u);
  EXPECT_EQ(a.truth.support, (IndexSet{0, 1}));
  EXPECT_DOUBLE_EQ(a.truth.sigma2, 4.0 / 3.0);
  for (Index i : a.truth.outliers.msom) {
    EXPECT_EQ(a.truth.weights(i), 0.0);
    EXPECT_GT(a.data.X()(i, 1), 4.0);
  }
  for (Index i : a.truth.outliers.viom) EXPECT_DOUBLE_EQ(a.truth.weights(i), 0.1);
}

TEST(Generate, Validation) {
  Scenario sc = small_scenario();
  sc.mv_frac = 0.99;
  EXPECT_THROW(generate(sc, 40, 0), ParameterError);
  sc = small_scenario();
  sc.v = 1.0;
  EXPECT_THROW(generate(sc, 40, 0), ParameterError);
}

TEST(RunScenario, OptBeatsOlsOnContaminatedData) {
  Scenario sc = small_scenario();
  sc.n_grid = {100};
  sc.reps = 20;
  const ScenarioReport r = run_scenario(sc, {"opt", "ols"});
  double opt = -1, ols = -1;
  for (const auto& row : r.rows)
    if (row.metric == "mse_beta") (row.estimator == "opt" ? opt : ols) = row.value;
  ASSERT_GT(opt, 0.0);
  EXPECT_LT(opt, ols);
}

TEST(RunScenario, CsvRowsAndIdentity) {
  const Scenario sc = small_scenario();
  const ScenarioReport r = run_scenario(sc, {"ols", "scadws"});
  EXPECT_TRUE(r.errors.empty()) << (r.errors.empty() ? "" : r.errors.front());
  std::ostringstream a, b;
  write_metrics_csv(a, r);
  write_metrics_csv(b, run_scenario(sc, {"ols", "scadws"}, 3));
  EXPECT_EQ(a.str(), b.str());
  std::istringstream in(a.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "estimator,n,metric,value,variance,bias2,count,failed");
  int rows = 0;
  for (const auto& row : r.rows) {
    ++rows;
    if (row.variance) {
      ASSERT_TRUE(row.bias2.has_value());
      EXPECT_NEAR(row.value, *row.variance + *row.bias2, 1e-12 * std::max(1.0, row.value));
    }
  }
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 7) << line;
  }
  EXPECT_EQ(lines, rows);
  EXPECT_THROW(run_scenario(sc, {"mm"}), ParameterError);
}
