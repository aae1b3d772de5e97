#include "helpers.hpp"

#include <drsr/io.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace drsr;
using namespace drsr::test;

namespace {

std::string parse_error(const std::string& text) {
  std::istringstream in(text);
  try {
    parse_csv(in);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Csv, ParsesHeaderAndValues) {
  std::istringstream in("\xEF\xBB\xBF" "a, y ,b\n1,2,3\n\n4.5,-1e2,6\n");
  const NumericTable t = parse_csv(in);
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "y", "b"}));
  EXPECT_EQ(t.values.rows(), 2);
  EXPECT_EQ(t.values(1, 1), -100.0);
  const NamedDataset d = dataset_from_table(t, "y", true);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"(intercept)", "a", "b"}));
  EXPECT_EQ(d.data.X()(1, 2), 6.0);
  EXPECT_EQ(d.data.y()(0), 2.0);
  EXPECT_THROW(dataset_from_table(t, "z", true), InputError);
}

TEST(Csv, ErrorsNameRowAndColumn) {
  EXPECT_NE(parse_error("a,b\n1,2\n3,x\n").find("row 2, column b"), std::string::npos);
  EXPECT_NE(parse_error("a,b\n1,2\n3,\n").find("row 2, column b"), std::string::npos);
  EXPECT_NE(parse_error("a,b\n1,nan\n").find("row 1, column b"), std::string::npos);
  EXPECT_NE(parse_error("a,b\n1,2,3\n").find("row 1 has 3 fields"), std::string::npos);
  EXPECT_FALSE(parse_error("").empty());
  EXPECT_FALSE(parse_error("a,b\n").empty());
  EXPECT_FALSE(parse_error("a,,b\n1,2,3\n").empty());
  EXPECT_THROW(read_csv("/nonexistent/x.csv"), InputError);
}

TEST(Json, FitResultRoundTrip) {
  const Replicate R = [] {
    Scenario sc;
    sc.p = 5;
    sc.p0 = 3;
    sc.mv_frac = 0.1;
    sc.mm_frac = 0.05;
    sc.mu_eps = -10.0;
    sc.mu_x = 10.0;
    return generate(sc, 60, 0);
  }();
  PipelineConfig c;
  c.step1.k_n = 3;
  c.step1.n_starts = 40;
  c.lambda_grid_size = 4;
  const FitResult f = fit_scad2s(R.data, c);
  const json j = to_json(f, {"(intercept)", "a", "b", "c", "d"});
  const FitResult g = fit_from_json(json::parse(j.dump()));
  EXPECT_EQ(g.beta, f.beta);
  EXPECT_EQ(g.support, f.support);
  EXPECT_EQ(g.outliers.msom, f.outliers.msom);
  EXPECT_EQ(g.outliers.viom, f.outliers.viom);
  EXPECT_EQ(g.weights, f.weights);
  EXPECT_EQ(g.omega_hat, f.omega_hat);
  EXPECT_EQ(g.sigma2_hat, f.sigma2_hat);
  EXPECT_EQ(g.objective_trace, f.objective_trace);
  EXPECT_EQ(g.proxies.m_gamma, f.proxies.m_gamma);
  EXPECT_EQ(g.proxy_rule, f.proxy_rule);
  EXPECT_EQ(to_json(g, {"(intercept)", "a", "b", "c", "d"}).dump(), j.dump());
  EXPECT_TRUE(j.at("beta").contains("(intercept)"));
}

TEST(Config, ScenarioKeysAndErrors) {
  std::istringstream ok("name = s\n# comment\nn_grid = 20, 40\np = 4\np0 = 2\nbeta = 1,2,0,0\nestimators = ols,opt\n");
  const ScenarioFile f = scenario_from_config(parse_config(ok));
  EXPECT_EQ(f.scenario.n_grid, (std::vector<Index>{20, 40}));
  EXPECT_EQ(f.scenario.true_beta()(1), 2.0);
  EXPECT_EQ(f.estimators, (std::vector<std::string>{"ols", "opt"}));
  auto bad = [](const std::string& text) {
    std::istringstream in(text);
    return scenario_from_config(parse_config(in));
  };
  EXPECT_THROW(bad("p = 3\np = 4\n"), ConfigError);
  EXPECT_THROW(bad("p 3\n"), ConfigError);
  EXPECT_THROW(bad("p = three\n"), ConfigError);
  EXPECT_THROW(bad("snr = -1\n"), ConfigError);
  EXPECT_THROW(bad("colour = red\n"), ConfigError);
  EXPECT_THROW(read_scenario("/nonexistent.cfg"), InputError);
}

TEST(Output, AtomicWrite) {
  const auto dir = std::filesystem::temp_directory_path() / "drsr_io_test";
  std::filesystem::create_directories(dir);
  const std::string p = (dir / "out.txt").string();
  write_atomic(p, "first");
  write_atomic(p, "second");
  std::ifstream in(p);
  std::string s;
  std::getline(in, s);
  EXPECT_EQ(s, "second");
  EXPECT_THROW(write_atomic("/nonexistent/dir/x", "z"), InputError);
}

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(DRSR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string write_temp(const std::string& name, const std::string& content) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::ofstream(p) << content;
  return p.string();
}

}  // namespace

TEST(Cli, ExitCodes) {
  const std::string good = write_temp("drsr_good.csv", "x,y\n1,2\n2,4.1\n3,5.9\n4,8.2\n5,9.9\n6,12.1\n7,14\n8,16.2\n");
  const std::string bad = write_temp("drsr_bad.csv", "x,y\n1,2\n2,oops\n");
  const std::string cfg = write_temp("drsr_bad.cfg", "p = 3\nbogus = 1\n");
  EXPECT_EQ(cli("--version"), 0);
  EXPECT_EQ(cli("fit --data " + good + " --response y --method ols"), 0);
  EXPECT_EQ(cli("fit --data " + bad + " --response y --method ols"), 2);
  EXPECT_EQ(cli("fit --data /nonexistent.csv --response y"), 2);
  EXPECT_EQ(cli("simulate --scenario " + cfg), 4);
  EXPECT_EQ(cli("fit --data " + good + " --response y --method mm"), 4);
  EXPECT_EQ(cli("fit --bogus-flag"), 4);
}
