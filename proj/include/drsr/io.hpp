#pragma once

// File formats: numeric CSV input, the JSON result document, key = value
// scenario files, and atomic output writes.

#include "drsr/simulate.hpp"
#include "drsr/types.hpp"

#include <json.hpp>

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace drsr {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV

struct NumericTable {
  std::vector<std::string> header;
  MatrixXd values;  // rows x columns
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

inline bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && ptr == e && std::isfinite(v);
}

}  // namespace detail

/// Comma-separated, header required, '.' decimal point, no missing values.
/// Rows are numbered from 1 for the first data line.
inline NumericTable parse_csv(std::istream& in) {
  NumericTable t;
  std::string line;
  if (!std::getline(in, line)) throw InputError("csv: empty input (a header row is required)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  t.header = detail::split(line, ',');
  for (const auto& h : t.header)
    if (h.empty()) throw InputError("csv: empty column name in header");
  std::vector<std::vector<double>> rows;
  Index rowno = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++rowno;
    const auto cells = detail::split(line, ',');
    if (cells.size() != t.header.size())
      throw InputError("csv: row " + std::to_string(rowno) + " has " + std::to_string(cells.size()) +
                       " fields, expected " + std::to_string(t.header.size()));
    std::vector<double> r(cells.size());
    for (size_t c = 0; c < cells.size(); ++c)
      if (!detail::parse_double(cells[c], r[c]))
        throw InputError("csv: row " + std::to_string(rowno) + ", column " + t.header[c] + ": cannot parse '" +
                         cells[c] + "' as a finite number");
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw InputError("csv: no data rows");
  t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return t;
}

inline NumericTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return parse_csv(in);
}

struct NamedDataset {
  Dataset data;
  std::vector<std::string> feature_names;  // one per column of X ("(intercept)" first when present)
};

inline NamedDataset dataset_from_table(const NumericTable& t, const std::string& response, bool intercept) {
  const auto it = std::find(t.header.begin(), t.header.end(), response);
  if (it == t.header.end()) throw InputError("csv: response column '" + response + "' not found");
  const Index ry = it - t.header.begin();
  const Index n = t.values.rows();
  const Index q = t.values.cols() - 1;
  if (q < 0) throw InputError("csv: no predictor columns");
  const Index off = intercept ? 1 : 0;
  MatrixXd X(n, q + off);
  std::vector<std::string> names;
  if (intercept) {
    X.col(0).setOnes();
    names.push_back("(intercept)");
  }
  Index c = off;
  for (Index j = 0; j < t.values.cols(); ++j) {
    if (j == ry) continue;
    X.col(c++) = t.values.col(j);
    names.push_back(t.header[static_cast<size_t>(j)]);
  }
  if (X.cols() == 0) throw InputError("csv: no predictor columns");
  return {Dataset(std::move(X), t.values.col(ry), intercept), std::move(names)};
}

// ---------------------------------------------------------------------------
// JSON result document

using json = nlohmann::json;

namespace detail {

inline json vec_json(const VectorXd& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v(i)))
      a.push_back(v(i));
    else
      a.push_back(nullptr);
  }
  return a;
}

inline VectorXd json_vec(const json& a) {
  VectorXd v(static_cast<Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i)
    v(static_cast<Index>(i)) = a[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : a[i].get<double>();
  return v;
}

inline json num_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double json_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

}  // namespace detail

inline json to_json(const FitResult& f, const std::vector<std::string>& names = {}) {
  auto name_of = [&](Index j) { return j < static_cast<Index>(names.size()) ? names[static_cast<size_t>(j)] : "x" + std::to_string(j); };
  json j;
  j["method"] = f.method;
  json beta = json::object();
  for (Index c = 0; c < f.beta.size(); ++c)
    if (f.beta(c) != 0.0) beta[name_of(c)] = f.beta(c);
  j["beta"] = beta;
  j["beta_full"] = detail::vec_json(f.beta);
  j["feature_names"] = names;
  j["support"] = f.support;
  json snames = json::array();
  for (Index c : f.support) snames.push_back(name_of(c));
  j["support_names"] = snames;
  j["msom"] = f.outliers.msom;
  json viom = json::array();
  for (Index i : f.outliers.viom)
    viom.push_back({{"unit", i}, {"gamma", f.outliers.gamma_hat(i)}, {"omega", f.omega_hat(i)}, {"weight", f.weights(i)}});
  j["viom"] = viom;
  j["phi_hat"] = detail::vec_json(f.outliers.phi_hat);
  j["gamma_hat"] = detail::vec_json(f.outliers.gamma_hat);
  j["omega_hat"] = detail::vec_json(f.omega_hat);
  j["weights"] = detail::vec_json(f.weights);
  j["sigma2"] = detail::num_json(f.sigma2_hat);
  j["k_n"] = f.k_n;
  j["tuning"] = {{"lambda1", f.tuning.lambda1},
                 {"lambda2", f.tuning.lambda2},
                 {"a", f.tuning.a},
                 {"step1_csteps", f.tuning.step1_csteps},
                 {"step2_iterations", f.tuning.step2_iterations}};
  j["objective_trace"] = f.objective_trace;
  j["objective_summary"] = f.objective_trace.empty()
                               ? json(nullptr)
                               : json{{"first", f.objective_trace.front()}, {"last", f.objective_trace.back()},
                                      {"length", f.objective_trace.size()}};
  j["step2_trace"] = f.step2_trace;
  j["step1_objective"] = detail::num_json(f.step1_objective);
  j["rss_h"] = detail::num_json(f.rss_h);
  j["deflagged"] = f.deflagged;
  j["weight_at_bound"] = f.weight_at_bound;
  j["proxy_update"] = {{"rule", f.proxy_rule},
                       {"m_r", detail::vec_json(f.proxies.m_r)},
                       {"m_gamma", detail::vec_json(f.proxies.m_gamma)},
                       {"previous_objectives", f.previous_objectives}};
  return j;
}

inline FitResult fit_from_json(const json& j) {
  FitResult f;
  f.method = j.at("method").get<std::string>();
  f.beta = detail::json_vec(j.at("beta_full"));
  f.support = j.at("support").get<IndexSet>();
  f.outliers.msom = j.at("msom").get<IndexSet>();
  for (const auto& v : j.at("viom")) f.outliers.viom.push_back(v.at("unit").get<Index>());
  f.outliers.phi_hat = detail::json_vec(j.at("phi_hat"));
  f.outliers.gamma_hat = detail::json_vec(j.at("gamma_hat"));
  f.omega_hat = detail::json_vec(j.at("omega_hat"));
  f.weights = detail::json_vec(j.at("weights"));
  f.sigma2_hat = detail::json_num(j.at("sigma2"));
  f.k_n = j.at("k_n").get<Index>();
  const auto& t = j.at("tuning");
  f.tuning.lambda1 = t.at("lambda1").get<double>();
  f.tuning.lambda2 = t.at("lambda2").get<double>();
  f.tuning.a = t.at("a").get<double>();
  f.tuning.step1_csteps = t.at("step1_csteps").get<int>();
  f.tuning.step2_iterations = t.at("step2_iterations").get<int>();
  f.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  f.step2_trace = j.at("step2_trace").get<std::vector<double>>();
  f.step1_objective = detail::json_num(j.at("step1_objective"));
  f.rss_h = detail::json_num(j.at("rss_h"));
  f.deflagged = j.at("deflagged").get<IndexSet>();
  f.weight_at_bound = j.at("weight_at_bound").get<IndexSet>();
  const auto& pu = j.at("proxy_update");
  f.proxy_rule = pu.at("rule").get<std::string>();
  f.proxies.m_r = detail::json_vec(pu.at("m_r"));
  f.proxies.m_gamma = detail::json_vec(pu.at("m_gamma"));
  f.previous_objectives = pu.at("previous_objectives").get<std::vector<double>>();
  return f;
}

// ---------------------------------------------------------------------------
// key = value configuration

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(std::istream& in) {
  ConfigMap m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string k = detail::trim(line.substr(0, eq)), v = detail::trim(line.substr(eq + 1));
    if (k.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (m.count(k)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + k + "'");
    m[k] = v;
  }
  return m;
}

namespace detail {

inline double cfg_double(const std::string& k, const std::string& v) {
  double x;
  if (!parse_double(v, x)) throw ConfigError("config: '" + k + "' expects a number, got '" + v + "'");
  return x;
}

inline long long cfg_int(const std::string& k, const std::string& v) {
  long long x;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError("config: '" + k + "' expects an integer, got '" + v + "'");
  return x;
}

}  // namespace detail

struct ScenarioFile {
  Scenario scenario;
  std::vector<std::string> estimators;
};

/// Keys mirror the Scenario fields; `n_grid` and `beta` are comma lists,
/// `estimators` an optional comma list.
inline ScenarioFile scenario_from_config(const ConfigMap& m) {
  ScenarioFile f;
  Scenario& s = f.scenario;
  for (const auto& [k, v] : m) {
    if (k == "name") s.name = v;
    else if (k == "id") s.id = static_cast<std::uint64_t>(detail::cfg_int(k, v));
    else if (k == "n_grid") {
      s.n_grid.clear();
      for (const auto& x : detail::split(v, ',')) s.n_grid.push_back(static_cast<Index>(detail::cfg_int(k, x)));
    } else if (k == "p") s.p = static_cast<Index>(detail::cfg_int(k, v));
    else if (k == "p0") s.p0 = static_cast<Index>(detail::cfg_int(k, v));
    else if (k == "beta") {
      const auto xs = detail::split(v, ',');
      s.beta.resize(static_cast<Index>(xs.size()));
      for (size_t i = 0; i < xs.size(); ++i) s.beta(static_cast<Index>(i)) = detail::cfg_double(k, xs[i]);
    } else if (k == "snr") s.snr = detail::cfg_double(k, v);
    else if (k == "mv_frac") s.mv_frac = detail::cfg_double(k, v);
    else if (k == "mm_frac") s.mm_frac = detail::cfg_double(k, v);
    else if (k == "v") s.v = detail::cfg_double(k, v);
    else if (k == "mu_eps") s.mu_eps = detail::cfg_double(k, v);
    else if (k == "mu_x") s.mu_x = detail::cfg_double(k, v);
    else if (k == "reps") s.reps = static_cast<int>(detail::cfg_int(k, v));
    else if (k == "seed") s.seed = static_cast<std::uint64_t>(detail::cfg_int(k, v));
    else if (k == "n_starts") s.n_starts = static_cast<int>(detail::cfg_int(k, v));
    else if (k == "n_keep") s.n_keep = static_cast<int>(detail::cfg_int(k, v));
    else if (k == "lambda_grid_size") s.lambda_grid_size = static_cast<int>(detail::cfg_int(k, v));
    else if (k == "estimators") f.estimators = detail::split(v, ',');
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  return f;
}

inline ScenarioFile read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario file '" + path + "'");
  return scenario_from_config(parse_config(in));
}

// ---------------------------------------------------------------------------
// Output

/// Writes to a sibling temporary file and renames it over `path`.
inline void write_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw InputError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw InputError("cannot rename onto '" + path + "': " + ec.message());
  }
}

}  // namespace drsr
