#ifndef NLMR_IO_REPORT_HPP
#define NLMR_IO_REPORT_HPP

// RunReport: what a CLI invocation did and found, serialized as JSON. Timing
// lives in its own object so reports can be compared with it stripped.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nlmr/error.hpp"
#include "nlmr/io/csv.hpp"
#include "nlmr/model.hpp"

namespace nlmr::io {

struct CoefficientRow {
  std::string name;
  double estimate = 0.0;
  double se = 0.0;
};

struct TestReport {
  std::string name;
  double statistic = 0.0;
  double p_value = 1.0;
  std::optional<double> df1;
  std::optional<double> df2;
  std::optional<double> chisq_df;
  std::optional<MixtureDf> mixture;
  double rank_r = 0.0;
  int eval_points = 0;
  bool degraded_accuracy = false;
};

inline constexpr const char* kCurveBandNote =
    "pointwise 95% band from the stage-2 posterior covariance; uncertainty in the smoothing parameter is not "
    "propagated, so the band is narrower than a full interval";

struct SmoothingReport {
  std::vector<double> lambda;
  double edf_x = 0.0;
  double edf_total = 0.0;
  double gcv = 0.0;
  std::string curve_band = kCurveBandNote;
};

struct FitReport {
  std::string method;
  std::string cov_method;
  int n = 0;
  double iv_r2 = 0.0;
  double iv_f = 0.0;
  std::vector<CoefficientRow> coefficients;
  std::vector<std::string> theta;  // labels of the causal-function block
  std::vector<TestReport> tests;
  std::optional<SmoothingReport> smoothing;
};

struct SimulationRow {
  std::string method;
  std::string causal_f;
  double pve = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  int replicates = 0;
  int failures = 0;
  double mean_estimate = 0.0;
  double mc_sd = 0.0;
  double mean_model_se = 0.0;
  std::optional<double> coverage95;
  double rejection_rate = 0.0;
  double mean_iv_r2 = 0.0;
};

struct RunReport {
  std::int64_t schema_version = 1;
  std::string software_version;
  std::string command;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::optional<FitReport> fit;
  std::vector<SimulationRow> simulation;
  std::optional<std::string> curve_file;
  std::optional<std::string> summary_file;
  std::optional<std::string> dataset_file;
  std::vector<std::string> warnings;
  double wall_seconds = 0.0;

  // Adds a warning unless an identical one is already recorded.
  void warn(const std::string& w) {
    for (const auto& x : warnings) {
      if (x == w) return;
    }
    warnings.push_back(w);
  }
};

namespace detail {

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> get_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::json to_json(const TestReport& t) {
  nlohmann::json j{{"name", t.name},
                   {"statistic", t.statistic},
                   {"p_value", t.p_value},
                   {"df1", detail::opt(t.df1)},
                   {"df2", detail::opt(t.df2)},
                   {"chisq_df", detail::opt(t.chisq_df)},
                   {"rank_r", t.rank_r},
                   {"eval_points", t.eval_points},
                   {"degraded_accuracy", t.degraded_accuracy}};
  j["mixture"] = t.mixture ? nlohmann::json{{"unit_df", t.mixture->floor_df}, {"nu1", t.mixture->nu1}, {"nu2", t.mixture->nu2}}
                           : nlohmann::json(nullptr);
  return j;
}

inline TestReport test_from_json(const nlohmann::json& j) {
  TestReport t;
  t.name = j.at("name");
  t.statistic = j.at("statistic");
  t.p_value = j.at("p_value");
  t.df1 = detail::get_opt<double>(j, "df1");
  t.df2 = detail::get_opt<double>(j, "df2");
  t.chisq_df = detail::get_opt<double>(j, "chisq_df");
  if (!j.at("mixture").is_null()) {
    const auto& m = j.at("mixture");
    t.mixture = MixtureDf{m.at("unit_df"), m.at("nu1"), m.at("nu2")};
  }
  t.rank_r = j.at("rank_r");
  t.eval_points = j.at("eval_points");
  t.degraded_accuracy = j.at("degraded_accuracy");
  return t;
}

inline nlohmann::json to_json(const FitReport& f) {
  nlohmann::json coefs = nlohmann::json::array();
  for (const auto& c : f.coefficients) coefs.push_back({{"name", c.name}, {"estimate", c.estimate}, {"se", c.se}});
  nlohmann::json tests = nlohmann::json::array();
  for (const auto& t : f.tests) tests.push_back(to_json(t));
  nlohmann::json j{{"method", f.method},   {"cov_method", f.cov_method}, {"n", f.n},         {"iv_r2", f.iv_r2},
                   {"iv_f", f.iv_f},       {"coefficients", coefs},      {"theta", f.theta}, {"tests", tests}};
  j["smoothing"] = f.smoothing ? nlohmann::json{{"lambda", f.smoothing->lambda},
                                                {"edf_x", f.smoothing->edf_x},
                                                {"edf_total", f.smoothing->edf_total},
                                                {"gcv", f.smoothing->gcv},
                                                {"curve_band", f.smoothing->curve_band}}
                               : nlohmann::json(nullptr);
  return j;
}

inline FitReport fit_from_json(const nlohmann::json& j) {
  FitReport f;
  f.method = j.at("method");
  f.cov_method = j.at("cov_method");
  f.n = j.at("n");
  f.iv_r2 = j.at("iv_r2");
  f.iv_f = j.at("iv_f");
  for (const auto& c : j.at("coefficients")) f.coefficients.push_back({c.at("name"), c.at("estimate"), c.at("se")});
  f.theta = j.at("theta").get<std::vector<std::string>>();
  for (const auto& t : j.at("tests")) f.tests.push_back(test_from_json(t));
  if (!j.at("smoothing").is_null()) {
    const auto& s = j.at("smoothing");
    f.smoothing = SmoothingReport{s.at("lambda").get<std::vector<double>>(), s.at("edf_x"), s.at("edf_total"), s.at("gcv"),
                                  s.at("curve_band")};
  }
  return f;
}

inline nlohmann::json to_json(const SimulationRow& r) {
  return {{"method", r.method},
          {"causal_f", r.causal_f},
          {"pve", r.pve},
          {"n", r.n},
          {"seed", r.seed},
          {"replicates", r.replicates},
          {"failures", r.failures},
          {"mean_estimate", r.mean_estimate},
          {"mc_sd", r.mc_sd},
          {"mean_model_se", r.mean_model_se},
          {"coverage95", detail::opt(r.coverage95)},
          {"rejection_rate", r.rejection_rate},
          {"mean_iv_r2", r.mean_iv_r2}};
}

inline SimulationRow simulation_row_from_json(const nlohmann::json& j) {
  SimulationRow r;
  r.method = j.at("method");
  r.causal_f = j.at("causal_f");
  r.pve = j.at("pve");
  r.n = j.at("n");
  r.seed = j.at("seed");
  r.replicates = j.at("replicates");
  r.failures = j.at("failures");
  r.mean_estimate = j.at("mean_estimate");
  r.mc_sd = j.at("mc_sd");
  r.mean_model_se = j.at("mean_model_se");
  r.coverage95 = detail::get_opt<double>(j, "coverage95");
  r.rejection_rate = j.at("rejection_rate");
  r.mean_iv_r2 = j.at("mean_iv_r2");
  return r;
}

inline nlohmann::json to_json(const RunReport& r, bool include_timing = true) {
  nlohmann::json sim = nlohmann::json::array();
  for (const auto& row : r.simulation) sim.push_back(to_json(row));
  nlohmann::json j{{"schema_version", r.schema_version},
                   {"software_version", r.software_version},
                   {"command", r.command},
                   {"seed", r.seed},
                   {"config", r.config},
                   {"fit", r.fit ? to_json(*r.fit) : nlohmann::json(nullptr)},
                   {"simulation", sim},
                   {"curve_file", detail::opt(r.curve_file)},
                   {"summary_file", detail::opt(r.summary_file)},
                   {"dataset_file", detail::opt(r.dataset_file)},
                   {"warnings", r.warnings}};
  if (include_timing) j["timing"] = {{"wall_seconds", r.wall_seconds}};
  return j;
}

inline RunReport report_from_json(const nlohmann::json& j) {
  try {
    RunReport r;
    r.schema_version = j.at("schema_version");
    r.software_version = j.at("software_version");
    r.command = j.at("command");
    r.seed = j.at("seed");
    r.config = j.at("config");
    if (!j.at("fit").is_null()) r.fit = fit_from_json(j.at("fit"));
    for (const auto& row : j.at("simulation")) r.simulation.push_back(simulation_row_from_json(row));
    r.curve_file = detail::get_opt<std::string>(j, "curve_file");
    r.summary_file = detail::get_opt<std::string>(j, "summary_file");
    r.dataset_file = detail::get_opt<std::string>(j, "dataset_file");
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (j.contains("timing")) r.wall_seconds = j.at("timing").at("wall_seconds");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, "io", std::string("malformed report: ") + e.what());
  }
}

inline std::string dump_report(const RunReport& r, bool include_timing = true) {
  return to_json(r, include_timing).dump(2) + "\n";
}

inline void write_report(const std::string& path, const RunReport& r) {
  std::ofstream out = open_output(path);
  out << dump_report(r);
  if (!out) throw Error(ErrorKind::FileError, "io", "write to '" + path + "' failed");
}

inline RunReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::FileError, "io", "cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FileError, "io", "'" + path + "' is not valid JSON: " + e.what());
  }
  return report_from_json(j);
}

}  // namespace nlmr::io

#endif  // NLMR_IO_REPORT_HPP
