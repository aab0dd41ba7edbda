#ifndef NLMR_IO_RUN_HPP
#define NLMR_IO_RUN_HPP

// Executes a parsed configuration: `fit` on a CSV file, `curve` for an spMR
// fit, and `simulate` over a grid of scenarios.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlmr/estimators.hpp"
#include "nlmr/inference.hpp"
#include "nlmr/io/config.hpp"
#include "nlmr/io/csv.hpp"
#include "nlmr/io/report.hpp"
#include "nlmr/rng.hpp"
#include "nlmr/simkit.hpp"
#include "nlmr/spmr.hpp"

#ifndef NLMR_VERSION
#define NLMR_VERSION "0.1.0"
#endif

namespace nlmr::io {

struct CurveGrid {
  double lo = 0.0;
  double hi = 1.0;
  int steps = 100;

  Vec points() const {
    if (steps < 2 || !(lo < hi)) throw Error(ErrorKind::InvalidArgument, "io", "curve grid needs lo < hi and steps >= 2");
    return Vec::LinSpaced(steps, lo, hi);
  }
};

inline ModelSpec model_spec(const AnalysisConfig& c, Eigen::Index num_covariates) {
  ModelSpec spec;
  spec.f_basis.clear();
  if (c.method == "linear_mr") {
    spec.f_basis.push_back(Transform());
  } else {
    for (const auto& f : c.model.f) spec.f_basis.push_back(transform_by_name(f));
  }
  spec.g_basis = ModelSpec::linear_covariates(num_covariates);
  spec.h_form = transform_by_name(c.model.h);
  spec.include_iv_stage2 = c.model.include_iv || c.method == "control_fn_pleio";
  spec.outcome_family = c.data ? family_from_string(c.data->family) : Family::gaussian;
  return spec;
}

inline SpmrOptions spmr_options(const AnalysisConfig& c, Family family) {
  SpmrOptions o;
  o.basis.num_basis = c.spmr.k;
  o.basis.degree = c.spmr.degree;
  o.basis.knot_rule = c.spmr.knots == "uniform" ? KnotRule::uniform : KnotRule::quantile;
  o.lambda = c.spmr.lambda;
  o.smooth_covariates = c.spmr.smooth_covariates;
  o.smooth_delta = c.spmr.smooth_delta;
  o.family = family;
  return o;
}

inline TestReport test_report(const std::string& name, const TestResult& t) {
  TestReport r;
  r.name = name;
  r.statistic = t.statistic;
  r.p_value = t.p_value;
  if (t.f_df) {
    r.df1 = t.f_df->first;
    r.df2 = t.f_df->second;
  }
  r.chisq_df = t.chisq_df;
  r.mixture = t.mixture;
  r.rank_r = t.rank_r;
  r.eval_points = t.eval_points;
  r.degraded_accuracy = t.degraded_accuracy;
  return r;
}

namespace detail {

inline RunReport start_report(const AnalysisConfig& c, const std::string& command) {
  RunReport r;
  r.schema_version = c.schema_version;
  r.software_version = NLMR_VERSION;
  r.command = command;
  r.seed = c.seed;
  r.config = to_json(c);
  return r;
}

inline CsvLoad load_configured_data(const AnalysisConfig& c) {
  if (!c.data) throw Error(ErrorKind::ConfigInvalid, "io", "data: section is required for this command");
  ColumnMapping m{c.data->instruments, c.data->covariates, c.data->exposure, c.data->outcome,
                  family_from_string(c.data->family)};
  return load_csv(c.data->path, m);
}

inline FitReport parametric_report(const FitResult& f) {
  FitReport r;
  r.method = std::string(to_string(f.method_tag));
  r.cov_method = std::string(to_string(f.cov.method));
  r.n = static_cast<int>(f.n());
  r.iv_r2 = f.stage1.iv_r2;
  r.iv_f = f.stage1.iv_f;
  const Vec se = f.cov.se();
  for (Eigen::Index j = 0; j < f.p(); ++j) {
    r.coefficients.push_back({f.coef_labels()[static_cast<std::size_t>(j)], f.B_hat(j), se(j)});
  }
  for (int idx : f.theta_index) r.theta.push_back(f.coef_labels()[static_cast<std::size_t>(idx)]);
  r.tests.push_back(test_report("f_test", f_test(f, f.cov)));
  return r;
}

inline FitReport spmr_report(const SpmrFit& f, RunReport& report) {
  FitReport r;
  r.method = "spmr";
  r.cov_method = std::string(to_string(f.V_B.method));
  r.n = static_cast<int>(f.W_full.rows());
  r.iv_r2 = f.stage1.iv_r2;
  r.iv_f = f.stage1.iv_f;
  const Vec se = f.V_B.se();
  for (Eigen::Index j = 0; j < f.W_full.cols(); ++j) {
    r.coefficients.push_back({f.W_full.labels()[static_cast<std::size_t>(j)], f.B_hat(j), se(j)});
  }
  for (int j = 0; j < f.smooth_x().size; ++j) {
    r.theta.push_back(f.W_full.labels()[static_cast<std::size_t>(f.smooth_x().offset + j)]);
  }
  const TestResult t = spmr_test(f);
  if (t.degraded_accuracy) report.warn("smooth test p-value used the moment-matching approximation");
  r.tests.push_back(test_report("smooth_test", t));
  r.smoothing = SmoothingReport{f.lambdas(), f.edf_x, f.edf_total, f.gcv_score};
  for (const auto& w : f.warnings) report.warn(w);
  return r;
}

inline void write_curve(const std::string& path, const CausalCurve& c) {
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < c.grid.size(); ++i) {
    rows.push_back({format_double(c.grid(i)), format_double(c.f_hat(i)), format_double(c.se(i)),
                    format_double(c.lo95(i)), format_double(c.hi95(i))});
  }
  write_csv(path, {"x", "f_hat", "se", "lo95", "hi95"}, rows);
}

inline double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

inline RunReport run_fit(const AnalysisConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report = detail::start_report(c, "fit");
  CsvLoad load = detail::load_configured_data(c);
  for (const auto& w : load.warnings) report.warn(w);
  const DataSet& data = load.data;

  if (c.method == "spmr") {
    const SpmrFit f = fit_spmr(data, spmr_options(c, data.family));
    report.fit = detail::spmr_report(f, report);
    if (c.output.curve) {
      const Vec x = f.x_train;
      std::vector<double> sorted(x.data(), x.data() + x.size());
      std::sort(sorted.begin(), sorted.end());
      const CausalCurve curve = causal_curve(f, Eigen::Map<Vec>(sorted.data(), static_cast<Eigen::Index>(sorted.size())));
      detail::write_curve(*c.output.curve, curve);
      report.curve_file = *c.output.curve;
    }
  } else {
    const ModelSpec spec = model_spec(c, data.num_covariates());
    FitResult f;
    if (c.method == "twostage_pred") {
      f = fit_two_stage_prediction(data, spec);
    } else if (c.method == "control_fn_binary" || data.family == Family::binomial) {
      f = fit_control_function_binary(data, spec);
    } else {
      f = fit_control_function(data, spec);
    }
    report.fit = detail::parametric_report(f);
  }
  report.wall_seconds = detail::elapsed(t0);
  write_report(c.output.report, report);
  return report;
}

inline RunReport run_curve(const AnalysisConfig& c, const CurveGrid& grid) {
  const auto t0 = std::chrono::steady_clock::now();
  if (c.method != "spmr") throw Error(ErrorKind::ConfigInvalid, "io", "method.id: curve requires method 'spmr'");
  RunReport report = detail::start_report(c, "curve");
  CsvLoad load = detail::load_configured_data(c);
  for (const auto& w : load.warnings) report.warn(w);
  const SpmrFit f = fit_spmr(load.data, spmr_options(c, load.data.family));
  report.fit = detail::spmr_report(f, report);
  const CausalCurve curve = causal_curve(f, grid.points());
  if (curve.clamped > 0) {
    report.warn(std::to_string(curve.clamped) + " curve grid point(s) outside the training exposure range were clamped");
  }
  const std::string path = c.output.curve.value_or(
      (std::filesystem::path(c.output.report).parent_path() / "curve.csv").string());
  detail::write_curve(path, curve);
  report.curve_file = path;
  report.wall_seconds = detail::elapsed(t0);
  write_report(c.output.report, report);
  return report;
}

// One summary row per (method, causal_f, pve, n) cell. Each cell gets its own
// seed derived from the run seed and the cell index; methods within a cell
// share replicate datasets.
inline RunReport run_simulate(const AnalysisConfig& c, int workers = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!c.simulate) throw Error(ErrorKind::ConfigInvalid, "io", "simulate: section is required for this command");
  const SimulateConfig& s = *c.simulate;
  RunReport report = detail::start_report(c, "simulate");

  std::vector<SimMethod> methods;
  for (const auto& m : s.methods) methods.push_back(sim_method_from_string(m));
  SimOptions opt;
  opt.spmr = spmr_options(c, family_from_string(s.family));

  std::uint64_t cell = 0;
  bool exported = false;
  for (const auto& f : s.causal_f) {
    for (double pve : s.pve) {
      for (int n : s.n) {
        Scenario sc;
        sc.causal_f = f;
        sc.n = n;
        sc.pve = pve;
        sc.exposure_intercept = s.exposure_intercept;
        sc.pleiotropy = pleiotropy_from_string(s.pleiotropy);
        sc.h_form = s.h_form;
        sc.outcome_family = family_from_string(s.family);
        sc.replicates = s.replicates;
        sc.base_seed = splitmix64(c.seed ^ splitmix64(cell++));
        sc.beta_zu = s.beta_zu;
        sc.beta_zy = s.beta_zy;
        sc.num_covariates = s.num_covariates;
        if (s.export_dataset && !exported) {
          write_dataset_csv(*s.export_dataset, gen_dataset(sc, 0));
          report.dataset_file = *s.export_dataset;
          exported = true;
        }
        const auto recs = run_replicates(sc, methods, workers, opt);
        for (std::size_t m = 0; m < methods.size(); ++m) {
          const SimSummary sum = summarize(sc, methods[m], recs[m]);
          if (sum.failed) {
            throw Error(ErrorKind::TooManyFailures, "simkit",
                        sum.method + " failed on " + std::to_string(sum.failures) + " of " +
                            std::to_string(sum.replicates) + " replicates (f=" + f + ", pve=" + format_double(pve) +
                            ", n=" + std::to_string(n) + ")");
          }
          if (sum.failures > 0) {
            report.warn(sum.method + ": " + std::to_string(sum.failures) + " failed replicate(s) excluded (f=" + f +
                        ", pve=" + format_double(pve) + ", n=" + std::to_string(n) + ")");
          }
          report.simulation.push_back(SimulationRow{sum.method, f, pve, n, sc.base_seed, sum.replicates, sum.failures,
                                                    sum.mean_estimate, sum.mc_sd, sum.mean_model_se, sum.coverage95,
                                                    sum.rejection_rate, sum.mean_iv_r2});
        }
      }
    }
  }

  if (c.output.summary) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : report.simulation) {
      rows.push_back({r.method, r.causal_f, format_double(r.pve), std::to_string(r.n), std::to_string(r.replicates),
                      std::to_string(r.failures), format_double(r.mean_estimate), format_double(r.mc_sd),
                      format_double(r.mean_model_se), r.coverage95 ? format_double(*r.coverage95) : "NA",
                      format_double(r.rejection_rate), format_double(r.mean_iv_r2)});
    }
    write_csv(*c.output.summary,
              {"method", "causal_f", "pve", "n", "replicates", "failures", "mean_estimate", "mc_sd", "mean_model_se",
               "coverage95", "rejection_rate", "mean_iv_r2"},
              rows);
    report.summary_file = *c.output.summary;
  }
  report.wall_seconds = detail::elapsed(t0);
  write_report(c.output.report, report);
  return report;
}

}  // namespace nlmr::io

#endif  // NLMR_IO_RUN_HPP
