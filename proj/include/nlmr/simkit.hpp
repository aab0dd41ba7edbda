#ifndef NLMR_SIMKIT_HPP
#define NLMR_SIMKIT_HPP

// Simulation designs for nonlinear IV estimation, replicate execution and
// Monte Carlo summaries.
//
// Gaussian outcome:
//   U      = b_zu Z + U_{-Z}           (correlated / both pleiotropy, else U_{-Z})
//   delta1 = U + eps_X,  delta2 = h(delta1) + e
//   X      = x0 + beta_Z Z + sum_j C_j + delta1
//   Y      = 1 + f(X) + b_zy Z [uncorrelated / both] + sum_j C_j + delta2
// Binary outcome: logit P(Y = 1) = 1 + f(X) + sum_j C_j + h(delta1), no e.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "nlmr/data.hpp"
#include "nlmr/error.hpp"
#include "nlmr/estimators.hpp"
#include "nlmr/inference.hpp"
#include "nlmr/rng.hpp"
#include "nlmr/spmr.hpp"
#include "nlmr/transforms.hpp"

namespace nlmr {

enum class Pleiotropy { none, uncorrelated, correlated, both };

inline std::string_view to_string(Pleiotropy p) {
  switch (p) {
    case Pleiotropy::none: return "none";
    case Pleiotropy::uncorrelated: return "uncorrelated";
    case Pleiotropy::correlated: return "correlated";
    case Pleiotropy::both: return "both";
  }
  return "none";
}

inline Pleiotropy pleiotropy_from_string(std::string_view s) {
  if (s == "none") return Pleiotropy::none;
  if (s == "uncorrelated") return Pleiotropy::uncorrelated;
  if (s == "correlated") return Pleiotropy::correlated;
  if (s == "both") return Pleiotropy::both;
  throw Error(ErrorKind::InvalidArgument, "simkit", "unknown pleiotropy '" + std::string(s) + "'");
}

// Stream identifiers of the primitive variables.
namespace var_id {
inline constexpr std::uint64_t z = 0;
inline constexpr std::uint64_t u_minus_z = 2;
inline constexpr std::uint64_t eps_x = 3;
inline constexpr std::uint64_t e = 4;
inline constexpr std::uint64_t bernoulli = 5;
inline constexpr std::uint64_t covariate_base = 100;  // C_j uses 100 + j
}  // namespace var_id

struct Scenario {
  std::string causal_f = "quad3";  // linear | quad3 | sin | exp3 | null
  int n = 1000;
  double pve = 0.1;
  double exposure_intercept = 1.0;
  Pleiotropy pleiotropy = Pleiotropy::none;
  std::string h_form = "identity";
  Family outcome_family = Family::gaussian;
  int replicates = 100;
  std::uint64_t base_seed = 1;
  double beta_zu = 1.0;
  double beta_zy = 1.0;
  int num_covariates = 1;

  bool is_null() const { return causal_f == "null"; }
  bool correlated_pleiotropy() const { return pleiotropy == Pleiotropy::correlated || pleiotropy == Pleiotropy::both; }
  bool direct_pleiotropy() const { return pleiotropy == Pleiotropy::uncorrelated || pleiotropy == Pleiotropy::both; }

  void validate() const {
    if (n < 2) throw Error(ErrorKind::InvalidArgument, "simkit", "scenario n must be >= 2");
    if (replicates < 1) throw Error(ErrorKind::InvalidArgument, "simkit", "replicates must be >= 1");
    if (num_covariates < 0) throw Error(ErrorKind::InvalidArgument, "simkit", "num_covariates must be >= 0");
    if (!is_null()) (void)transform_by_name(causal_f);
    (void)transform_by_name(h_form);
    if (!(pve > 0.0 && pve < 1.0)) throw Error(ErrorKind::InvalidPve, "simkit", "pve must lie in (0, 1)");
  }
};

// Instrument coefficient giving first-stage R^2 = pve. The variance of X not
// explained by Z is num_covariates + Var(U_{-Z}) + Var(eps_X); under
// correlated pleiotropy Z also reaches X through U, so beta_Z is the total
// effect minus b_zu.
inline double pve_to_beta(double pve, const Scenario& sc) {
  if (!(pve > 0.0 && pve < 1.0)) throw Error(ErrorKind::InvalidPve, "simkit", "pve must lie in (0, 1)");
  const double unexplained = static_cast<double>(sc.num_covariates) + 2.0;
  const double total = std::sqrt(unexplained * pve / (1.0 - pve));
  return sc.correlated_pleiotropy() ? total - sc.beta_zu : total;
}

inline double causal_value(const Scenario& sc, double x) {
  return sc.is_null() ? 0.0 : transform_by_name(sc.causal_f)(x);
}

inline DataSet gen_dataset(const Scenario& sc, std::uint64_t rep_index) {
  sc.validate();
  const Eigen::Index n = sc.n;
  auto draw = [&](std::uint64_t id) { return Stream(sc.base_seed, rep_index, id).normals(n); };

  DataSet d;
  d.family = sc.outcome_family;
  d.Z = draw(var_id::z);
  d.iv_names = {"z"};
  d.C.resize(n, sc.num_covariates);
  for (int j = 0; j < sc.num_covariates; ++j) {
    d.C.col(j) = draw(var_id::covariate_base + static_cast<std::uint64_t>(j));
    d.covariate_names.push_back("c" + std::to_string(j + 1));
  }
  const Vec z = d.Z.col(0);
  const Vec csum = sc.num_covariates > 0 ? Vec(d.C.rowwise().sum()) : Vec(Vec::Zero(n));

  Vec u = draw(var_id::u_minus_z);
  if (sc.correlated_pleiotropy()) u += sc.beta_zu * z;
  const Vec delta1 = u + draw(var_id::eps_x);
  const Transform h = transform_by_name(sc.h_form);
  const Vec h_delta = h.apply(delta1);

  d.X = (sc.exposure_intercept + pve_to_beta(sc.pve, sc) * z.array() + csum.array() + delta1.array()).matrix();
  Vec fx(n);
  for (Eigen::Index i = 0; i < n; ++i) fx(i) = causal_value(sc, d.X(i));
  Vec lin = (1.0 + fx.array() + csum.array()).matrix();

  if (sc.outcome_family == Family::gaussian) {
    if (sc.direct_pleiotropy()) lin += sc.beta_zy * z;
    d.Y = lin + h_delta + draw(var_id::e);
  } else {
    const Vec eta = lin + h_delta;
    const Stream bern(sc.base_seed, rep_index, var_id::bernoulli);
    d.Y.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      d.Y(i) = bern.uniform(static_cast<std::uint64_t>(i)) < detail::logistic(eta(i)) ? 1.0 : 0.0;
    }
  }
  return d;
}

enum class SimMethod { twostage_pred, control_fn, control_fn_pleio, control_fn_h, control_fn_binary, spmr, linear_mr };

inline std::string_view to_string(SimMethod m) {
  switch (m) {
    case SimMethod::twostage_pred: return "twostage_pred";
    case SimMethod::control_fn: return "control_fn";
    case SimMethod::control_fn_pleio: return "control_fn_pleio";
    case SimMethod::control_fn_h: return "control_fn_h";
    case SimMethod::control_fn_binary: return "control_fn_binary";
    case SimMethod::spmr: return "spmr";
    case SimMethod::linear_mr: return "linear_mr";
  }
  return "unknown";
}

inline SimMethod sim_method_from_string(std::string_view s) {
  for (auto m : {SimMethod::twostage_pred, SimMethod::control_fn, SimMethod::control_fn_pleio, SimMethod::control_fn_h,
                 SimMethod::control_fn_binary, SimMethod::spmr, SimMethod::linear_mr}) {
    if (to_string(m) == s) return m;
  }
  throw Error(ErrorKind::InvalidArgument, "simkit", "unknown method '" + std::string(s) + "'");
}

struct SimOptions {
  SpmrOptions spmr;
};

struct ReplicateRecord {
  bool ok = false;
  std::string error;
  double estimate = 0.0;  // theta_hat, or the EDF of s(X) for spMR
  double model_se = 0.0;
  std::optional<bool> covers;
  double p_value = 1.0;
  bool reject = false;
  double iv_r2 = 0.0;
};

struct SimSummary {
  Scenario scenario;
  std::string method;
  double mean_estimate = 0.0;
  double mc_sd = 0.0;
  double mean_model_se = 0.0;
  std::optional<double> coverage95;
  double rejection_rate = 0.0;
  int replicates = 0;
  int failures = 0;
  bool failed = false;  // more than 5% of replicates errored
  double mean_iv_r2 = 0.0;
  double wall_time_seconds = 0.0;
};

// Stage-2 specification a parametric method uses under a scenario: the true
// f-basis (identity for the null design and linear MR).
inline ModelSpec method_spec(SimMethod m, const Scenario& sc) {
  ModelSpec spec;
  const bool linear = sc.is_null() || m == SimMethod::linear_mr;
  spec.f_basis = {linear ? Transform() : transform_by_name(sc.causal_f)};
  spec.g_basis = ModelSpec::linear_covariates(sc.num_covariates);
  spec.outcome_family = sc.outcome_family;
  if (m == SimMethod::control_fn_pleio) spec.include_iv_stage2 = true;
  if (m == SimMethod::control_fn_h || m == SimMethod::control_fn_binary) spec.h_form = transform_by_name(sc.h_form);
  return spec;
}

inline ReplicateRecord run_method(SimMethod m, const Scenario& sc, const DataSet& data, const SimOptions& opt = {}) {
  ReplicateRecord rec;
  try {
    if (m == SimMethod::spmr) {
      SpmrOptions so = opt.spmr;
      so.family = sc.outcome_family;
      const SpmrFit f = fit_spmr(data, so);
      const TestResult t = spmr_test(f);
      rec.estimate = f.edf_x;
      rec.model_se = 0.0;
      rec.p_value = t.p_value;
      rec.iv_r2 = f.stage1.iv_r2;
    } else {
      const ModelSpec spec = method_spec(m, sc);
      FitResult f;
      switch (m) {
        case SimMethod::twostage_pred: f = fit_two_stage_prediction(data, spec); break;
        case SimMethod::control_fn_binary: f = fit_control_function_binary(data, spec); break;
        default: f = fit_control_function(data, spec); break;
      }
      const TestResult t = f_test(f, f.cov);
      rec.estimate = f.theta();
      rec.model_se = f.theta_se();
      rec.p_value = t.p_value;
      rec.iv_r2 = f.stage1.iv_r2;
      const bool truth_known = m != SimMethod::linear_mr || sc.is_null() || sc.causal_f == "linear";
      if (truth_known) {
        const double truth = sc.is_null() ? 0.0 : 1.0;
        rec.covers = std::abs(rec.estimate - truth) <= 1.96 * rec.model_se;
      }
    }
    rec.reject = rec.p_value < 0.05;
    rec.ok = std::isfinite(rec.estimate) && std::isfinite(rec.p_value);
    if (!rec.ok) rec.error = "non-finite estimate";
  } catch (const std::exception& e) {
    rec = ReplicateRecord{};
    rec.error = e.what();
  }
  return rec;
}

// Runs every method on the same R replicate datasets. Result is indexed
// [method][replicate] and does not depend on the worker count.
inline std::vector<std::vector<ReplicateRecord>> run_replicates(const Scenario& sc, const std::vector<SimMethod>& methods,
                                                               int workers = 1, const SimOptions& opt = {}) {
  sc.validate();
  const int reps = sc.replicates;
  std::vector<std::vector<ReplicateRecord>> out(methods.size(), std::vector<ReplicateRecord>(static_cast<std::size_t>(reps)));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int r = next++; r < reps; r = next++) {
      const DataSet d = gen_dataset(sc, static_cast<std::uint64_t>(r));
      for (std::size_t m = 0; m < methods.size(); ++m) out[m][static_cast<std::size_t>(r)] = run_method(methods[m], sc, d, opt);
    }
  };
  workers = std::clamp(workers, 1, reps);
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  return out;
}

inline SimSummary summarize(const Scenario& sc, SimMethod m, const std::vector<ReplicateRecord>& recs) {
  SimSummary s;
  s.scenario = sc;
  s.method = std::string(to_string(m));
  s.replicates = static_cast<int>(recs.size());
  double sum = 0.0, sum_se = 0.0, sum_r2 = 0.0;
  int ok = 0, covered = 0, with_cover = 0, rejected = 0;
  for (const auto& r : recs) {
    if (!r.ok) {
      ++s.failures;
      continue;
    }
    ++ok;
    sum += r.estimate;
    sum_se += r.model_se;
    sum_r2 += r.iv_r2;
    rejected += r.reject ? 1 : 0;
    if (r.covers) {
      ++with_cover;
      covered += *r.covers ? 1 : 0;
    }
  }
  s.failed = s.failures * 20 > s.replicates;
  if (ok == 0) return s;
  s.mean_estimate = sum / ok;
  s.mean_model_se = sum_se / ok;
  s.mean_iv_r2 = sum_r2 / ok;
  s.rejection_rate = static_cast<double>(rejected) / ok;
  if (with_cover == ok) s.coverage95 = static_cast<double>(covered) / ok;
  double ss = 0.0;
  for (const auto& r : recs) {
    if (r.ok) ss += (r.estimate - s.mean_estimate) * (r.estimate - s.mean_estimate);
  }
  s.mc_sd = ok > 1 ? std::sqrt(ss / (ok - 1)) : 0.0;
  return s;
}

// Monte Carlo summary of one method; throws TooManyFailures when more than 5%
// of replicates error.
inline SimSummary run_mc(const Scenario& sc, SimMethod m, int workers = 1, const SimOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto recs = run_replicates(sc, {m}, workers, opt);
  SimSummary s = summarize(sc, m, recs.front());
  s.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (s.failed) {
    std::string first;
    for (const auto& r : recs.front()) {
      if (!r.ok) {
        first = r.error;
        break;
      }
    }
    throw Error(ErrorKind::TooManyFailures, "simkit",
                std::to_string(s.failures) + " of " + std::to_string(s.replicates) + " replicates failed; first: " + first);
  }
  return s;
}

}  // namespace nlmr

#endif  // NLMR_SIMKIT_HPP
