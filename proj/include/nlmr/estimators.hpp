#ifndef NLMR_ESTIMATORS_HPP
#define NLMR_ESTIMATORS_HPP

// Parametric two-stage estimators of a nonlinear causal function f(X) =
// sum_j theta_j f_j(X):
//   - two-stage prediction: regress each f_j(X) on [1, Z, C] and use the
//     fitted values as stage-2 regressors;
//   - control function: regress X on [1, Z, C] and add h(delta1_hat) (and
//     optionally the instruments, for pleiotropy) to the stage-2 regression;
//   - binary control function: the same stage 2 as a logistic regression.

#include <string>
#include <utility>
#include <vector>

#include "nlmr/data.hpp"
#include "nlmr/error.hpp"
#include "nlmr/inference.hpp"
#include "nlmr/linmod.hpp"
#include "nlmr/model.hpp"

namespace nlmr {

inline constexpr double kIndependenceTol = 1e-8;

struct IdentifiabilityCheck {
  bool ok = false;
  std::string diagnostic;
};

// Two-stage prediction identifiability: K1 + k <= n1 + n2, with k the number
// of linear g-terms.
inline IdentifiabilityCheck check_identifiability_2sp(const ModelSpec& spec, int n1, int n2) {
  if (n1 < 1) throw Error(ErrorKind::InvalidArgument, "estimators", "at least one instrument is required");
  const int lhs = spec.k1() + spec.num_linear_g();
  const int rhs = n1 + n2;
  IdentifiabilityCheck out;
  out.ok = lhs <= rhs;
  out.diagnostic = "K1 + k = " + std::to_string(spec.k1()) + " + " + std::to_string(spec.num_linear_g()) + " = " +
                   std::to_string(lhs) + (out.ok ? " <= " : " > ") + "n1 + n2 = " + std::to_string(rhs);
  return out;
}

namespace detail {

// 1, f_1(x), ..., f_K1(x) must be numerically linearly independent on the data.
inline void check_f_basis(const ModelSpec& spec, const Vec& x) {
  if (spec.f_basis.empty()) throw Error(ErrorKind::InvalidArgument, "estimators", "K1 must be >= 1");
  Mat f(x.size(), spec.k1() + 1);
  f.col(0).setOnes();
  for (int j = 0; j < spec.k1(); ++j) f.col(j + 1) = spec.f_basis[static_cast<std::size_t>(j)].apply(x);
  Mat gram = f.transpose() * f;
  Eigen::SelfAdjointEigenSolver<Mat> es(gram, Eigen::EigenvaluesOnly);
  const double ratio = std::sqrt(std::max(0.0, es.eigenvalues()(0)) / es.eigenvalues().maxCoeff());
  if (!(ratio > kIndependenceTol)) {
    throw Error(ErrorKind::NotIdentifiable, "estimators",
                "f-basis functions are not linearly independent together with the constant");
  }
}

inline void check_g_basis(const ModelSpec& spec, const DataSet& data) {
  for (const auto& g : spec.g_basis) {
    if (g.column < 0 || g.column >= data.num_covariates()) {
      throw Error(ErrorKind::InvalidArgument, "estimators", "g-term refers to a missing covariate column");
    }
  }
}

struct Columns {
  std::vector<Vec> cols;
  std::vector<std::string> labels;

  void add(Vec v, std::string label) {
    cols.push_back(std::move(v));
    labels.push_back(std::move(label));
  }
  int size() const { return static_cast<int>(cols.size()); }

  DesignMatrix build() const {
    Mat m(cols.front().size(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) m.col(static_cast<Eigen::Index>(j)) = cols[j];
    return DesignMatrix(std::move(m), labels);
  }
};

inline std::string f_label(const Transform& t, const DataSet& data) { return "f:" + t.name() + "(" + data.exposure_name + ")"; }

}  // namespace detail

// Stage 1: OLS of X on [1, Z, C].
inline Stage1Fit fit_stage1(const DataSet& data) {
  data.validate();
  const Eigen::Index n = data.n();
  const Eigen::Index n1 = data.num_ivs();
  const Eigen::Index n2 = data.num_covariates();
  Mat v(n, 1 + n1 + n2);
  std::vector<std::string> labels{"(Intercept)"};
  v.col(0).setOnes();
  for (Eigen::Index j = 0; j < n1; ++j) {
    v.col(1 + j) = data.Z.col(j);
    labels.push_back(data.iv_name(j));
  }
  for (Eigen::Index j = 0; j < n2; ++j) {
    v.col(1 + n1 + j) = data.C.col(j);
    labels.push_back(data.covariate_name(j));
  }
  Stage1Fit s;
  s.V = DesignMatrix(std::move(v), std::move(labels));
  LsFit fit = ols(s.V, data.X);
  s.beta = fit.coef;
  s.delta1_hat = fit.residuals;
  s.var_delta1 = fit.sigma2;

  const double tss = (data.X.array() - data.X.mean()).square().sum();
  Mat vz(n, 1 + n1);
  vz.col(0).setOnes();
  vz.rightCols(n1) = data.Z;
  const double rss_z = ols(DesignMatrix(std::move(vz)), data.X).residuals.squaredNorm();
  s.iv_r2 = tss > 0.0 ? 1.0 - rss_z / tss : 0.0;

  Mat vr(n, 1 + n2);
  vr.col(0).setOnes();
  if (n2 > 0) vr.rightCols(n2) = data.C;
  const double rss_r = ols(DesignMatrix(std::move(vr)), data.X).residuals.squaredNorm();
  const double rss_f = fit.residuals.squaredNorm();
  const double df2 = static_cast<double>(n - s.V.cols());
  s.iv_f = (rss_f > 0.0 && df2 > 0.0) ? ((rss_r - rss_f) / static_cast<double>(n1)) / (rss_f / df2) : 0.0;
  return s;
}

inline FitResult fit_two_stage_prediction(const DataSet& data, const ModelSpec& spec) {
  if (spec.outcome_family != Family::gaussian || spec.include_iv_stage2) {
    throw Error(ErrorKind::InvalidArgument, "estimators",
                "two-stage prediction supports gaussian outcomes without pleiotropy adjustment");
  }
  detail::check_g_basis(spec, data);
  const auto id = check_identifiability_2sp(spec, static_cast<int>(data.num_ivs()),
                                            static_cast<int>(data.num_covariates()));
  if (!id.ok) throw Error(ErrorKind::NotIdentifiable, "estimators", id.diagnostic);

  FitResult out;
  out.spec = spec;
  out.method_tag = MethodTag::twostage_pred;
  out.stage1 = fit_stage1(data);
  detail::check_f_basis(spec, data.X);

  const Eigen::Index n = data.n();
  detail::Columns fitted, structural;
  fitted.add(Vec::Ones(n), "(Intercept)");
  structural.add(Vec::Ones(n), "(Intercept)");
  for (const auto& f : spec.f_basis) {
    Vec fx = f.apply(data.X);
    LsFit s1 = ols(out.stage1.V, fx);
    out.theta_index.push_back(fitted.size());
    fitted.add(fx - s1.residuals, detail::f_label(f, data));
    structural.add(std::move(fx), detail::f_label(f, data));
  }
  for (const auto& g : spec.g_basis) {
    Vec gc = g.transform.apply(data.C.col(g.column));
    const std::string label = "g:" + g.transform.name() + "(" + data.covariate_name(g.column) + ")";
    fitted.add(gc, label);
    structural.add(std::move(gc), label);
  }
  out.W = fitted.build();
  LsFit s2 = ols(out.W, data.Y);
  out.B_hat = s2.coef;
  out.residuals = s2.residuals;
  out.structural_residuals = data.Y - structural.build().values() * out.B_hat;
  out.var_e = out.structural_residuals.squaredNorm() / static_cast<double>(n - out.W.cols());
  out.cov = cov_2sp(out);
  return out;
}

namespace detail {

// Stage-2 regressors [1, f_1..f_K1, (Z), g_1..g_K2, h(delta1_hat)] shared by
// the gaussian and binary control-function fits.
inline Columns control_function_columns(const DataSet& data, const ModelSpec& spec, const Stage1Fit& s1,
                                        std::vector<int>& theta_index, int& rho_index) {
  const Eigen::Index n = data.n();
  Columns cols;
  cols.add(Vec::Ones(n), "(Intercept)");
  for (const auto& f : spec.f_basis) {
    theta_index.push_back(cols.size());
    cols.add(f.apply(data.X), f_label(f, data));
  }
  if (spec.include_iv_stage2) {
    for (Eigen::Index j = 0; j < data.num_ivs(); ++j) cols.add(data.Z.col(j), "iv:" + data.iv_name(j));
  }
  for (const auto& g : spec.g_basis) {
    cols.add(g.transform.apply(data.C.col(g.column)),
             "g:" + g.transform.name() + "(" + data.covariate_name(g.column) + ")");
  }
  rho_index = cols.size();
  cols.add(spec.h_form.apply(s1.delta1_hat), "h:" + spec.h_form.name() + "(delta1)");
  return cols;
}

}  // namespace detail

inline FitResult fit_control_function(const DataSet& data, const ModelSpec& spec) {
  if (spec.outcome_family != Family::gaussian) {
    throw Error(ErrorKind::InvalidArgument, "estimators", "use fit_control_function_binary for binomial outcomes");
  }
  detail::check_g_basis(spec, data);
  FitResult out;
  out.spec = spec;
  out.stage1 = fit_stage1(data);
  detail::check_f_basis(spec, data.X);
  if (!spec.h_form.is_identity()) {
    out.method_tag = MethodTag::control_fn_h;
  } else {
    out.method_tag = spec.include_iv_stage2 ? MethodTag::control_fn_pleio : MethodTag::control_fn;
  }

  int rho_index = 0;
  out.W = detail::control_function_columns(data, spec, out.stage1, out.theta_index, rho_index).build();
  out.rho_index = rho_index;
  LsFit s2;
  try {
    s2 = ols(out.W, data.Y);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::RankDeficient && spec.include_iv_stage2) {
      throw Error(ErrorKind::RankDeficient, "estimators",
                  "stage-2 design is collinear with the instruments included; pleiotropy adjustment needs "
                  "{f_1..f_K1, X} or {g_1..g_K2, C} linearly independent");
    }
    throw;
  }
  out.B_hat = s2.coef;
  out.residuals = s2.residuals;
  out.rho_hat = s2.coef(rho_index);
  out.var_e = s2.sigma2;
  out.cov = out.method_tag == MethodTag::control_fn_h ? cov_mestim(out) : cov_cf(out);
  return out;
}

inline FitResult fit_control_function_binary(const DataSet& data, const ModelSpec& spec,
                                             const IrlsOptions& irls = {}) {
  if (spec.outcome_family != Family::binomial || data.family != Family::binomial) {
    throw Error(ErrorKind::InvalidArgument, "estimators", "binary control function needs a binomial outcome");
  }
  detail::check_g_basis(spec, data);
  FitResult out;
  out.spec = spec;
  out.method_tag = MethodTag::control_fn_binary;
  out.stage1 = fit_stage1(data);
  detail::check_f_basis(spec, data.X);

  int rho_index = 0;
  out.W = detail::control_function_columns(data, spec, out.stage1, out.theta_index, rho_index).build();
  out.rho_index = rho_index;
  // full-rank check before the Newton iterations
  (void)ols(out.W, data.Y);
  IrlsFit s2 = penalized_irls(out.W, data.Y, Mat::Zero(out.W.cols(), out.W.cols()), 0.0, irls);
  out.B_hat = s2.coef;
  out.mu = s2.mu;
  out.q_diag = s2.q_diag;
  out.residuals = data.Y - s2.mu;
  out.rho_hat = s2.coef(rho_index);
  out.var_e = 0.0;
  out.cov = cov_mestim(out);
  return out;
}

// Dispatches on the outcome family: control function (gaussian) or its
// logistic analogue.
inline FitResult fit(const DataSet& data, const ModelSpec& spec) {
  return spec.outcome_family == Family::binomial ? fit_control_function_binary(data, spec)
                                                 : fit_control_function(data, spec);
}

}  // namespace nlmr

#endif  // NLMR_ESTIMATORS_HPP
