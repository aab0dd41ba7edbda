#ifndef NLMR_MODEL_HPP
#define NLMR_MODEL_HPP

// Value types shared by the estimators and inference layers.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nlmr/data.hpp"
#include "nlmr/linmod.hpp"
#include "nlmr/transforms.hpp"

namespace nlmr {

struct GTerm {
  int column = 0;  // covariate column of the data set
  Transform transform;
  bool is_linear = true;
};

struct ModelSpec {
  std::vector<Transform> f_basis{Transform()};
  std::vector<GTerm> g_basis;
  Transform h_form;  // applied to the stage-1 residual
  bool include_iv_stage2 = false;
  Family outcome_family = Family::gaussian;

  int k1() const { return static_cast<int>(f_basis.size()); }
  int num_linear_g() const {
    int k = 0;
    for (const auto& g : g_basis) k += g.is_linear ? 1 : 0;
    return k;
  }

  // Identity g-term for each of the first `num_covariates` covariate columns.
  static std::vector<GTerm> linear_covariates(Eigen::Index num_covariates) {
    std::vector<GTerm> g;
    for (Eigen::Index j = 0; j < num_covariates; ++j) g.push_back(GTerm{static_cast<int>(j), Transform(), true});
    return g;
  }
};

struct Stage1Fit {
  DesignMatrix V;   // [1, Z, C]
  Vec beta;
  Vec delta1_hat;
  double var_delta1 = 0.0;  // RSS / (n - p1)
  double iv_r2 = 0.0;       // R^2 of X on [1, Z]
  double iv_f = 0.0;        // partial F for the instrument block
};

enum class MethodTag { twostage_pred, control_fn, control_fn_pleio, control_fn_h, control_fn_binary };

inline std::string_view to_string(MethodTag m) {
  switch (m) {
    case MethodTag::twostage_pred: return "twostage_pred";
    case MethodTag::control_fn: return "control_fn";
    case MethodTag::control_fn_pleio: return "control_fn_pleio";
    case MethodTag::control_fn_h: return "control_fn_h";
    case MethodTag::control_fn_binary: return "control_fn_binary";
  }
  return "unknown";
}

enum class CovMethod { sandwich_2sp, control_fn, mestim, mestim_binary, bayesian };

inline std::string_view to_string(CovMethod m) {
  switch (m) {
    case CovMethod::sandwich_2sp: return "sandwich_2sp";
    case CovMethod::control_fn: return "control_fn";
    case CovMethod::mestim: return "mestim";
    case CovMethod::mestim_binary: return "mestim_binary";
    case CovMethod::bayesian: return "bayesian";
  }
  return "unknown";
}

struct CovEstimate {
  Mat cov;
  CovMethod method = CovMethod::control_fn;
  double d_matrix_trace = 0.0;

  Vec se() const { return cov.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

struct FitResult {
  Stage1Fit stage1;
  DesignMatrix W;
  Vec B_hat;
  std::vector<int> theta_index;
  std::optional<int> rho_index;  // column of h(delta1_hat); absent for 2SP
  double rho_hat = 0.0;
  double var_e = 0.0;
  CovEstimate cov;
  MethodTag method_tag = MethodTag::control_fn;
  ModelSpec spec;
  Vec residuals;             // y - W B (gaussian) or y - mu (binomial)
  Vec structural_residuals;  // 2SP only: y - [1, f(X), g(C)] B
  Vec mu;                    // binomial only
  Vec q_diag;                // binomial only

  const std::vector<std::string>& coef_labels() const { return W.labels(); }
  Eigen::Index n() const { return W.rows(); }
  Eigen::Index p() const { return W.cols(); }
  double theta(int j = 0) const { return B_hat(theta_index.at(static_cast<std::size_t>(j))); }
  double theta_se(int j = 0) const {
    const int idx = theta_index.at(static_cast<std::size_t>(j));
    return std::sqrt(std::max(0.0, cov.cov(idx, idx)));
  }
};

struct MixtureDf {
  double floor_df = 0.0;  // df of the unit-weight chi-square part
  double nu1 = 0.0;
  double nu2 = 0.0;
};

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  // F test: (df1, df2); smooth test: mixture or plain chi-square with df = rank.
  std::optional<std::pair<double, double>> f_df;
  std::optional<MixtureDf> mixture;
  std::optional<double> chisq_df;
  double rank_r = 0.0;
  bool degraded_accuracy = false;  // moment-matching fallback was used
  int eval_points = 0;
};

}  // namespace nlmr

#endif  // NLMR_MODEL_HPP
