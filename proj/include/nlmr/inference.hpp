#ifndef NLMR_INFERENCE_HPP
#define NLMR_INFERENCE_HPP

// Covariance estimators for the two-stage fits, the parametric F test, the
// Bayesian posterior covariance of penalized fits and the smooth-term test.

#include <boost/math/distributions/fisher_f.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

#include "nlmr/chisq.hpp"
#include "nlmr/error.hpp"
#include "nlmr/model.hpp"

namespace nlmr {

namespace detail {

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline Mat sandwich(const Mat& bread_inv, const Mat& meat) {
  return symmetrize(bread_inv * meat * bread_inv.transpose());
}

}  // namespace detail

// (W'W)^{-1} sum_i w_i w_i' r_i^2 (W'W)^{-1}, with r the structural residuals
// y - [1, f(X), g(C)] B.
inline CovEstimate cov_2sp(const FitResult& fit) {
  if (fit.method_tag != MethodTag::twostage_pred) {
    throw Error(ErrorKind::MethodMismatch, "inference", "cov_2sp requires a two-stage prediction fit");
  }
  const Mat& w = fit.W.values();
  Mat bread = detail::spd_inverse(w.transpose() * w, "inference");
  Mat rw = fit.structural_residuals.asDiagonal() * w;
  Mat meat = rw.transpose() * rw;
  return CovEstimate{detail::sandwich(bread, meat), CovMethod::sandwich_2sp, meat.trace()};
}

// W'DW for D = var_e I + rho^2 var_delta1 V (V'V)^{-1} V', formed without the
// n x n matrix.
inline Mat cf_meat(const Mat& w, const Mat& v, double var_e, double rho, double var_delta1) {
  Mat vtw = v.transpose() * w;
  Mat vtv = v.transpose() * v;
  Mat proj = vtw.transpose() * Eigen::LLT<Mat>(vtv).solve(vtw);
  return var_e * (w.transpose() * w) + rho * rho * var_delta1 * proj;
}

inline CovEstimate cov_cf(const FitResult& fit) {
  const bool tag_ok = fit.method_tag == MethodTag::control_fn || fit.method_tag == MethodTag::control_fn_pleio;
  if (!tag_ok || !fit.spec.h_form.is_identity()) {
    throw Error(ErrorKind::MethodMismatch, "inference", "cov_cf requires a linear control-function fit");
  }
  const Mat& w = fit.W.values();
  const Mat& v = fit.stage1.V.values();
  Mat bread = detail::spd_inverse(w.transpose() * w, "inference");
  Mat meat = cf_meat(w, v, fit.var_e, fit.rho_hat, fit.stage1.var_delta1);
  const double d_trace = static_cast<double>(w.rows()) * fit.var_e +
                         fit.rho_hat * fit.rho_hat * fit.stage1.var_delta1 * static_cast<double>(v.cols());
  return CovEstimate{detail::sandwich(bread, meat), CovMethod::control_fn, d_trace};
}

// Per-observation influence rows A_i = psi_i + C (V'V/n)^{-1} v_i delta1_i of
// the stacked two-stage estimating equations.
//   psi_i = w_i r_i with r = y - W B (gaussian) or y - mu (binomial)
//   C     = (1/n) sum_i d psi_i / d beta, where the h-block columns of W move
//           with beta through dh(delta1_i)/dbeta = -h'(delta1_i) v_i'
// `h_cols` lists the columns of W that are functions of delta1, `h_deriv`
// holds their derivatives (n x |h_cols|), and q is the IRLS weight (ones for
// gaussian).
inline Mat mestim_influence(const Mat& w, const Vec& resid, const Vec& q, const Mat& v, const Vec& delta1,
                            const std::vector<int>& h_cols, const Mat& h_deriv, const Vec& b_hat) {
  const Eigen::Index n = w.rows();
  const Eigen::Index p = w.cols();
  const Eigen::Index p1 = v.cols();
  Mat c = Mat::Zero(p, p1);
  Vec slope = Vec::Zero(n);  // sum_j rho_j h_j'(delta1_i)
  for (std::size_t j = 0; j < h_cols.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const Vec hd = h_deriv.col(jj);
    slope += b_hat(h_cols[j]) * hd;
    c.row(h_cols[j]) -= (hd.cwiseProduct(resid)).transpose() * v;
  }
  c += w.transpose() * (q.cwiseProduct(slope)).asDiagonal() * v;
  c /= static_cast<double>(n);

  Mat vtv_n = (v.transpose() * v) / static_cast<double>(n);
  Mat cm = Eigen::LLT<Mat>(vtv_n).solve(c.transpose()).transpose();  // C (V'V/n)^{-1}
  Mat a = resid.asDiagonal() * w;
  a += delta1.asDiagonal() * (v * cm.transpose());
  return a;
}

inline CovEstimate cov_mestim(const FitResult& fit) {
  const bool binary = fit.method_tag == MethodTag::control_fn_binary;
  if (!(binary || fit.method_tag == MethodTag::control_fn_h) || !fit.rho_index) {
    throw Error(ErrorKind::MethodMismatch, "inference",
                "cov_mestim requires a nonlinear-h or binary control-function fit");
  }
  const Mat& w = fit.W.values();
  const Eigen::Index n = w.rows();
  Vec q = binary ? fit.q_diag : Vec::Ones(n);
  Mat h_deriv = fit.spec.h_form.derivative(fit.stage1.delta1_hat);
  Mat a = mestim_influence(w, fit.residuals, q, fit.stage1.V.values(), fit.stage1.delta1_hat, {*fit.rho_index},
                           h_deriv, fit.B_hat);
  Mat gram = w.transpose() * q.asDiagonal() * w;
  Mat bread = detail::spd_inverse(gram, "inference");
  Mat meat = a.transpose() * a;
  if (!meat.allFinite()) {
    throw Error(ErrorKind::DerivativeUnavailable, "inference", "influence terms are not finite");
  }
  return CovEstimate{detail::sandwich(bread, meat), binary ? CovMethod::mestim_binary : CovMethod::mestim,
                     meat.trace()};
}

// Dispatches to the covariance estimator matching the fit.
inline CovEstimate default_cov(const FitResult& fit) {
  switch (fit.method_tag) {
    case MethodTag::twostage_pred: return cov_2sp(fit);
    case MethodTag::control_fn:
    case MethodTag::control_fn_pleio: return cov_cf(fit);
    case MethodTag::control_fn_h:
    case MethodTag::control_fn_binary: return cov_mestim(fit);
  }
  throw Error(ErrorKind::MethodMismatch, "inference", "unknown method tag");
}

// theta' V_theta^{-1} theta / K1 against F(K1, n - p).
inline TestResult f_test(const FitResult& fit, const CovEstimate& cov) {
  const auto k1 = static_cast<Eigen::Index>(fit.theta_index.size());
  if (k1 == 0) throw Error(ErrorKind::InvalidArgument, "inference", "fit has no causal coefficients");
  Vec theta(k1);
  Mat v_theta(k1, k1);
  for (Eigen::Index a = 0; a < k1; ++a) {
    const int ia = fit.theta_index[static_cast<std::size_t>(a)];
    if (ia < 0 || ia >= cov.cov.rows()) throw Error(ErrorKind::InvalidArgument, "inference", "theta index out of range");
    theta(a) = fit.B_hat(ia);
    for (Eigen::Index b = 0; b < k1; ++b) v_theta(a, b) = cov.cov(ia, fit.theta_index[static_cast<std::size_t>(b)]);
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(detail::symmetrize(v_theta), Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff();
  if (!(hi > 0.0) || es.eigenvalues().minCoeff() <= 1e-12 * hi) {
    throw Error(ErrorKind::SingularThetaCov, "inference", "covariance of the causal coefficients is singular");
  }
  TestResult out;
  out.statistic = std::max(0.0, theta.dot(Eigen::LLT<Mat>(v_theta).solve(theta)) / static_cast<double>(k1));
  const double df2 = static_cast<double>(fit.n() - fit.p());
  out.f_df = std::make_pair(static_cast<double>(k1), df2);
  if (out.statistic == 0.0) {
    out.p_value = 1.0;
  } else {
    boost::math::fisher_f_distribution<double> dist(static_cast<double>(k1), df2);
    out.p_value = boost::math::cdf(boost::math::complement(dist, out.statistic));
  }
  return out;
}

// (G + lambda S)^{-1} M G^{-1}, symmetrized. G is W'W (or W'QW), M is W'DW
// (or A'A).
inline CovEstimate bayes_cov(const Mat& gram, const Mat& meat, const Mat& penalty_full, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::InvalidArgument, "inference", "lambda must be finite and >= 0");
  }
  if (gram.rows() != meat.rows() || gram.rows() != penalty_full.rows() || gram.cols() != penalty_full.cols()) {
    throw Error(ErrorKind::InvalidArgument, "inference", "dimension mismatch in bayes_cov");
  }
  Mat g_inv = detail::spd_inverse(gram, "inference");
  Mat pen_inv = lambda == 0.0 ? g_inv : detail::spd_inverse(gram + lambda * penalty_full, "inference");
  return CovEstimate{detail::symmetrize(pen_inv * meat * g_inv), CovMethod::bayesian, meat.trace()};
}

namespace detail {

struct RankSplit {
  int m = 0;       // floor(r)
  double nu = 0.0; // fractional part; 0 when treated as integer
};

inline RankSplit split_rank(double r) {
  RankSplit s;
  s.m = static_cast<int>(std::floor(r));
  s.nu = r - s.m;
  if (s.nu < 0.05) s.nu = 0.0;
  return s;
}

// Smooth test in an eigenbasis: d holds coordinates of f_hat along the
// eigenvectors (descending eigenvalues `ev`).
inline TestResult smooth_test_eigen(const Vec& d, const Vec& ev, double r) {
  if (!(r >= 1.0) || !std::isfinite(r)) throw Error(ErrorKind::InvalidArgument, "inference", "EDF r must be >= 1");
  const RankSplit rs = split_rank(r);
  const int needed = static_cast<int>(std::ceil(r - 1e-12));
  int usable = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) usable += ev(i) > 1e-10 * ev(0) ? 1 : 0;
  if (ev.size() == 0 || !(ev(0) > 0.0) || usable < needed) {
    throw Error(ErrorKind::RankTooLow, "inference",
                "V_f has rank " + std::to_string(usable) + " below the required " + std::to_string(needed));
  }

  TestResult out;
  out.rank_r = r;
  if (rs.nu == 0.0) {
    double t = 0.0;
    for (int i = 0; i < rs.m; ++i) t += d(i) * d(i) / ev(i);
    out.statistic = t;
    out.chisq_df = static_cast<double>(rs.m);
    out.p_value = chisq_sf(t, rs.m);
    return out;
  }
  if (usable < rs.m + 1) {
    throw Error(ErrorKind::RankTooLow, "inference", "V_f rank too low for fractional EDF");
  }

  // Components m and m+1 (1-based) share a 2x2 block [[1, b], [b, nu]] in
  // standardized coordinates whose eigenvalues are nu1 and nu2. Both signs of
  // b are evaluated so the result does not depend on eigenvector orientation.
  const int m = rs.m;
  const double nu = rs.nu;
  const double b = std::sqrt(std::max(0.0, 0.5 * nu * (1.0 - nu)));
  double head = 0.0;
  for (int i = 0; i < m - 1; ++i) head += d(i) * d(i) / ev(i);
  const double z1 = d(m - 1) / std::sqrt(ev(m - 1));
  const double z2 = d(m) / std::sqrt(ev(m));
  const double diag = head + z1 * z1 + nu * z2 * z2;
  const double cross = 2.0 * b * z1 * z2;
  const double t_plus = std::max(0.0, diag + cross);
  const double t_minus = std::max(0.0, diag - cross);

  const double nu1 = (nu + 1.0 + std::sqrt(1.0 - nu * nu)) / 2.0;
  const double nu2 = nu + 1.0 - nu1;
  std::vector<ChisqTerm> terms;
  if (m > 1) terms.push_back({1.0, static_cast<double>(m - 1)});
  terms.push_back({nu1, 1.0});
  terms.push_back({nu2, 1.0});
  const auto p_plus = wsumchisq_sf(t_plus, terms);
  const auto p_minus = wsumchisq_sf(t_minus, terms);

  out.statistic = diag;  // = (t_plus + t_minus) / 2
  out.p_value = std::clamp(0.5 * (p_plus.p + p_minus.p), 0.0, 1.0);
  out.mixture = MixtureDf{static_cast<double>(m - 1), nu1, nu2};
  out.degraded_accuracy = p_plus.degraded || p_minus.degraded;
  return out;
}

}  // namespace detail

// T_r = f' V_f^{r-} f on an explicit evaluation vector and its covariance.
inline TestResult smooth_test(const Vec& f_hat, const Mat& v_f, double r) {
  if (v_f.rows() != f_hat.size() || v_f.cols() != f_hat.size()) {
    throw Error(ErrorKind::InvalidArgument, "inference", "V_f dimension does not match f_hat");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(detail::symmetrize(v_f));
  const Eigen::Index m = f_hat.size();
  Vec ev = es.eigenvalues().reverse();
  Mat vec = es.eigenvectors().rowwise().reverse();
  Vec d = vec.transpose() * f_hat;
  TestResult out = detail::smooth_test_eigen(d, ev, r);
  out.eval_points = static_cast<int>(m);
  return out;
}

// Same test with f = X_p theta and V_f = X_p V_theta X_p', computed through
// the QR factor of X_p so nothing n x n is formed.
inline TestResult smooth_test_factored(const Mat& xp, const Vec& theta, const Mat& v_theta, double r) {
  if (xp.cols() != theta.size() || v_theta.rows() != theta.size()) {
    throw Error(ErrorKind::InvalidArgument, "inference", "dimension mismatch in smooth_test_factored");
  }
  const Eigen::Index q = xp.cols();
  if (xp.rows() < q) throw Error(ErrorKind::InvalidArgument, "inference", "too few evaluation points");
  Eigen::HouseholderQR<Mat> qr(xp);
  Mat rr = qr.matrixQR().topLeftCorner(q, q).triangularView<Eigen::Upper>();
  Mat inner = detail::symmetrize(rr * v_theta * rr.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(inner);
  Vec ev = es.eigenvalues().reverse();
  Mat vec = es.eigenvectors().rowwise().reverse();
  Vec d = vec.transpose() * (rr * theta);
  TestResult out = detail::smooth_test_eigen(d, ev, r);
  out.eval_points = static_cast<int>(xp.rows());
  return out;
}

}  // namespace nlmr

#endif  // NLMR_INFERENCE_HPP
