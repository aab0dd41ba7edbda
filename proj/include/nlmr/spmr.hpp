#ifndef NLMR_SPMR_HPP
#define NLMR_SPMR_HPP

// Semiparametric control-function fit: stage 1 as usual, stage 2 a penalized
// spline regression Y ~ s(X) + C + delta1_hat with GCV-selected smoothing,
// Bayesian posterior covariance, causal-curve export and the smooth test of
// H0: f = 0.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nlmr/basis.hpp"
#include "nlmr/data.hpp"
#include "nlmr/error.hpp"
#include "nlmr/estimators.hpp"
#include "nlmr/inference.hpp"
#include "nlmr/linmod.hpp"
#include "nlmr/model.hpp"

namespace nlmr {

struct LambdaSearch {
  double log10_lo = -8.0;
  double log10_hi = 8.0;
  double step = 0.25;
  double golden_tol = 1e-3;  // final bracket width in log10(lambda)
};

struct SpmrOptions {
  BasisSpec basis;
  int penalty_order = 2;
  Family family = Family::gaussian;
  std::optional<double> lambda;  // fixed smoothing parameter; GCV selection when empty
  bool smooth_covariates = false;
  bool smooth_delta = false;
  LambdaSearch search;
  int max_eval_points = 500;
  IrlsOptions irls;
};

// One penalized block of the stage-2 design.
struct SmoothTerm {
  std::string name;
  int offset = 0;
  int size = 0;
  SmoothBasis basis;
  double lambda = 0.0;
  bool lambda_at_boundary = false;
};

struct SpmrFit {
  Stage1Fit stage1;
  std::vector<SmoothTerm> smooths;  // smooths[0] is s(X)
  DesignMatrix W_full;
  Mat penalty_total;                // sum_j lambda_j S_j embedded in p x p
  Vec B_hat;
  CovEstimate V_B;
  double edf_x = 1.0;
  double edf_total = 0.0;
  Family family = Family::gaussian;
  double gcv_score = 0.0;
  double rho_hat = 0.0;
  double var_e = 0.0;
  std::optional<int> delta_index;   // linear delta1_hat column
  Vec x_train;
  int max_eval_points = 500;
  std::vector<std::string> warnings;

  const SmoothTerm& smooth_x() const { return smooths.front(); }
  std::vector<double> lambdas() const {
    std::vector<double> l;
    for (const auto& s : smooths) l.push_back(s.lambda);
    return l;
  }
  Vec theta() const { return B_hat.segment(smooth_x().offset, smooth_x().size); }
  Mat v_theta() const {
    return V_B.cov.block(smooth_x().offset, smooth_x().offset, smooth_x().size, smooth_x().size);
  }
};

struct CausalCurve {
  Vec grid;
  Vec f_hat;
  Vec se;
  Vec lo95;
  Vec hi95;
  int clamped = 0;
  std::string reference_centering = "mean-zero";
};

struct LambdaSelection {
  double lambda = 0.0;
  double gcv = 0.0;
  bool at_boundary = false;
};

// GCV(lambda) = n Dev / (n - tr A)^2 for a stage-2 design and a set of
// embedded block penalties. Dev is the RSS (gaussian) or the binomial deviance
// at IRLS convergence.
class GcvObjective {
 public:
  GcvObjective(const DesignMatrix& w, const Vec& y, std::vector<Mat> penalties, Family family,
               IrlsOptions irls = {})
      : w_(w), y_(y), penalties_(std::move(penalties)), family_(family), irls_(irls) {
    if (family_ == Family::gaussian) {
      gram_ = w_.values().transpose() * w_.values();
      wty_ = w_.values().transpose() * y_;
      yty_ = y_.squaredNorm();
    }
  }

  Mat total_penalty(const std::vector<double>& lambdas) const {
    Mat s = Mat::Zero(w_.cols(), w_.cols());
    for (std::size_t j = 0; j < penalties_.size(); ++j) s += lambdas[j] * penalties_[j];
    return s;
  }

  double operator()(const std::vector<double>& lambdas) {
    const double n = static_cast<double>(w_.rows());
    const Mat s = total_penalty(lambdas);
    try {
      if (family_ == Family::gaussian) {
        const Mat ginv = detail::spd_inverse(gram_ + s, "spmr");
        const Vec coef = ginv * wty_;
        const double rss = std::max(0.0, yty_ - 2.0 * coef.dot(wty_) + coef.dot(gram_ * coef));
        const double tr = (ginv * gram_).trace();
        return n * rss / ((n - tr) * (n - tr));
      }
      IrlsFit f = penalized_irls(w_, y_, s, 1.0, irls_, warm_);
      warm_ = f.coef;
      const Vec eta = w_.values() * f.coef;
      const double dev = detail::bernoulli_deviance(y_, eta);
      const Mat gq = w_.values().transpose() * f.q_diag.asDiagonal() * w_.values();
      const double tr = (detail::spd_inverse(gq + s, "spmr") * gq).trace();
      return n * dev / ((n - tr) * (n - tr));
    } catch (const Error&) {
      return std::numeric_limits<double>::infinity();
    }
  }

  std::size_t num_penalties() const { return penalties_.size(); }

 private:
  const DesignMatrix& w_;
  const Vec& y_;
  std::vector<Mat> penalties_;
  Family family_;
  IrlsOptions irls_;
  Mat gram_;
  Vec wty_;
  double yty_ = 0.0;
  std::optional<Vec> warm_;
};

namespace detail {

// Grid over log10(lambda) followed by golden-section refinement of one
// coordinate; ties go to the smaller lambda.
inline LambdaSelection select_coordinate(GcvObjective& obj, std::vector<double> lambdas, std::size_t which,
                                         const LambdaSearch& search) {
  const int steps = static_cast<int>(std::lround((search.log10_hi - search.log10_lo) / search.step));
  std::vector<double> grid_scores(static_cast<std::size_t>(steps + 1));
  auto score_at = [&](double log10l) {
    lambdas[which] = std::pow(10.0, log10l);
    return obj(lambdas);
  };
  // binomial fits warm-start best from the smooth end
  for (int i = steps; i >= 0; --i) grid_scores[static_cast<std::size_t>(i)] = score_at(search.log10_lo + i * search.step);
  int best = 0;
  for (int i = 1; i <= steps; ++i) {
    if (grid_scores[static_cast<std::size_t>(i)] < grid_scores[static_cast<std::size_t>(best)]) best = i;
  }
  double best_log = search.log10_lo + best * search.step;
  double best_score = grid_scores[static_cast<std::size_t>(best)];

  double a = std::max(search.log10_lo, best_log - search.step);
  double b = std::min(search.log10_hi, best_log + search.step);
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - ratio * (b - a);
  double d = a + ratio * (b - a);
  double fc = score_at(c);
  double fd = score_at(d);
  while (b - a > search.golden_tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - ratio * (b - a);
      fc = score_at(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + ratio * (b - a);
      fd = score_at(d);
    }
  }
  const double cand_log = fc <= fd ? c : d;
  const double cand = std::min(fc, fd);
  if (cand < best_score) {
    best_score = cand;
    best_log = cand_log;
  }
  LambdaSelection out;
  out.lambda = std::pow(10.0, best_log);
  out.gcv = best_score;
  out.at_boundary = best == 0 || best == steps;
  return out;
}

}  // namespace detail

// Selects the smoothing parameter of a single embedded penalty by GCV.
inline LambdaSelection select_lambda(const DesignMatrix& w, const Vec& y, const Mat& penalty_full, Family family,
                                     const LambdaSearch& search = {}, const IrlsOptions& irls = {}) {
  GcvObjective obj(w, y, {penalty_full}, family, irls);
  return detail::select_coordinate(obj, {1.0}, 0, search);
}

namespace detail {

inline Mat embed_penalty(const Mat& block, int offset, Eigen::Index p) {
  Mat s = Mat::Zero(p, p);
  s.block(offset, offset, block.rows(), block.cols()) = block;
  return s;
}

// Derivatives of a centered smooth's columns by central differences.
inline Mat smooth_derivative(const SmoothBasis& sb, const Vec& x) {
  const Vec h = (1.0 + x.array().abs()) * 1e-6;
  Mat up = sb.eval(x + h).design;
  Mat dn = sb.eval(x - h).design;
  return (up - dn).array().colwise() / (2.0 * h.array());
}

}  // namespace detail

inline SpmrFit fit_spmr(const DataSet& data, const SpmrOptions& opt = {}) {
  data.validate();
  if (data.family != opt.family) {
    throw Error(ErrorKind::InvalidArgument, "spmr", "data family does not match spMR options");
  }
  const int k = opt.basis.num_basis;
  const Eigen::Index n = data.n();
  if (n < 10 * static_cast<Eigen::Index>(k)) {
    throw Error(ErrorKind::InvalidArgument, "spmr", "spMR needs n >= 10 k observations");
  }
  const std::set<double> distinct(data.X.data(), data.X.data() + n);
  if (static_cast<int>(distinct.size()) < k) {
    throw Error(ErrorKind::TooFewDistinctExposures, "spmr",
                "exposure has " + std::to_string(distinct.size()) + " distinct values, fewer than k = " +
                    std::to_string(k));
  }

  SpmrFit out;
  out.family = opt.family;
  out.x_train = data.X;
  out.max_eval_points = opt.max_eval_points;
  out.stage1 = fit_stage1(data);

  detail::Columns cols;
  cols.add(Vec::Ones(n), "(Intercept)");
  auto add_smooth = [&](const Vec& x, const std::string& name) {
    SmoothTerm term;
    term.name = name;
    term.basis = make_smooth(x, opt.basis, opt.penalty_order, name);
    term.offset = cols.size();
    term.size = term.basis.num_coef();
    for (int j = 0; j < term.size; ++j) {
      cols.add(term.basis.design.values().col(j), term.basis.design.labels()[static_cast<std::size_t>(j)]);
    }
    out.smooths.push_back(std::move(term));
  };
  add_smooth(data.X, "s(" + data.exposure_name + ")");
  for (Eigen::Index j = 0; j < data.num_covariates(); ++j) {
    if (opt.smooth_covariates) {
      add_smooth(data.C.col(j), "s(" + data.covariate_name(j) + ")");
    } else {
      cols.add(data.C.col(j), data.covariate_name(j));
    }
  }
  std::optional<std::size_t> delta_smooth;
  if (opt.smooth_delta) {
    delta_smooth = out.smooths.size();
    add_smooth(out.stage1.delta1_hat, "s(delta1)");
  } else {
    out.delta_index = cols.size();
    cols.add(out.stage1.delta1_hat, "delta1");
  }
  out.W_full = cols.build();
  const Eigen::Index p = out.W_full.cols();

  std::vector<Mat> penalties;
  for (const auto& s : out.smooths) penalties.push_back(detail::embed_penalty(s.basis.penalty, s.offset, p));
  GcvObjective gcv(out.W_full, data.Y, penalties, opt.family, opt.irls);

  std::vector<double> lambdas(out.smooths.size(), opt.lambda.value_or(1.0));
  if (opt.lambda) {
    if (!(*opt.lambda >= 0.0)) throw Error(ErrorKind::InvalidArgument, "spmr", "fixed lambda must be >= 0");
    out.gcv_score = gcv(lambdas);
  } else {
    const int sweeps = out.smooths.size() > 1 ? 2 : 1;
    for (int sweep = 0; sweep < sweeps; ++sweep) {
      for (std::size_t j = 0; j < out.smooths.size(); ++j) {
        LambdaSelection sel = detail::select_coordinate(gcv, lambdas, j, opt.search);
        lambdas[j] = sel.lambda;
        out.smooths[j].lambda_at_boundary = sel.at_boundary;
        out.gcv_score = sel.gcv;
      }
    }
    for (std::size_t j = 0; j < out.smooths.size(); ++j) {
      if (out.smooths[j].lambda_at_boundary) {
        out.warnings.push_back("smoothing parameter for " + out.smooths[j].name +
                               " selected at the edge of the search grid");
      }
    }
  }
  for (std::size_t j = 0; j < out.smooths.size(); ++j) out.smooths[j].lambda = lambdas[j];
  out.penalty_total = gcv.total_penalty(lambdas);
  const bool penalized = std::any_of(lambdas.begin(), lambdas.end(), [](double l) { return l > 0.0; });

  const Mat& w = out.W_full.values();
  Vec q = Vec::Ones(n);
  Vec resid;
  if (opt.family == Family::gaussian) {
    LsFit s2 = penalized ? penalized_ls(out.W_full, data.Y, out.penalty_total, 1.0) : ols(out.W_full, data.Y);
    out.B_hat = s2.coef;
    resid = s2.residuals;
    out.var_e = s2.sigma2;
    out.edf_total = s2.edf;
  } else {
    (void)ols(out.W_full, data.Y);  // rank check
    IrlsFit s2 = penalized_irls(out.W_full, data.Y, out.penalty_total, 1.0, opt.irls);
    out.B_hat = s2.coef;
    resid = data.Y - s2.mu;
    q = s2.q_diag;
  }

  const Mat gram = w.transpose() * q.asDiagonal() * w;
  const Mat influence = detail::spd_inverse(gram + out.penalty_total, "spmr") * gram;
  if (opt.family == Family::binomial) out.edf_total = influence.trace();
  const SmoothTerm& sx = out.smooths.front();
  const double r = influence.diagonal().segment(sx.offset, sx.size).sum();
  out.edf_x = std::clamp(r, 1.0, static_cast<double>(sx.size));

  Mat meat;
  if (opt.family == Family::gaussian && out.delta_index) {
    out.rho_hat = out.B_hat(*out.delta_index);
    meat = cf_meat(w, out.stage1.V.values(), out.var_e, out.rho_hat, out.stage1.var_delta1);
  } else {
    std::vector<int> h_cols;
    Mat h_deriv;
    if (out.delta_index) {
      h_cols.push_back(*out.delta_index);
      h_deriv = Mat::Ones(n, 1);
      out.rho_hat = out.B_hat(*out.delta_index);
    } else {
      const SmoothTerm& sd = out.smooths[*delta_smooth];
      for (int j = 0; j < sd.size; ++j) h_cols.push_back(sd.offset + j);
      h_deriv = detail::smooth_derivative(sd.basis, out.stage1.delta1_hat);
    }
    Mat a = mestim_influence(w, resid, q, out.stage1.V.values(), out.stage1.delta1_hat, h_cols, h_deriv, out.B_hat);
    meat = a.transpose() * a;
  }
  out.V_B = bayes_cov(gram, meat, out.penalty_total, 1.0);
  return out;
}

inline CausalCurve causal_curve(const SpmrFit& fit, const Vec& grid) {
  for (Eigen::Index i = 1; i < grid.size(); ++i) {
    if (grid(i) < grid(i - 1)) throw Error(ErrorKind::InvalidArgument, "spmr", "curve grid must be sorted");
  }
  const auto ev = fit.smooth_x().basis.eval(grid);
  CausalCurve c;
  c.grid = grid;
  c.clamped = ev.clamped;
  c.f_hat = ev.design * fit.theta();
  const Mat xv = ev.design * fit.v_theta();
  c.se = xv.cwiseProduct(ev.design).rowwise().sum().cwiseMax(0.0).cwiseSqrt();
  c.lo95 = c.f_hat - 1.96 * c.se;
  c.hi95 = c.f_hat + 1.96 * c.se;
  return c;
}

// Evaluation abscissae for the smooth test: all training exposures when
// n <= max_eval_points, otherwise evenly spaced order statistics.
inline Vec spmr_eval_points(const SpmrFit& fit) {
  std::vector<double> x(fit.x_train.data(), fit.x_train.data() + fit.x_train.size());
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  const std::size_t m = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(2, fit.max_eval_points)));
  Vec pts(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t idx = m == n ? i : static_cast<std::size_t>(std::llround(
                                              static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(m - 1)));
    pts(static_cast<Eigen::Index>(i)) = x[idx];
  }
  return pts;
}

inline TestResult spmr_test(const SpmrFit& fit) {
  const Mat xp = fit.smooth_x().basis.eval(spmr_eval_points(fit)).design;
  return smooth_test_factored(xp, fit.theta(), fit.v_theta(), fit.edf_x);
}

}  // namespace nlmr

#endif  // NLMR_SPMR_HPP
