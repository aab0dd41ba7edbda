#ifndef NLMR_LINMOD_HPP
#define NLMR_LINMOD_HPP

// Dense least-squares numerics shared by every estimator: ordinary,
// quadratically penalized, and iteratively reweighted penalized (logistic)
// regression.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "nlmr/error.hpp"

namespace nlmr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kRankTol = 1e-10;

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

// n x p regressor matrix with column labels. Construction validates shape,
// finiteness and label uniqueness.
class DesignMatrix {
 public:
  DesignMatrix() = default;

  explicit DesignMatrix(Mat values, std::vector<std::string> labels = {})
      : values_(std::move(values)), labels_(std::move(labels)) {
    if (values_.cols() < 1 || values_.rows() < values_.cols()) {
      throw Error(ErrorKind::InvalidArgument, "linmod",
                  "design must satisfy n >= p >= 1 (got " + std::to_string(values_.rows()) + "x" +
                      std::to_string(values_.cols()) + ")");
    }
    if (!values_.allFinite()) {
      throw Error(ErrorKind::NonFinite, "linmod", "design contains NaN or Inf");
    }
    if (labels_.empty()) {
      labels_.reserve(static_cast<std::size_t>(values_.cols()));
      for (Eigen::Index j = 0; j < values_.cols(); ++j) labels_.push_back("x" + std::to_string(j));
    }
    if (static_cast<Eigen::Index>(labels_.size()) != values_.cols()) {
      throw Error(ErrorKind::InvalidArgument, "linmod", "label count does not match column count");
    }
    std::set<std::string> seen(labels_.begin(), labels_.end());
    if (seen.size() != labels_.size()) {
      throw Error(ErrorKind::InvalidArgument, "linmod", "column labels must be unique");
    }
  }

  const Mat& values() const noexcept { return values_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }

 private:
  Mat values_;
  std::vector<std::string> labels_;
};

struct LsFit {
  Vec coef;
  Vec residuals;
  Mat gram_inverse;  // (D'D + lambda S)^{-1}
  double sigma2 = 0.0;
  double lambda = 0.0;
  double edf = 0.0;  // trace of the influence matrix
};

struct IrlsFit {
  Vec coef;
  Vec mu;
  Vec q_diag;  // mu (1 - mu)
  bool converged = false;
  int iterations = 0;
  double penalized_deviance = 0.0;
  std::vector<double> objective_trace;  // penalized deviance after each accepted step
};

class NotConvergedError : public Error {
 public:
  NotConvergedError(const std::string& what, IrlsFit last)
      : Error(ErrorKind::NotConverged, "linmod", what), last_(std::move(last)) {}
  const IrlsFit& last_iterate() const noexcept { return last_; }

 private:
  IrlsFit last_;
};

namespace detail {

inline void require_finite_vec(const Eigen::Ref<const Vec>& y, const char* what) {
  if (!y.allFinite()) throw Error(ErrorKind::NonFinite, "linmod", std::string(what) + " contains NaN or Inf");
}

inline void require_rows(const DesignMatrix& d, const Eigen::Ref<const Vec>& y) {
  if (y.size() != d.rows()) {
    throw Error(ErrorKind::InvalidArgument, "linmod",
                "response length " + std::to_string(y.size()) + " does not match design rows " +
                    std::to_string(d.rows()));
  }
}

inline void require_penalty(const Mat& s, Eigen::Index p) {
  if (s.rows() != p || s.cols() != p) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "penalty matrix must be p x p");
  }
  if (!s.allFinite()) throw Error(ErrorKind::NonFinite, "linmod", "penalty contains NaN or Inf");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "penalty matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(s, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8 * scale) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "penalty matrix is not positive semidefinite");
  }
}

// Solves a symmetric positive definite system after a relative conditioning
// check on its eigenvalues.
inline Mat spd_inverse(const Mat& g, const char* module = "linmod") {
  Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  if (!(hi > 0.0) || lo <= kRankTol * hi) {
    throw Error(ErrorKind::SingularSystem, module, "penalized Gram matrix is numerically singular");
  }
  Eigen::LLT<Mat> llt(g);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::SingularSystem, module, "Cholesky factorization failed");
  }
  Mat inv = llt.solve(Mat::Identity(g.rows(), g.cols()));
  return 0.5 * (inv + inv.transpose());
}

inline double log1pexp(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double bernoulli_deviance(const Vec& y, const Vec& eta) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) dev += log1pexp(eta(i)) - y(i) * eta(i);
  return 2.0 * dev;
}

}  // namespace detail

// Ordinary least squares via Householder QR; the rank check uses the singular
// values of R, which coincide with those of the design.
inline LsFit ols(const DesignMatrix& design, const Vec& y) {
  detail::require_rows(design, y);
  detail::require_finite_vec(y, "response");
  const Mat& d = design.values();
  const Eigen::Index n = d.rows();
  const Eigen::Index p = d.cols();

  Eigen::HouseholderQR<Mat> qr(d);
  Mat r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Mat> svd(r);
  const auto& sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(p - 1) <= kRankTol * sv(0)) {
    throw Error(ErrorKind::RankDeficient, "linmod",
                "design is rank deficient (sigma_min/sigma_max = " +
                    std::to_string(sv(0) > 0.0 ? sv(p - 1) / sv(0) : 0.0) + ")");
  }

  LsFit fit;
  fit.coef = qr.solve(y);
  fit.residuals = y - d * fit.coef;
  Mat rinv = r.triangularView<Eigen::Upper>().solve(Mat::Identity(p, p));
  fit.gram_inverse = rinv * rinv.transpose();
  fit.lambda = 0.0;
  fit.edf = static_cast<double>(p);
  fit.sigma2 = n > p ? fit.residuals.squaredNorm() / static_cast<double>(n - p) : 0.0;
  return fit;
}

// Minimizes ||y - D b||^2 + lambda b'Sb through the penalized normal
// equations. lambda == 0 reduces to ols().
inline LsFit penalized_ls(const DesignMatrix& design, const Vec& y, const Mat& penalty, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "lambda must be finite and >= 0");
  }
  detail::require_rows(design, y);
  detail::require_finite_vec(y, "response");
  detail::require_penalty(penalty, design.cols());
  if (lambda == 0.0) return ols(design, y);

  const Mat& d = design.values();
  const Eigen::Index n = d.rows();
  Mat dtd = d.transpose() * d;
  Mat ginv = detail::spd_inverse(dtd + lambda * penalty);

  LsFit fit;
  fit.coef = ginv * (d.transpose() * y);
  fit.residuals = y - d * fit.coef;
  fit.gram_inverse = std::move(ginv);
  fit.lambda = lambda;
  fit.edf = (fit.gram_inverse * dtd).trace();
  fit.sigma2 = static_cast<double>(n) > fit.edf
                   ? fit.residuals.squaredNorm() / (static_cast<double>(n) - fit.edf)
                   : 0.0;
  return fit;
}

struct IrlsOptions {
  int max_iter = 50;
  double tol = 1e-8;
  int max_halvings = 10;
  double separation_eta = 30.0;
};

// Penalized logistic regression by safeguarded Newton (Fisher scoring with
// step halving on the penalized deviance).
inline IrlsFit penalized_irls(const DesignMatrix& design, const Vec& y, const Mat& penalty, double lambda,
                              const IrlsOptions& opt = {}, const std::optional<Vec>& start = std::nullopt) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "lambda must be finite and >= 0");
  }
  detail::require_rows(design, y);
  detail::require_finite_vec(y, "response");
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0.0 && y(i) != 1.0) {
      throw Error(ErrorKind::InvalidArgument, "linmod",
                  "binary response must be 0/1 (row " + std::to_string(i) + ")");
    }
  }
  const Mat& d = design.values();
  const Eigen::Index p = d.cols();
  detail::require_penalty(penalty, p);
  if (start && start->size() != p) {
    throw Error(ErrorKind::InvalidArgument, "linmod", "start vector has wrong length");
  }

  Mat lam_s = lambda * penalty;
  auto objective = [&](const Vec& b, const Vec& eta) {
    return detail::bernoulli_deviance(y, eta) + b.dot(lam_s * b);
  };

  IrlsFit fit;
  Vec b = start ? *start : Vec::Zero(p);
  Vec eta = d * b;
  double obj = objective(b, eta);

  auto finalize = [&](bool converged, int iters) {
    fit.coef = b;
    fit.mu = eta.unaryExpr(&detail::logistic);
    fit.q_diag = fit.mu.array() * (1.0 - fit.mu.array());
    fit.converged = converged;
    fit.iterations = iters;
    fit.penalized_deviance = obj;
  };

  for (int it = 1; it <= opt.max_iter; ++it) {
    Vec mu = eta.unaryExpr(&detail::logistic);
    Vec w = mu.array() * (1.0 - mu.array());
    Vec score = d.transpose() * (y - mu) - lam_s * b;
    Mat h = d.transpose() * w.asDiagonal() * d + lam_s;
    Eigen::LDLT<Mat> ldlt(h);
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorKind::SingularSystem, "linmod", "IRLS Hessian is singular");
    }
    Vec step = ldlt.solve(score);
    if (!step.allFinite()) {
      throw Error(ErrorKind::SingularSystem, "linmod", "IRLS Hessian is singular");
    }

    Vec b_new = b + step;
    Vec eta_new = d * b_new;
    double obj_new = objective(b_new, eta_new);
    for (int k = 0; k < opt.max_halvings && !(obj_new <= obj + 1e-12 * std::abs(obj)); ++k) {
      step *= 0.5;
      b_new = b + step;
      eta_new = d * b_new;
      obj_new = objective(b_new, eta_new);
    }
    if (!(obj_new <= obj + 1e-12 * std::abs(obj))) {
      // no descent direction left; the current iterate is as good as it gets
      finalize(step.norm() <= opt.tol * std::max(1.0, b.norm()), it);
      if (!fit.converged) throw NotConvergedError("IRLS step halving failed to decrease deviance", fit);
      return fit;
    }

    const double change = (b_new - b).norm() / std::max(1.0, b_new.norm());
    b = std::move(b_new);
    eta = std::move(eta_new);
    obj = obj_new;
    fit.objective_trace.push_back(obj);

    if (eta.cwiseAbs().maxCoeff() > opt.separation_eta) {
      throw Error(ErrorKind::QuasiSeparation, "linmod",
                  "linear predictor exceeds " + std::to_string(opt.separation_eta) +
                      " in magnitude; the MLE is unstable (quasi-separation)");
    }
    if (change < opt.tol) {
      finalize(true, it);
      return fit;
    }
  }
  finalize(false, opt.max_iter);
  throw NotConvergedError("IRLS did not converge within " + std::to_string(opt.max_iter) + " iterations", fit);
}

}  // namespace nlmr

#endif  // NLMR_LINMOD_HPP
