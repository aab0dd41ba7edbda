#ifndef NLMR_BASIS_HPP
#define NLMR_BASIS_HPP

// P-spline construction: B-spline bases on clamped knot vectors, difference
// penalties, and the sum-to-zero reparameterization that makes a smooth
// identifiable next to a free intercept.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nlmr/error.hpp"
#include "nlmr/linmod.hpp"

namespace nlmr {

enum class KnotRule { quantile, uniform };

struct BasisSpec {
  int num_basis = 10;
  int degree = 3;
  KnotRule knot_rule = KnotRule::quantile;
  std::optional<std::pair<double, double>> boundary;  // defaults to the data range

  void validate() const {
    if (degree < 0) throw Error(ErrorKind::InvalidArgument, "basis", "degree must be >= 0");
    if (num_basis < 4 || num_basis < degree + 1) {
      throw Error(ErrorKind::InvalidArgument, "basis", "num_basis must be >= max(4, degree + 1)");
    }
    if (boundary && !(boundary->first < boundary->second)) {
      throw Error(ErrorKind::InvalidArgument, "basis", "boundary requires lo < hi");
    }
  }
};

struct RawBasis {
  Mat design;  // n x k
  Vec knots;   // k + degree + 1 entries
  int clamped = 0;
};

namespace detail {

// Type-7 sample quantile of sorted data.
inline double sorted_quantile(const std::vector<double>& s, double prob) {
  const double h = prob * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

// Nonzero B-spline values at x for the knot span `span` (Piegl & Tiller A2.2).
inline void basis_funs(int span, double x, int degree, const Vec& t, std::vector<double>& out) {
  out.assign(static_cast<std::size_t>(degree + 1), 0.0);
  std::vector<double> left(static_cast<std::size_t>(degree + 1)), right(static_cast<std::size_t>(degree + 1));
  out[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[j] = x - t(span + 1 - j);
    right[j] = t(span + j) - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom != 0.0 ? out[r] / denom : 0.0;
      out[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    out[j] = saved;
  }
}

}  // namespace detail

// Evaluates all k B-splines of the given clamped knot vector at x. Points
// outside the boundary knots are clamped and counted.
inline RawBasis bspline_eval(const Vec& x, const Vec& knots, int degree) {
  const auto nk = static_cast<int>(knots.size());
  const int k = nk - degree - 1;
  const double lo = knots(degree);
  const double hi = knots(k);
  RawBasis out;
  out.knots = knots;
  out.design = Mat::Zero(x.size(), k);
  std::vector<double> vals;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double xi = x(i);
    if (!std::isfinite(xi)) throw Error(ErrorKind::NonFinite, "basis", "non-finite abscissa");
    if (xi < lo || xi > hi) {
      xi = std::clamp(xi, lo, hi);
      ++out.clamped;
    }
    // last span whose left knot is <= x, restricted to [degree, k-1]
    int span = k - 1;
    if (xi < hi) {
      const double* first = knots.data() + degree;
      const double* last = knots.data() + k + 1;
      span = static_cast<int>(std::upper_bound(first, last, xi) - knots.data()) - 1;
      span = std::clamp(span, degree, k - 1);
    }
    detail::basis_funs(span, xi, degree, knots, vals);
    for (int j = 0; j <= degree; ++j) out.design(i, span - degree + j) = vals[static_cast<std::size_t>(j)];
  }
  return out;
}

inline Vec make_knots(const Vec& x, const BasisSpec& spec) {
  spec.validate();
  if (x.size() == 0) throw Error(ErrorKind::InvalidArgument, "basis", "empty abscissa vector");
  const double lo = spec.boundary ? spec.boundary->first : x.minCoeff();
  const double hi = spec.boundary ? spec.boundary->second : x.maxCoeff();
  if (!(lo < hi)) throw Error(ErrorKind::DegenerateKnots, "basis", "abscissae have zero range");
  const int k = spec.num_basis;
  const int deg = spec.degree;
  const int interior = k - deg - 1;

  Vec knots(k + deg + 1);
  for (int j = 0; j <= deg; ++j) {
    knots(j) = lo;
    knots(k + j) = hi;
  }
  if (interior > 0) {
    std::vector<double> sorted;
    if (spec.knot_rule == KnotRule::quantile) {
      sorted.reserve(static_cast<std::size_t>(x.size()));
      for (Eigen::Index i = 0; i < x.size(); ++i) sorted.push_back(std::clamp(x(i), lo, hi));
      std::sort(sorted.begin(), sorted.end());
    }
    for (int j = 1; j <= interior; ++j) {
      const double prob = static_cast<double>(j) / static_cast<double>(interior + 1);
      knots(deg + j) = spec.knot_rule == KnotRule::quantile ? detail::sorted_quantile(sorted, prob)
                                                            : lo + prob * (hi - lo);
    }
    for (int j = deg; j < k; ++j) {
      if (!(knots(j) < knots(j + 1))) {
        throw Error(ErrorKind::DegenerateKnots, "basis",
                    "fewer than " + std::to_string(k) + " distinct knot locations; reduce num_basis");
      }
    }
  }
  return knots;
}

inline RawBasis bspline_design(const Vec& x, const BasisSpec& spec) {
  return bspline_eval(x, make_knots(x, spec), spec.degree);
}

// S = D'D for the (k - order) x k finite-difference operator D.
inline Mat diff_penalty(int k, int order = 2) {
  if (order < 1 || k <= order) {
    throw Error(ErrorKind::InvalidOrder, "basis", "difference penalty requires k > order >= 1");
  }
  Mat d = Mat::Identity(k, k);
  for (int o = 0; o < order; ++o) {
    Mat next = d.bottomRows(d.rows() - 1) - d.topRows(d.rows() - 1);
    d = std::move(next);
  }
  return d.transpose() * d;
}

struct SmoothBasis {
  DesignMatrix design;     // n x (k - 1), columns sum to zero over training data
  Mat penalty;             // (k - 1) x (k - 1)
  Vec knots;
  Mat center_transform;    // k x (k - 1)
  BasisSpec basis_spec;    // boundary resolved
  int penalty_order = 2;

  int num_coef() const { return static_cast<int>(center_transform.cols()); }

  struct Eval {
    Mat design;
    int clamped = 0;
  };

  Eval eval(const Vec& x) const {
    RawBasis raw = bspline_eval(x, knots, basis_spec.degree);
    return Eval{raw.design * center_transform, raw.clamped};
  }
};

// Sum-to-zero reparameterization: the constraint row c = 1'B is removed by a
// Householder reflection, leaving a k x (k-1) basis of its null space.
inline SmoothBasis center(const RawBasis& raw, const Mat& penalty, const BasisSpec& spec, int penalty_order = 2,
                          const std::string& label = "s") {
  const Eigen::Index k = raw.design.cols();
  if (penalty.rows() != k || penalty.cols() != k) {
    throw Error(ErrorKind::InvalidArgument, "basis", "penalty dimension does not match basis");
  }
  Vec c = raw.design.colwise().sum().transpose();
  Eigen::HouseholderQR<Mat> qr{Mat(c)};
  Mat q = qr.householderQ() * Mat::Identity(k, k);
  Mat zc = q.rightCols(k - 1);

  SmoothBasis sb;
  sb.center_transform = zc;
  sb.knots = raw.knots;
  sb.basis_spec = spec;
  sb.basis_spec.boundary = std::make_pair(raw.knots(spec.degree), raw.knots(k));
  sb.penalty_order = penalty_order;
  Mat pen = zc.transpose() * penalty * zc;
  sb.penalty = 0.5 * (pen + pen.transpose());

  std::vector<std::string> labels;
  for (Eigen::Index j = 0; j < k - 1; ++j) labels.push_back(label + "." + std::to_string(j + 1));
  // same product eval() forms, so training-point predictions are bit-identical
  sb.design = DesignMatrix(raw.design * zc, std::move(labels));
  return sb;
}

// Builds the centered P-spline smooth for x in one step.
inline SmoothBasis make_smooth(const Vec& x, const BasisSpec& spec, int penalty_order = 2,
                               const std::string& label = "s") {
  RawBasis raw = bspline_design(x, spec);
  return center(raw, diff_penalty(spec.num_basis, penalty_order), spec, penalty_order, label);
}

}  // namespace nlmr

#endif  // NLMR_BASIS_HPP
