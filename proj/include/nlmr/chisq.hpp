#ifndef NLMR_CHISQ_HPP
#define NLMR_CHISQ_HPP

// Survival function of a positively weighted sum of independent chi-square
// variables, by numerical inversion of the characteristic function (Imhof's
// integral).

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "nlmr/error.hpp"

namespace nlmr {

struct ChisqTerm {
  double weight = 1.0;
  double df = 1.0;
};

struct WsumChisqResult {
  double p = 1.0;
  bool degraded = false;  // Satterthwaite moment matching was used
};

inline double chisq_sf(double t, double df) {
  if (t <= 0.0) return 1.0;
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), t));
}

namespace detail {

// Wynn's epsilon algorithm on a sequence of partial sums; returns the entry of
// the highest even column.
inline double wynn_epsilon(const std::vector<double>& s) {
  if (s.size() < 3) return s.back();
  std::vector<double> prev(s.size() + 1, 0.0);
  std::vector<double> cur = s;
  double best = s.back();
  for (std::size_t k = 1; cur.size() > 1; ++k) {
    std::vector<double> next(cur.size() - 1);
    for (std::size_t j = 0; j + 1 < cur.size(); ++j) {
      const double diff = cur[j + 1] - cur[j];
      if (diff == 0.0) return (k % 2 == 1) ? cur[j + 1] : best;
      next[j] = prev[j + 1] + 1.0 / diff;
    }
    if ((k + 1) % 2 == 0) best = next.back();
    prev = std::move(cur);
    cur = std::move(next);
  }
  return best;
}

inline double satterthwaite_sf(double t, const std::vector<ChisqTerm>& terms) {
  double mean = 0.0, var = 0.0;
  for (const auto& c : terms) {
    mean += c.weight * c.df;
    var += 2.0 * c.weight * c.weight * c.df;
  }
  const double scale = var / (2.0 * mean);
  const double df = 2.0 * mean * mean / var;
  return chisq_sf(t / scale, df);
}

// Chernoff bound min_s exp(-s t) prod (1 - 2 s w_j)^{-df_j / 2}; 1 when t is
// not above the mean.
inline double chernoff_bound(double t, const std::vector<ChisqTerm>& terms) {
  double mean = 0.0, wmax = 0.0;
  for (const auto& c : terms) {
    mean += c.weight * c.df;
    wmax = std::max(wmax, c.weight);
  }
  if (t <= mean) return 1.0;
  auto slope = [&](double s) {
    double g = -t;
    for (const auto& c : terms) g += c.df * c.weight / (1.0 - 2.0 * s * c.weight);
    return g;
  };
  double lo = 0.0, hi = 0.5 / wmax;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) < 0.0 ? lo : hi) = mid;
  }
  double log_bound = -lo * t;
  for (const auto& c : terms) log_bound -= 0.5 * c.df * std::log1p(-2.0 * lo * c.weight);
  return std::min(1.0, std::exp(log_bound));
}

}  // namespace detail

// P(sum_j w_j chi2_{df_j} > t). Integrates Imhof's oscillatory integrand over
// half-period panels of width 2 pi / t and extrapolates the alternating tail.
inline WsumChisqResult wsumchisq_sf(double t, const std::vector<ChisqTerm>& terms) {
  if (terms.empty()) throw Error(ErrorKind::InvalidArgument, "inference", "at least one chi-square term is required");
  for (const auto& c : terms) {
    if (!(c.weight > 0.0) || !(c.df > 0.0) || !std::isfinite(c.weight) || !std::isfinite(c.df)) {
      throw Error(ErrorKind::InvalidArgument, "inference", "chi-square terms need positive finite weight and df");
    }
  }
  if (!std::isfinite(t)) {
    if (t > 0.0) return {0.0, false};
    throw Error(ErrorKind::NonFinite, "inference", "non-finite quantile");
  }
  if (t <= 0.0) return {1.0, false};
  if (terms.size() == 1) return {chisq_sf(t / terms[0].weight, terms[0].df), false};
  // Far tail: the integral cannot resolve values below its own tolerance, and
  // the Chernoff bound is already tighter than that.
  if (const double bound = detail::chernoff_bound(t, terms); bound < 1e-11) return {bound, false};

  double total_df = 0.0, log_scale = 0.0, wmax = 0.0;
  for (const auto& c : terms) {
    total_df += c.df;
    log_scale += 0.5 * c.df * std::log(c.weight);
    wmax = std::max(wmax, c.weight);
  }

  auto integrand = [&](double u) {
    double theta = -0.5 * t * u;
    double log_rho = 0.0;
    for (const auto& c : terms) {
      theta += 0.5 * c.df * std::atan(c.weight * u);
      log_rho += 0.25 * c.df * std::log1p(c.weight * c.weight * u * u);
    }
    if (u < 1e-300) {
      double slope = -t;
      for (const auto& c : terms) slope += c.df * c.weight;
      return 0.5 * slope;
    }
    return std::sin(theta) / (u * std::exp(log_rho));
  };
  // |int_U^inf integrand| <= (2 / H) U^{-H/2} prod w_j^{-df_j/2}
  auto tail_bound = [&](double u) { return 2.0 / total_df * std::exp(-0.5 * total_df * std::log(u) - log_scale); };

  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  const double width = std::min(2.0 * std::numbers::pi / t, 2.0 * std::numbers::pi * 1e4 / wmax);
  constexpr int kMaxPanels = 4000;
  constexpr double kTol = 1e-11;

  std::vector<double> partial;
  std::vector<double> estimates;
  double sum = 0.0;
  double value = 0.0;
  bool done = false;
  for (int k = 0; k < kMaxPanels && !done; ++k) {
    const double a = k * width;
    const double b = a + width;
    sum += GK::integrate(integrand, a, b, 12, 1e-13);
    partial.push_back(sum);
    if (tail_bound(b) < kTol) {
      value = sum;
      done = true;
      break;
    }
    if (partial.size() >= 6) {
      const std::size_t take = std::min<std::size_t>(partial.size(), 21);
      std::vector<double> window(partial.end() - static_cast<std::ptrdiff_t>(take), partial.end());
      estimates.push_back(detail::wynn_epsilon(window));
      const std::size_t m = estimates.size();
      if (m >= 3 && std::abs(estimates[m - 1] - estimates[m - 2]) < kTol &&
          std::abs(estimates[m - 2] - estimates[m - 3]) < kTol) {
        value = estimates.back();
        done = true;
      }
    }
  }

  const double p = 0.5 + value / std::numbers::pi;
  if (!done || !std::isfinite(p) || p < -1e-6 || p > 1.0 + 1e-6) {
    return {detail::satterthwaite_sf(t, terms), true};
  }
  return {std::clamp(p, 0.0, 1.0), false};
}

}  // namespace nlmr

#endif  // NLMR_CHISQ_HPP
