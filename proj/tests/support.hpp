#ifndef NLMR_TESTS_SUPPORT_HPP
#define NLMR_TESTS_SUPPORT_HPP

#include <optional>
#include <random>

#include "nlmr/error.hpp"
#include "nlmr/linmod.hpp"

namespace nlmr::testing {

inline Mat random_normal(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen) {
  std::normal_distribution<double> nd;
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(gen);
  return m;
}

inline Vec random_vec(Eigen::Index n, std::mt19937_64& gen) { return random_normal(n, 1, gen).col(0); }

inline Mat with_intercept(const Mat& x) {
  Mat d(x.rows(), x.cols() + 1);
  d.col(0).setOnes();
  d.rightCols(x.cols()) = x;
  return d;
}

inline double correlation(const Vec& a, const Vec& b) {
  const Vec ac = a.array() - a.mean();
  const Vec bc = b.array() - b.mean();
  return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
}

// Kind of the nlmr::Error thrown by fn, or nullopt when nothing is thrown.
template <class Fn>
std::optional<ErrorKind> kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace nlmr::testing

#endif  // NLMR_TESTS_SUPPORT_HPP
