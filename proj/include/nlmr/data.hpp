#ifndef NLMR_DATA_HPP
#define NLMR_DATA_HPP

#include <string>
#include <string_view>
#include <vector>

#include "nlmr/error.hpp"
#include "nlmr/linmod.hpp"

namespace nlmr {

enum class Family { gaussian, binomial };

inline std::string_view to_string(Family f) { return f == Family::gaussian ? "gaussian" : "binomial"; }

inline Family family_from_string(std::string_view s) {
  if (s == "gaussian") return Family::gaussian;
  if (s == "binomial") return Family::binomial;
  throw Error(ErrorKind::InvalidArgument, "estimators", "unknown outcome family '" + std::string(s) + "'");
}

// Observed columns: instruments Z (n x n1), covariates C (n x n2, possibly
// empty), exposure X and outcome Y.
struct DataSet {
  Mat Z;
  Mat C;
  Vec X;
  Vec Y;
  Family family = Family::gaussian;
  std::vector<std::string> iv_names;
  std::vector<std::string> covariate_names;
  std::string exposure_name = "x";
  std::string outcome_name = "y";

  Eigen::Index n() const { return X.size(); }
  Eigen::Index num_ivs() const { return Z.cols(); }
  Eigen::Index num_covariates() const { return C.cols(); }

  void validate() const {
    const Eigen::Index rows = X.size();
    if (rows == 0) throw Error(ErrorKind::InvalidArgument, "estimators", "empty data set");
    if (Y.size() != rows || Z.rows() != rows || (C.cols() > 0 && C.rows() != rows)) {
      throw Error(ErrorKind::InvalidArgument, "estimators", "data columns have inconsistent lengths");
    }
    if (Z.cols() < 1) throw Error(ErrorKind::InvalidArgument, "estimators", "at least one instrument is required");
    if (!X.allFinite() || !Y.allFinite() || !Z.allFinite() || (C.size() > 0 && !C.allFinite())) {
      throw Error(ErrorKind::NonFinite, "estimators", "data contain NaN or Inf");
    }
    if (family == Family::binomial) {
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (Y(i) != 0.0 && Y(i) != 1.0) {
          throw Error(ErrorKind::InvalidArgument, "estimators", "binomial outcome must be 0/1");
        }
      }
    }
  }

  std::string iv_name(Eigen::Index j) const {
    return j < static_cast<Eigen::Index>(iv_names.size()) ? iv_names[static_cast<std::size_t>(j)]
                                                          : "z" + std::to_string(j + 1);
  }
  std::string covariate_name(Eigen::Index j) const {
    return j < static_cast<Eigen::Index>(covariate_names.size()) ? covariate_names[static_cast<std::size_t>(j)]
                                                                 : "c" + std::to_string(j + 1);
  }
};

}  // namespace nlmr

#endif  // NLMR_DATA_HPP
