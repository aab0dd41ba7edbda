#ifndef NLMR_ERROR_HPP
#define NLMR_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace nlmr {

enum class ErrorKind {
  InvalidArgument,
  NonFinite,
  RankDeficient,
  SingularSystem,
  NotConverged,
  QuasiSeparation,
  DegenerateKnots,
  InvalidOrder,
  NotIdentifiable,
  MethodMismatch,
  DerivativeUnavailable,
  SingularThetaCov,
  RankTooLow,
  TooFewDistinctExposures,
  InvalidPve,
  MissingColumn,
  NonNumericCell,
  EmptyAfterFiltering,
  ConfigInvalid,
  FileError,
  TooManyFailures,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::QuasiSeparation: return "QuasiSeparation";
    case ErrorKind::DegenerateKnots: return "DegenerateKnots";
    case ErrorKind::InvalidOrder: return "InvalidOrder";
    case ErrorKind::NotIdentifiable: return "NotIdentifiable";
    case ErrorKind::MethodMismatch: return "MethodMismatch";
    case ErrorKind::DerivativeUnavailable: return "DerivativeUnavailable";
    case ErrorKind::SingularThetaCov: return "SingularThetaCov";
    case ErrorKind::RankTooLow: return "RankTooLow";
    case ErrorKind::TooFewDistinctExposures: return "TooFewDistinctExposures";
    case ErrorKind::InvalidPve: return "InvalidPve";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::NonNumericCell: return "NonNumericCell";
    case ErrorKind::EmptyAfterFiltering: return "EmptyAfterFiltering";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::FileError: return "FileError";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
  }
  return "Unknown";
}

// Every failure raised by the library. `module` names the layer that raised
// it (linmod, basis, estimators, inference, spmr, simkit, io).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " [" + module + "]: " + what),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

}  // namespace nlmr

#endif  // NLMR_ERROR_HPP
