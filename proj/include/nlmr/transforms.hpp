#ifndef NLMR_TRANSFORMS_HPP
#define NLMR_TRANSFORMS_HPP

#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>

#include "nlmr/error.hpp"
#include "nlmr/linmod.hpp"

namespace nlmr {

// Named scalar transform with an optional analytic derivative. Without one,
// derivative() falls back to central differences with step 1e-6 (1 + |x|).
class Transform {
 public:
  using Fn = std::function<double(double)>;

  Transform() : Transform("identity", [](double x) { return x; }, [](double) { return 1.0; }) {}
  Transform(std::string name, Fn fn, Fn deriv = {})
      : name_(std::move(name)), fn_(std::move(fn)), deriv_(std::move(deriv)) {}

  const std::string& name() const noexcept { return name_; }
  bool has_analytic_derivative() const noexcept { return static_cast<bool>(deriv_); }
  bool is_identity() const noexcept { return name_ == "identity"; }

  double operator()(double x) const { return fn_(x); }

  double derivative(double x) const {
    if (deriv_) return deriv_(x);
    const double h = 1e-6 * (1.0 + std::abs(x));
    const double d = (fn_(x + h) - fn_(x - h)) / (2.0 * h);
    if (!std::isfinite(d)) {
      throw Error(ErrorKind::DerivativeUnavailable, "estimators",
                  "finite-difference derivative of transform '" + name_ + "' is not finite");
    }
    return d;
  }

  Vec apply(const Vec& x) const { return x.unaryExpr([this](double v) { return fn_(v); }); }
  Vec derivative(const Vec& x) const { return x.unaryExpr([this](double v) { return derivative(v); }); }

 private:
  std::string name_;
  Fn fn_;
  Fn deriv_;
};

// Built-ins: identity (alias linear), square, quad3 = (x/3)^2 (alias
// scaled_square), sin, cos, exp3 = exp(x/3).
inline Transform transform_by_name(std::string_view name) {
  if (name == "identity" || name == "linear") return Transform();
  if (name == "square") {
    return {"square", [](double x) { return x * x; }, [](double x) { return 2.0 * x; }};
  }
  if (name == "quad3" || name == "scaled_square") {
    return {"quad3", [](double x) { return (x / 3.0) * (x / 3.0); }, [](double x) { return 2.0 * x / 9.0; }};
  }
  if (name == "sin") return {"sin", [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); }};
  if (name == "cos") return {"cos", [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); }};
  if (name == "exp3") {
    return {"exp3", [](double x) { return std::exp(x / 3.0); }, [](double x) { return std::exp(x / 3.0) / 3.0; }};
  }
  throw Error(ErrorKind::InvalidArgument, "estimators", "unknown transform '" + std::string(name) + "'");
}

}  // namespace nlmr

#endif  // NLMR_TRANSFORMS_HPP
