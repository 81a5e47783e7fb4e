#pragma once

#include <span>
#include <stdexcept>

namespace distlab {

struct StatsError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Ordinary least squares of y on x.
struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Throws StatsError on length mismatch, fewer than 3 points, non-finite
/// values, or constant x. Constant y gives slope 0 and R^2 = 0.
OlsFit ols_fit(std::span<const double> x, std::span<const double> y);

/// Coefficient of determination of the OLS fit of y on x.
double compute_r2(std::span<const double> x, std::span<const double> y);

double median(std::span<const double> values);

}  // namespace distlab
