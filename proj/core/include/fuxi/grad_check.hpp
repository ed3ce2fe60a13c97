#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fuxi/array.hpp"

namespace fuxi {

enum class ErrorMetric {
  Coordinate,  // max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)
  Tensor,      // ‖a − n‖₂ / max(‖a‖₂, ‖n‖₂, floor)
};

struct GradCheckOptions {
  double step = 1e-4;        // central-difference step h
  double tolerance = 1e-6;   // pass threshold on the selected metric
  ErrorMetric metric = ErrorMetric::Coordinate;
  // Relative error is |a − n| / max(|a|, |n|, denominator_floor); the floor
  // keeps coordinates whose true gradient is zero from dividing by noise.
  double denominator_floor = 1e-8;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  double tensor_relative_error = 0.0;
  std::size_t worst_index = 0;
  double diff_sq = 0.0, analytic_sq = 0.0, numeric_sq = 0.0;
  std::size_t checked = 0;
  bool passed = true;
};

using ScalarFunction = std::function<double(const Array&)>;

double relative_error(double analytic, double numeric, double floor);

// Central differences (f(x+h·e_i) − f(x−h·e_i)) / 2h against `analytic`
// for every coordinate i. Throws EvaluationError when f is non-finite.
GradCheckReport grad_check(const ScalarFunction& f, const Array& x, const Array& analytic,
                           const GradCheckOptions& options = {});

// Same, restricted to the given coordinates.
GradCheckReport grad_check_subset(const ScalarFunction& f, const Array& x, const Array& analytic,
                                  const std::vector<std::size_t>& coordinates,
                                  const GradCheckOptions& options = {});

// Folds one coordinate comparison into a running report.
void record_comparison(GradCheckReport& report, std::size_t index, double analytic, double numeric,
                       const GradCheckOptions& options);

}  // namespace fuxi
