#include "fuxi/grad_check.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "fuxi/errors.hpp"

namespace fuxi {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

void record_comparison(GradCheckReport& report, std::size_t index, double analytic, double numeric,
                       const GradCheckOptions& options) {
  const double rel = relative_error(analytic, numeric, options.denominator_floor);
  const double abs_err = std::abs(analytic - numeric);
  ++report.checked;
  report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
  if (report.checked == 1 || rel > report.max_relative_error) {
    report.max_relative_error = rel;
    report.worst_index = index;
  }
  report.diff_sq += abs_err * abs_err;
  report.analytic_sq += analytic * analytic;
  report.numeric_sq += numeric * numeric;
  const double denom = std::max({std::sqrt(report.analytic_sq), std::sqrt(report.numeric_sq), options.denominator_floor});
  report.tensor_relative_error = std::sqrt(report.diff_sq) / denom;
  const double err =
      options.metric == ErrorMetric::Tensor ? report.tensor_relative_error : report.max_relative_error;
  report.passed = err < options.tolerance;
}

GradCheckReport grad_check_subset(const ScalarFunction& f, const Array& x, const Array& analytic,
                                  const std::vector<std::size_t>& coordinates, const GradCheckOptions& options) {
  require_same_shape(x, analytic, "grad_check");
  if (!(options.step > 0.0)) throw ConfigError("grad_check: step must be positive");
  GradCheckReport report;
  Array probe = x;
  for (std::size_t i : coordinates) {
    if (i >= x.size()) throw IndexError("grad_check: coordinate " + std::to_string(i) + " out of range");
    const double orig = probe[i];
    probe[i] = orig + options.step;
    const double plus = f(probe);
    probe[i] = orig - options.step;
    const double minus = f(probe);
    probe[i] = orig;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw EvaluationError("grad_check: function is not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * options.step);
    record_comparison(report, i, analytic[i], numeric, options);
  }
  return report;
}

GradCheckReport grad_check(const ScalarFunction& f, const Array& x, const Array& analytic,
                           const GradCheckOptions& options) {
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return grad_check_subset(f, x, analytic, all, options);
}

}  // namespace fuxi
