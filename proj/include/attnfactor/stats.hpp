#ifndef ATTNFACTOR_STATS_HPP
#define ATTNFACTOR_STATS_HPP

#include <vector>

#include "attnfactor/common.hpp"

namespace attnfactor {

double mean(const std::vector<double>& v);
// Population variance (1/n); the convention used by the DM test and the
// coverage studies.
double variance(const std::vector<double>& v);
double sample_variance(const std::vector<double>& v);  // 1/(n-1)

double normal_cdf(double x);
// Two-sided p-value for a standard normal statistic.
double normal_two_sided_p(double z);

// Kolmogorov-Smirnov test of `sample` against the standard normal.
// Returns {statistic, asymptotic p-value}.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
KsResult ks_test_standard_normal(std::vector<double> sample);

// Least-squares slope/intercept of y on x with the slope's standard error.
struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Minimal-norm least squares via SVD. `rank_deficient` reports whether the
// design lost rank at the given relative threshold.
Vector solve_least_squares(const Matrix& design, const Vector& target,
                           bool* rank_deficient = nullptr);

}  // namespace attnfactor

#endif
