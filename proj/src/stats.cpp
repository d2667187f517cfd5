#include "attnfactor/stats.hpp"

#include <algorithm>
#include <cmath>

namespace attnfactor {

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_two_sided_p(double z) {
  return std::min(1.0, 2.0 * (1.0 - normal_cdf(std::abs(z))));
}

KsResult ks_test_standard_normal(std::vector<double> sample) {
  KsResult r;
  const std::size_t n = sample.size();
  if (n == 0) return r;
  std::sort(sample.begin(), sample.end());
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double cdf = normal_cdf(sample[i]);
    double hi = (static_cast<double>(i) + 1.0) / n - cdf;
    double lo = cdf - static_cast<double>(i) / n;
    d = std::max(d, std::max(hi, lo));
  }
  r.statistic = d;
  // Asymptotic Kolmogorov distribution tail.
  double lambda = (std::sqrt(static_cast<double>(n)) + 0.12 + 0.11 / std::sqrt(static_cast<double>(n))) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    double term = 2.0 * std::pow(-1.0, j - 1) * std::exp(-2.0 * j * j * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  r.p_value = std::clamp(p, 0.0, 1.0);
  return r;
}

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit f;
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return f;
  double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = y[i] - f.intercept - f.slope * x[i];
      rss += e * e;
    }
    f.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  }
  return f;
}

Vector solve_least_squares(const Matrix& design, const Vector& target, bool* rank_deficient) {
  Eigen::JacobiSVD<Matrix> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  double tol = 1e-10 * svd.singularValues()(0) * std::max(design.rows(), design.cols());
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
    if (svd.singularValues()(i) > tol) ++rank;
  if (rank_deficient != nullptr)
    *rank_deficient = rank < std::min(design.rows(), design.cols());
  Vector inv_s = Vector::Zero(svd.singularValues().size());
  for (Eigen::Index i = 0; i < rank; ++i) inv_s(i) = 1.0 / svd.singularValues()(i);
  return svd.matrixV() * inv_s.asDiagonal() * svd.matrixU().transpose() * target;
}

}  // namespace attnfactor
