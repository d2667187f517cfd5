#include <doctest.h>

#include <cmath>

#include "attnfactor/forecast.hpp"
#include "attnfactor/rng.hpp"
#include "attnfactor/stats.hpp"

using namespace attnfactor;
using namespace attnfactor::fc;

namespace {

panels::Panel high_panel(const Matrix& values) {
  panels::Panel p;
  p.values = values;
  p.missing_mask = BoolMatrix::Constant(values.rows(), values.cols(), false);
  for (Eigen::Index t = 0; t < values.rows(); ++t) p.timestamps.push_back(t);
  for (Eigen::Index j = 0; j < values.cols(); ++j)
    p.meta.push_back(panels::SeriesMeta{static_cast<int>(j), "x" + std::to_string(j),
                                        panels::Frequency::High, ""});
  return p;
}

std::vector<double> ar1_path(double phi, int t, Rng& rng) {
  std::vector<double> y(t, 0.0);
  for (int i = 1; i < t; ++i) y[i] = phi * y[i - 1] + rng.normal();
  return y;
}

}  // namespace

TEST_CASE("fit_ar_bic: selects p=0 for white noise and p=1 for an AR(1) in most draws") {
  Rng rng(1);
  int white_correct = 0, ar1_correct = 0;
  const int reps = 200;
  for (int rep = 0; rep < reps; ++rep) {
    std::vector<double> wn(500);
    for (auto& v : wn) v = rng.normal();
    if (fit_ar_bic(wn, 4).p == 0) ++white_correct;
    std::vector<double> ar = ar1_path(0.9, 500, rng);
    if (fit_ar_bic(ar, 4).p == 1) ++ar1_correct;
  }
  CHECK(white_correct >= 160);  // >= 80%
  CHECK(ar1_correct >= 160);
}

TEST_CASE("fit_ar_bic: argument and degeneracy errors") {
  std::vector<double> constant(100, 3.0);
  CHECK_THROWS_AS(fit_ar_bic(constant, 2), NumericError);
  std::vector<double> tiny{1, 2, 1, 2, 1};
  CHECK_THROWS_AS(fit_ar_bic(tiny, 2), ArgumentError);
  std::vector<double> y(40);
  Rng rng(2);
  for (auto& v : y) v = rng.normal();
  CHECK_THROWS_AS(fit_ar_bic(y, 25), ArgumentError);
}

TEST_CASE("fit_ar_bic: selection is invariant to affine rescaling of y") {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> y = ar1_path(0.6, 200, rng);
    std::vector<double> scaled(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) scaled[i] = 3.5 * y[i] - 7.0;
    CHECK(fit_ar_bic(y, 3).p == fit_ar_bic(scaled, 3).p);
  }
}

TEST_CASE("forecast_ar: intercept-only and AR(1) hand case") {
  ArModel p0;
  p0.p = 0;
  p0.intercept = 1.25;
  CHECK(forecast_ar(p0, {5.0, 6.0}) == 1.25);

  ArModel p1;
  p1.p = 1;
  p1.intercept = 0.5;
  p1.coeffs = Vector::Constant(1, 0.8);
  CHECK(forecast_ar(p1, {1.0, 2.0, 3.0}) == doctest::Approx(0.5 + 0.8 * 3.0));

  ArModel zero;
  zero.p = 1;
  zero.intercept = 2.0;
  zero.coeffs = Vector::Zero(1);
  CHECK(forecast_ar(zero, {9.0}) == 2.0);
}

TEST_CASE("fit_midas_unrestricted: exact recovery of a known lag combination") {
  Rng rng(4);
  const int t_high = 120, n_series = 2, lags = 3;
  Matrix x(t_high, n_series);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  panels::Panel xp = high_panel(x);
  const int t_low = t_high / 3;
  std::vector<double> y(t_low, 0.0);
  // y_t' = 0.7 + 1.5 x1_{end} - 0.5 x1_{end-2} + 2 x2_{end-1}, noiseless.
  for (int tp = 0; tp < t_low; ++tp) {
    int end = 3 * (tp + 1) - 1;
    y[tp] = 0.7 + 1.5 * x(end, 0) - 0.5 * x(end - 2, 0) + 2.0 * x(end - 1, 1);
  }
  MidasModel model = fit_midas_unrestricted(y, xp, 3, lags);
  CHECK(model.intercept == doctest::Approx(0.7).epsilon(1e-8));
  CHECK(model.coeffs(0) == doctest::Approx(1.5).epsilon(1e-8));
  CHECK(model.coeffs(2) == doctest::Approx(-0.5).epsilon(1e-8));
  CHECK(model.coeffs(lags + 1) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK_FALSE(model.rank_fallback);
  for (int tp = 0; tp < t_low; ++tp)
    CHECK(forecast_midas(model, xp, tp) == doctest::Approx(y[tp]).epsilon(1e-8));
}

TEST_CASE("fit_midas_unrestricted with r=1, lags=1 coincides with OLS") {
  Rng rng(5);
  const int t = 60;
  Matrix x(t, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<double> y(t);
  for (int i = 0; i < t; ++i) y[i] = 0.3 * x(i, 0) - 1.1 * x(i, 2) + rng.normal(0.0, 0.1);
  panels::Panel xp = high_panel(x);
  MidasModel midas = fit_midas_unrestricted(y, xp, 1, 1);
  OlsModel ols = fit_ols(y, x);
  CHECK(midas.intercept == doctest::Approx(ols.intercept).epsilon(1e-10));
  for (int j = 0; j < 3; ++j)
    CHECK(midas.coeffs(j) == doctest::Approx(ols.coeffs(j)).epsilon(1e-10));
}

TEST_CASE("fit_midas_unrestricted matches a normal-equations oracle") {
  Rng rng(6);
  const int t_high = 90;
  Matrix x(t_high, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  panels::Panel xp = high_panel(x);
  const int t_low = 30;
  std::vector<double> y(t_low);
  for (auto& v : y) v = rng.normal();
  const int lags = 2;
  MidasModel model = fit_midas_unrestricted(y, xp, 3, lags);

  // Oracle: build the design by hand and solve the normal equations.
  Matrix design(t_low, 1 + 2 * lags);
  Vector target(t_low);
  for (int tp = 0; tp < t_low; ++tp) {
    int end = 3 * (tp + 1) - 1;
    design(tp, 0) = 1.0;
    for (int s = 0; s < 2; ++s)
      for (int j = 0; j < lags; ++j) design(tp, 1 + s * lags + j) = x(end - j, s);
    target(tp) = y[tp];
  }
  Vector beta = (design.transpose() * design).ldlt().solve(design.transpose() * target);
  CHECK(model.intercept == doctest::Approx(beta(0)).epsilon(1e-8));
  for (int j = 0; j < 2 * lags; ++j)
    CHECK(model.coeffs(j) == doctest::Approx(beta(1 + j)).epsilon(1e-8));
}

TEST_CASE("fit_ols: exact recovery and intercept-only degenerate design") {
  Rng rng(7);
  Matrix x(40, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<double> y(40);
  for (int i = 0; i < 40; ++i) y[i] = 2.0 - 0.5 * x(i, 0) + 1.5 * x(i, 1);
  OlsModel model = fit_ols(y, x);
  CHECK(model.intercept == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(model.coeffs(0) == doctest::Approx(-0.5).epsilon(1e-9));
  CHECK(model.coeffs(1) == doctest::Approx(1.5).epsilon(1e-9));

  Matrix constant = Matrix::Ones(20, 1);
  std::vector<double> y2(20, 4.0);
  OlsModel flat = fit_ols(y2, constant);  // collinear with the intercept
  CHECK(flat.rank_fallback);
  CHECK(forecast_ols(flat, Vector::Ones(1)) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("fit_nn_lite: deterministic given the seed; hidden=0 is a linear map") {
  Rng rng(8);
  Matrix x(60, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<double> y(60);
  for (int i = 0; i < 60; ++i) y[i] = 0.3 + x(i, 0) - 0.2 * x(i, 2) + rng.normal(0.0, 0.05);

  NnLiteHyper hyper;
  hyper.seed = 42;
  hyper.max_epochs = 50;
  NnLiteModel a = fit_nn_lite(y, x, hyper);
  NnLiteModel b = fit_nn_lite(y, x, hyper);
  CHECK(a.w2 == b.w2);
  CHECK(a.b2 == b.b2);

  NnLiteHyper lin_hyper = hyper;
  lin_hyper.hidden = 0;
  lin_hyper.max_epochs = 400;
  lin_hyper.lr = 5e-2;
  NnLiteModel lin = fit_nn_lite(y, x, lin_hyper);
  CHECK(lin.hidden == 0);
  // Linearity: predictions respect superposition exactly.
  Vector u = Vector::Ones(3), v = Vector::Zero(3);
  v(1) = 2.0;
  double lhs = forecast_nn_lite(lin, u + v) - lin.b2;
  double rhs = (forecast_nn_lite(lin, u) - lin.b2) + (forecast_nn_lite(lin, v) - lin.b2);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("fit_nn_lite: learns a constant target") {
  Rng rng(9);
  Matrix x(80, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  std::vector<double> y(80, 0.7);
  NnLiteHyper hyper;
  hyper.max_epochs = 300;
  hyper.lr = 2e-2;
  NnLiteModel model = fit_nn_lite(y, x, hyper);
  double pred = forecast_nn_lite(model, Vector::Zero(2));
  CHECK(std::abs(pred - 0.7) < 0.15);
}

TEST_CASE("metrics: exact hand cases and the sign convention") {
  MetricsReport perfect = metrics({1.0, -2.0}, {1.0, -2.0});
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.mae == 0.0);
  CHECK(perfect.da == 1.0);

  MetricsReport signs = metrics({1.0, -1.0}, {2.0, -3.0});
  CHECK(signs.da == 1.0);

  MetricsReport hand = metrics({1.0, 1.0}, {1.0, -1.0});
  CHECK(hand.rmse == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
  CHECK(hand.mae == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hand.da == doctest::Approx(0.5));

  // sign(0) treated as +.
  CHECK(metrics({0.0}, {1.0}).da == 1.0);
  CHECK(metrics({0.0}, {-1.0}).da == 0.0);
  CHECK_THROWS_AS(metrics({1.0}, {1.0, 2.0}), ArgumentError);
}

TEST_CASE("metrics: translation covariance of rmse/mae; DA stable without sign crossings") {
  Rng rng(10);
  std::vector<double> preds, actuals;
  for (int i = 0; i < 50; ++i) {
    preds.push_back(rng.normal(5.0, 1.0));   // all positive with high probability
    actuals.push_back(rng.normal(5.0, 1.0));
  }
  MetricsReport base = metrics(preds, actuals);
  std::vector<double> preds_c = preds, actuals_c = actuals;
  for (auto& v : preds_c) v += 2.0;
  for (auto& v : actuals_c) v += 2.0;
  MetricsReport shifted = metrics(preds_c, actuals_c);
  CHECK(shifted.rmse == doctest::Approx(base.rmse).epsilon(1e-12));
  CHECK(shifted.mae == doctest::Approx(base.mae).epsilon(1e-12));
  CHECK(shifted.da == base.da);  // no sign crossings by construction
}

TEST_CASE("diebold_mariano: degenerate, sign contract, antisymmetry and hand oracle") {
  std::vector<double> e(20);
  Rng rng(11);
  for (auto& v : e) v = rng.normal();

  DmTest same = diebold_mariano(e, e);
  CHECK(same.degenerate);
  CHECK(same.statistic == 0.0);
  CHECK(same.p_value == 1.0);

  std::vector<double> twice(e);
  for (auto& v : twice) v *= 2.0;
  DmTest better = diebold_mariano(e, twice);
  CHECK(better.statistic < 0.0);  // first forecast has lower loss

  std::vector<double> other(20);
  for (auto& v : other) v = rng.normal(0.0, 1.3);
  DmTest ab = diebold_mariano(e, other);
  DmTest ba = diebold_mariano(other, e);
  CHECK(ab.statistic == doctest::Approx(-ba.statistic).epsilon(1e-15));

  // Hand oracle at bandwidth 0 (horizon 1): t = mean(d) / sqrt(pvar(d)/n).
  std::vector<double> d(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) d[i] = e[i] * e[i] - other[i] * other[i];
  double expected = mean(d) / std::sqrt(variance(d) / d.size());
  CHECK(ab.statistic == doctest::Approx(expected).epsilon(1e-12));
  CHECK(ab.hac_bandwidth == 0);

  CHECK_THROWS_AS(diebold_mariano({1, 2, 3}, {1, 2, 4}), ArgumentError);

  DmTest abs_loss = diebold_mariano(e, twice, DmLoss::Absolute);
  CHECK(abs_loss.statistic < 0.0);
}

TEST_CASE("subsample_split: June 2019 lands in the pre subsample") {
  std::vector<std::int64_t> dates{2018 * 12 + 11, 2019 * 12 + 5, 2019 * 12 + 6, 2020 * 12 + 0};
  SubsampleSplit split = subsample_split(dates);
  CHECK(split.pre.size() == 2);   // 2018-12 and 2019-06
  CHECK(split.post.size() == 2);  // 2019-07 and 2020-01
  CHECK(split.full.size() == split.pre.size() + split.post.size());

  std::vector<std::int64_t> early{2000 * 12, 2001 * 12};
  CHECK(subsample_split(early).post.empty());
  std::vector<std::int64_t> unsorted{2020 * 12, 2019 * 12};
  CHECK_THROWS_AS(subsample_split(unsorted), ArgumentError);
}
