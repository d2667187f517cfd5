#ifndef ATTNFACTOR_FORECAST_HPP
#define ATTNFACTOR_FORECAST_HPP

#include <cstdint>
#include <vector>

#include "attnfactor/common.hpp"
#include "attnfactor/panels.hpp"

namespace attnfactor::fc {

// ---- Autoregression with BIC order selection -------------------------------

struct ArModel {
  int p = 0;
  double intercept = 0.0;
  Vector coeffs;  // phi_1 .. phi_p
  std::vector<std::pair<int, double>> bic_trace;
};

// Least-squares AR(p) fits for p = 0..p_max on a common effective sample
// (the first p_max observations are reserved as initial conditions);
// BIC = n ln(RSS/n) + k ln(n), ties resolved toward the smaller order.
ArModel fit_ar_bic(const std::vector<double>& y, int p_max);

// One-step-ahead linear prediction from the end of `history`.
double forecast_ar(const ArModel& model, const std::vector<double>& history);

// ---- Unrestricted MIDAS -----------------------------------------------------

struct MidasModel {
  int lags = 4;
  int r = 3;
  int horizon = 0;
  double intercept = 0.0;
  Vector coeffs;  // stacked per series, lag-major within series
  bool rank_fallback = false;  // minimal-norm solution used
};

// Regresses y_{t'+horizon} on x at high-frequency indices r(t'+1)-1-j,
// j = 0..lags-1 (the last `lags` high-frequency values of the quarter ending
// at t'), for every series of the high panel. Rank-deficient designs fall
// back to the minimal-norm least-squares solution and set rank_fallback.
MidasModel fit_midas_unrestricted(const std::vector<double>& y_low, const panels::Panel& x_high,
                                  int r, int lags = 4, int horizon = 0);

// Feature row for the quarter ending at low-frequency index t_prime.
Vector midas_features(const MidasModel& model, const panels::Panel& x_high, int t_prime);
double forecast_midas(const MidasModel& model, const panels::Panel& x_high, int t_prime);

// ---- OLS ---------------------------------------------------------------------

struct OlsModel {
  double intercept = 0.0;
  Vector coeffs;
  bool rank_fallback = false;
};

OlsModel fit_ols(const std::vector<double>& y, const Matrix& x);
double forecast_ols(const OlsModel& model, const Vector& x_row);

// ---- Small feedforward net on tabular inputs ---------------------------------

struct NnLiteHyper {
  int hidden = 16;  // 0 collapses the model to a linear map
  double lr = 1e-2;
  int batch_size = 16;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 1;
  double val_fraction = 0.1;  // trailing share of the sample used as validation
};

struct NnLiteModel {
  Matrix w1;  // hidden x in (empty when hidden == 0)
  Vector b1;
  Vector w2;  // output weights (hidden, or in when hidden == 0)
  double b2 = 0.0;
  int hidden = 0;
};

NnLiteModel fit_nn_lite(const std::vector<double>& y, const Matrix& x, const NnLiteHyper& hyper);
double forecast_nn_lite(const NnLiteModel& model, const Vector& x_row);

// ---- Metrics and comparison tests --------------------------------------------

struct MetricsReport {
  double rmse = 0.0;
  double mae = 0.0;
  double da = 0.0;  // share of matching signs, sign(0) treated as +
  int n_obs = 0;
};

MetricsReport metrics(const std::vector<double>& predictions, const std::vector<double>& actuals);

enum class DmLoss { Squared, Absolute };

struct DmTest {
  double statistic = 0.0;
  double p_value = 1.0;
  DmLoss loss = DmLoss::Squared;
  int hac_bandwidth = 0;
  bool degenerate = false;  // zero-variance loss differential
};

// Studentized mean loss differential L(e_a) - L(e_b) with a Newey-West
// long-run variance at bandwidth horizon - 1. Negative statistics favor
// the first forecast.
DmTest diebold_mariano(const std::vector<double>& errors_a, const std::vector<double>& errors_b,
                       DmLoss loss = DmLoss::Squared, int horizon = 1);

// {full, pre, post} index sets by forecast month; the pre subsample covers
// dates up to and including 2019-06.
struct SubsampleSplit {
  std::vector<int> full;
  std::vector<int> pre;
  std::vector<int> post;
};
SubsampleSplit subsample_split(const std::vector<std::int64_t>& month_indices);

}  // namespace attnfactor::fc

#endif
