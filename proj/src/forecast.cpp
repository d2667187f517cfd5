#include "attnfactor/forecast.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnfactor/io.hpp"
#include "attnfactor/nn_core.hpp"
#include "attnfactor/stats.hpp"

namespace attnfactor::fc {

ArModel fit_ar_bic(const std::vector<double>& y, int p_max) {
  const int t = static_cast<int>(y.size());
  require(p_max >= 0, "fit_ar_bic: p_max must be >= 0");
  require(t > p_max + 10, "fit_ar_bic: series too short for the requested order");
  require(p_max < t / 2, "fit_ar_bic: p_max must be below half the sample length");
  double var = variance(y);
  if (var <= 1e-300) throw NumericError("fit_ar_bic: constant series");

  const int n = t - p_max;  // common effective sample
  ArModel best;
  double best_bic = 0.0;
  std::vector<std::pair<int, double>> trace;
  for (int p = 0; p <= p_max; ++p) {
    Matrix design(n, p + 1);
    Vector target(n);
    for (int i = 0; i < n; ++i) {
      int row = p_max + i;
      design(i, 0) = 1.0;
      for (int j = 1; j <= p; ++j) design(i, j) = y[row - j];
      target(i) = y[row];
    }
    Vector beta = solve_least_squares(design, target);
    double rss = (target - design * beta).squaredNorm();
    double bic = n * std::log(std::max(rss / n, 1e-300)) + (p + 1) * std::log(static_cast<double>(n));
    trace.push_back({p, bic});
    if (p == 0 || bic < best_bic - 1e-12) {  // ties go to the smaller order
      best.p = p;
      best.intercept = beta(0);
      best.coeffs = beta.tail(p);
      best_bic = bic;
    }
  }
  best.bic_trace = trace;
  return best;
}

double forecast_ar(const ArModel& model, const std::vector<double>& history) {
  require(static_cast<int>(history.size()) >= model.p,
          "forecast_ar: history shorter than the AR order");
  double out = model.intercept;
  for (int j = 1; j <= model.p; ++j) out += model.coeffs(j - 1) * history[history.size() - j];
  return out;
}

namespace {

// Row of the high panel holding the last value of calendar quarter
// `t_prime`, where quarter 0 is the first complete quarter covered by the
// panel. Low-frequency vectors passed to the MIDAS fit are indexed on this
// clock.
Eigen::Index end_row_of_quarter(const panels::Panel& x_high, int r, int t_prime) {
  std::int64_t first_full_quarter = (x_high.timestamps.front() + r - 1) / r;
  std::int64_t target_month = (first_full_quarter + t_prime) * r + r - 1;
  for (Eigen::Index i = 0; i < x_high.rows(); ++i)
    if (x_high.timestamps[i] == target_month) return i;
  return -1;
}

}  // namespace

MidasModel fit_midas_unrestricted(const std::vector<double>& y_low, const panels::Panel& x_high,
                                  int r, int lags, int horizon) {
  require(r >= 1, "fit_midas_unrestricted: invalid frequency ratio");
  require(lags >= 1, "fit_midas_unrestricted: need at least one lag");
  require(!x_high.has_missing(), "fit_midas_unrestricted: high panel must be fully observed");
  for (std::size_t i = 1; i < x_high.timestamps.size(); ++i)
    require(x_high.timestamps[i] == x_high.timestamps[i - 1] + 1,
            "fit_midas_unrestricted: high panel must have a gap-free clock");
  const int n_series = static_cast<int>(x_high.cols());
  const int t_low = static_cast<int>(y_low.size());

  MidasModel model;
  model.lags = lags;
  model.r = r;
  model.horizon = horizon;

  std::vector<Vector> rows;
  std::vector<double> targets;
  for (int tp = 0; tp + horizon < t_low; ++tp) {
    Eigen::Index end_row = end_row_of_quarter(x_high, r, tp);
    if (end_row < 0 || end_row - (lags - 1) < 0) continue;
    Vector row(n_series * lags);
    for (int s = 0; s < n_series; ++s)
      for (int j = 0; j < lags; ++j) row(s * lags + j) = x_high.values(end_row - j, s);
    rows.push_back(row);
    targets.push_back(y_low[tp + horizon]);
  }
  require(rows.size() >= 2, "fit_midas_unrestricted: not enough usable quarters");

  Matrix design(rows.size(), n_series * lags + 1);
  Vector target(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    design(i, 0) = 1.0;
    design.row(i).tail(n_series * lags) = rows[i].transpose();
    target(i) = targets[i];
  }
  bool deficient = false;
  Vector beta = solve_least_squares(design, target, &deficient);
  model.rank_fallback = deficient;
  if (deficient) log_info("fit_midas_unrestricted: rank-deficient design, minimal-norm solution");
  model.intercept = beta(0);
  model.coeffs = beta.tail(n_series * lags);
  return model;
}

Vector midas_features(const MidasModel& model, const panels::Panel& x_high, int t_prime) {
  const int n_series = static_cast<int>(x_high.cols());
  Eigen::Index end_row = end_row_of_quarter(x_high, model.r, t_prime);
  require(end_row >= 0 && end_row - (model.lags - 1) >= 0,
          "midas_features: quarter has insufficient high-frequency history");
  Vector row(n_series * model.lags);
  for (int s = 0; s < n_series; ++s)
    for (int j = 0; j < model.lags; ++j) row(s * model.lags + j) = x_high.values(end_row - j, s);
  return row;
}

double forecast_midas(const MidasModel& model, const panels::Panel& x_high, int t_prime) {
  return model.intercept + model.coeffs.dot(midas_features(model, x_high, t_prime));
}

OlsModel fit_ols(const std::vector<double>& y, const Matrix& x) {
  require(static_cast<Eigen::Index>(y.size()) == x.rows(), "fit_ols: length mismatch");
  require(x.rows() >= 2, "fit_ols: need at least two observations");
  Matrix design(x.rows(), x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  Vector target = Eigen::Map<const Vector>(y.data(), y.size());
  OlsModel model;
  bool deficient = false;
  Vector beta = solve_least_squares(design, target, &deficient);
  model.rank_fallback = deficient;
  model.intercept = beta(0);
  model.coeffs = beta.tail(x.cols());
  return model;
}

double forecast_ols(const OlsModel& model, const Vector& x_row) {
  return model.intercept + model.coeffs.dot(x_row);
}

NnLiteModel fit_nn_lite(const std::vector<double>& y, const Matrix& x, const NnLiteHyper& hyper) {
  require(static_cast<Eigen::Index>(y.size()) == x.rows(), "fit_nn_lite: length mismatch");
  require(x.rows() >= 4, "fit_nn_lite: sample too short");
  const int n = static_cast<int>(x.rows());
  const int in_dim = static_cast<int>(x.cols());
  int n_val = std::max(1, static_cast<int>(std::floor(hyper.val_fraction * n)));
  int n_train = n - n_val;
  require(n_train >= 2, "fit_nn_lite: no training data left after the validation split");

  Rng rng(hyper.seed);
  nn::Linear l1, l2;
  const int hidden = std::max(hyper.hidden, 0);
  if (hidden > 0) {
    l1.init(hidden, in_dim, rng);
    l2.init(1, hidden, rng);
  } else {
    l2.init(1, in_dim, rng);
  }

  auto predict_block = [&](const Matrix& block) {
    if (hidden > 0) {
      Matrix h = nn::activate(l1.forward(block), nn::Activation::Relu);
      return Matrix(l2.forward(h));
    }
    return Matrix(l2.forward(block));
  };

  Matrix x_train = x.topRows(n_train);
  Matrix x_val = x.bottomRows(n_val);
  Vector y_all = Eigen::Map<const Vector>(y.data(), y.size());
  Vector y_train = y_all.head(n_train);
  Vector y_val = y_all.tail(n_val);

  double best_val = std::numeric_limits<double>::infinity();
  nn::Linear best_l1 = l1, best_l2 = l2;
  int since_best = 0;
  std::vector<int> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hyper.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int start = 0; start < n_train; start += hyper.batch_size) {
      int bsz = std::min(hyper.batch_size, n_train - start);
      Matrix xb(bsz, in_dim);
      Vector yb(bsz);
      for (int i = 0; i < bsz; ++i) {
        xb.row(i) = x_train.row(order[start + i]);
        yb(i) = y_train(order[start + i]);
      }
      l1.zero_grad();
      l2.zero_grad();
      Matrix pre, hid;
      Matrix out;
      if (hidden > 0) {
        pre = l1.forward(xb);
        hid = nn::activate(pre, nn::Activation::Relu);
        out = l2.forward(hid);
      } else {
        out = l2.forward(xb);
      }
      Matrix d_out = 2.0 * (out - yb) / static_cast<double>(bsz);
      if (!out.allFinite()) throw NumericError("fit_nn_lite: non-finite forward pass");
      if (hidden > 0) {
        Matrix d_hid = l2.backward(hid, d_out);
        Matrix d_pre = nn::activate_backward(pre, d_hid, nn::Activation::Relu);
        l1.backward(xb, d_pre);
        l1.gd_step(hyper.lr);
      } else {
        l2.backward(xb, d_out);
      }
      l2.gd_step(hyper.lr);
    }
    double val_mse = (predict_block(x_val).col(0) - y_val).squaredNorm() / n_val;
    if (val_mse < best_val - 1e-12) {
      best_val = val_mse;
      best_l1 = l1;
      best_l2 = l2;
      since_best = 0;
    } else if (++since_best > hyper.patience) {
      break;
    }
  }

  NnLiteModel model;
  model.hidden = hidden;
  if (hidden > 0) {
    model.w1 = best_l1.w;
    model.b1 = best_l1.b;
  }
  model.w2 = best_l2.w.row(0).transpose();
  model.b2 = best_l2.b(0);
  return model;
}

double forecast_nn_lite(const NnLiteModel& model, const Vector& x_row) {
  if (model.hidden > 0) {
    Vector h = (model.w1 * x_row + model.b1).cwiseMax(0.0);
    return model.w2.dot(h) + model.b2;
  }
  return model.w2.dot(x_row) + model.b2;
}

MetricsReport metrics(const std::vector<double>& predictions, const std::vector<double>& actuals) {
  require(predictions.size() == actuals.size(), "metrics: length mismatch");
  require(!predictions.empty(), "metrics: empty inputs");
  MetricsReport report;
  report.n_obs = static_cast<int>(predictions.size());
  double sq = 0.0, ab = 0.0;
  int sign_hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double e = predictions[i] - actuals[i];
    sq += e * e;
    ab += std::abs(e);
    bool pred_pos = predictions[i] >= 0.0;  // sign(0) treated as +
    bool act_pos = actuals[i] >= 0.0;
    if (pred_pos == act_pos) ++sign_hits;
  }
  report.rmse = std::sqrt(sq / report.n_obs);
  report.mae = ab / report.n_obs;
  report.da = static_cast<double>(sign_hits) / report.n_obs;
  return report;
}

DmTest diebold_mariano(const std::vector<double>& errors_a, const std::vector<double>& errors_b,
                       DmLoss loss, int horizon) {
  require(errors_a.size() == errors_b.size(), "diebold_mariano: length mismatch");
  require(errors_a.size() >= 10, "diebold_mariano: need at least 10 observations");
  require(horizon >= 1, "diebold_mariano: horizon must be >= 1");
  const int n = static_cast<int>(errors_a.size());

  std::vector<double> d(n);
  for (int i = 0; i < n; ++i) {
    double la = loss == DmLoss::Squared ? errors_a[i] * errors_a[i] : std::abs(errors_a[i]);
    double lb = loss == DmLoss::Squared ? errors_b[i] * errors_b[i] : std::abs(errors_b[i]);
    d[i] = la - lb;
  }
  DmTest test;
  test.loss = loss;
  test.hac_bandwidth = horizon - 1;
  double d_bar = mean(d);
  double lrv = variance(d);  // gamma_0
  for (int l = 1; l <= test.hac_bandwidth; ++l) {
    double g = 0.0;
    for (int t = l; t < n; ++t) g += (d[t] - d_bar) * (d[t - l] - d_bar);
    g /= n;
    lrv += 2.0 * (1.0 - static_cast<double>(l) / (test.hac_bandwidth + 1)) * g;
  }
  if (lrv <= 1e-300) {
    test.degenerate = true;
    test.statistic = 0.0;
    test.p_value = 1.0;
    return test;
  }
  test.statistic = d_bar / std::sqrt(lrv / n);
  test.p_value = normal_two_sided_p(test.statistic);
  return test;
}

SubsampleSplit subsample_split(const std::vector<std::int64_t>& month_indices) {
  for (std::size_t i = 1; i < month_indices.size(); ++i)
    require(month_indices[i] >= month_indices[i - 1], "subsample_split: dates must be sorted");
  const std::int64_t cutoff = 2019 * 12 + 5;  // June 2019, inclusive in `pre`
  SubsampleSplit split;
  for (std::size_t i = 0; i < month_indices.size(); ++i) {
    split.full.push_back(static_cast<int>(i));
    if (month_indices[i] <= cutoff) {
      split.pre.push_back(static_cast<int>(i));
    } else {
      split.post.push_back(static_cast<int>(i));
    }
  }
  return split;
}

}  // namespace attnfactor::fc
